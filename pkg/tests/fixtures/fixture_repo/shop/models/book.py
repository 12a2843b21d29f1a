from shop.models.product import Product


class Book(Product):
    def label(self):
        return "book:" + super().label()

    def pages(self):
        return self.describe()
