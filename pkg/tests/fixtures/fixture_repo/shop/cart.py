from shop import pricing


class Cart:
    def __init__(self):
        self.items = []

    def add(self, item):
        self.items.append(item)

    def total(self):
        return sum(pricing.price(i) for i in self.items)
