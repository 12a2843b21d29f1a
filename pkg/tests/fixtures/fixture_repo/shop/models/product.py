from shop.models.base import Entity
from shop.util import slugify


class Product(Entity):
    def __init__(self, ident, name):
        super().__init__(ident)
        self.name = name

    def label(self):
        return slugify(self.name)
