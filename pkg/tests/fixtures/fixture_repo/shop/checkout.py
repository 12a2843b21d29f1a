import json

from .cart import Cart


def checkout():
    cart = Cart()
    return format_total(cart.total())


def format_total(value):
    def fmt(x):
        return f"{x:.2f}"

    return json.dumps(fmt(value))
