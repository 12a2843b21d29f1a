from shop.checkout import checkout
from shop.util import normalize


def run():
    return normalize(str(checkout()))


if __name__ == "__main__":
    run()
