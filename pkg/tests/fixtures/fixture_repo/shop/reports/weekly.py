from . import daily
from shop.util import *


def run_week():
    return [daily.run() for _ in range(7)]
