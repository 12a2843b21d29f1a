"""Storefront package."""
from shop.util import slugify
