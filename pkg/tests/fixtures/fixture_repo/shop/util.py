"""String helpers."""


def slugify(text):
    return normalize(text).replace(" ", "-")


def normalize(text):
    return text.strip().lower()
