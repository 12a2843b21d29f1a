class Entity:
    def __init__(self, ident):
        self.ident = ident

    def describe(self):
        return self.label()

    def label(self):
        return str(self.ident)
