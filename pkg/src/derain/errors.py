class DerainError(Exception):
    def __init__(self, message):
        self.message = message

    def __str__(self):
        return f"{type(self).__name__}: {self.message}"


class ShapeError(DerainError):
    pass


def check_same_shape(a, b, what: str = "tensors"):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{what} differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
