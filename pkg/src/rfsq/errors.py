"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates an operation's contract."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class FormatError(ValueError):
    """A serialized payload is malformed.

    Carries the byte offset at which decoding gave up, so corrupt files can
    be diagnosed without a hex editor.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
