"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Bad input: empty clouds, shape mismatch, out-of-range sizes."""


class InvalidState(RuntimeError):
    """Operation not legal in the current state (missing grads, wrong net kind)."""


class FormatError(ValueError):
    """Malformed binary file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
