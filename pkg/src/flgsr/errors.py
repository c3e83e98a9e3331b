"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class NumericalFailure(ArithmeticError):
    """A solver produced non-finite values.

    ``sweep`` and ``outer`` carry the iteration indices at which the failure
    was detected (``None`` when not applicable).
    """

    def __init__(self, message, sweep=None, outer=None):
        super().__init__(message)
        self.sweep = sweep
        self.outer = outer


class PGMFormatError(ValueError):
    """Malformed PGM stream; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
