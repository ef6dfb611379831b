class BlindEqError(Exception):
    """Base class for library errors."""


class InvalidInputError(BlindEqError, ValueError):
    pass


class InvalidConfigError(BlindEqError, ValueError):
    pass


class DivergenceError(BlindEqError, ArithmeticError):
    """An adaptive filter produced non-finite taps."""

    def __init__(self, message: str, sample_index: int):
        super().__init__(message)
        self.sample_index = sample_index
