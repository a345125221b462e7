"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class NumericError(RuntimeError):
    """Raised when a computation produces non-finite or unusable results."""
