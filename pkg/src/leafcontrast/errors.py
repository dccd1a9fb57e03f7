"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when caller-supplied data or parameters violate a contract."""


class DivergenceError(RuntimeError):
    """Raised when an iterative optimisation produces non-finite values."""
