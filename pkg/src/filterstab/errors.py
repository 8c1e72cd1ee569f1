"""Exception types shared across the package."""


class InvalidModelError(ValueError):
    """A model description violates a structural constraint."""


class NumericalError(RuntimeError):
    """A numerical procedure failed: non-convergence, zero mass, underflow."""
