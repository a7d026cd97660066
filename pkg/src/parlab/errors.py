"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An object failed its structural invariants."""


class ConvergenceError(RuntimeError):
    """An iterative or linear solver missed its tolerance."""


class UnsupportedStateError(KeyError):
    """A conditional quantity was requested at a state the data never visits."""
