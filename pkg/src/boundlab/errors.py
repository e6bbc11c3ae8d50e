"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A config key is missing or violates a precondition of the target op."""


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its budget without meeting its tolerance."""


class BoundCheckError(RuntimeError):
    """A Monte Carlo estimate violated the bound it was checked against."""
