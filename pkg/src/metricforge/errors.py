"""Exception types shared across the package."""


class MetricForgeError(Exception):
    """Base class for errors raised by this package."""


class GramSizeError(MetricForgeError):
    """Materializing a dense pair Gram matrix would exceed the configured cap."""

    def __init__(self, n_pairs: int, cap: int):
        super().__init__(
            f"dense Gram matrix for {n_pairs} pairs exceeds the cap of {cap}; "
            f"use the on-the-fly kernel instead"
        )
        self.n_pairs = n_pairs
        self.cap = cap


class NumericalError(MetricForgeError):
    """A solver or decomposition reached a numerically invalid state."""


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its iteration budget."""


class ModelFormatError(MetricForgeError):
    """A model file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ModelIntegrityError(MetricForgeError):
    """A parsed model failed dimension, symmetry, or positive-semidefinite checks."""


class DataFormatError(MetricForgeError):
    """A dataset or pair file could not be parsed."""

    def __init__(self, message: str, path=None, line: int | None = None):
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)
        self.path = path
        self.line = line


class StratificationError(MetricForgeError):
    """A cross-validation split left some class with no training members."""
