"""Exception types shared across the package."""


class SheatlabError(Exception):
    """Base class for all package errors."""


class ConfigError(SheatlabError, ValueError):
    """Invalid or inconsistent configuration.

    ``key`` and ``line`` locate the offending entry when known.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = ""
        if key is not None:
            where = f" [key {key!r}" + (f", line {line}" if line is not None else "") + "]"
        super().__init__(message + where)


class NonFinite(SheatlabError, FloatingPointError):
    """The solver produced NaN or Inf."""

    def __init__(self, step, cell, value):
        self.step = step
        self.cell = cell
        self.value = value
        super().__init__(f"non-finite value {value!r} at step {step}, cell {cell}")


class NonConvergence(SheatlabError, RuntimeError):
    """An iterative or refinement procedure failed to meet its tolerance."""


class InsufficientRange(SheatlabError, ValueError):
    """Too few points, or too narrow a span, to fit a scaling law."""


class NonPositive(SheatlabError, ValueError):
    """A statistic that must be positive (for a logarithm) was not."""
