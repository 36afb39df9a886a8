"""Exception types raised across the package.

Every class derives from a built-in exception, so callers that only know
about ``ValueError`` or ``RuntimeError`` keep working.
"""

import numpy as np


class InvalidInputError(ValueError):
    """An argument is outside its documented domain."""


class InvalidShapeError(ValueError):
    """Tensor extents do not line up for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


class SchemaError(KeyError):
    """A column declared in the schema is missing from the input file."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else ""


class SingularSystemError(np.linalg.LinAlgError):
    """Normal equations cannot be solved even with ridge jitter."""


class DivergenceError(RuntimeError):
    """Training loss became NaN."""


class DegenerateVarianceError(ValueError):
    """A statistic is undefined because the values are constant."""


class IsolatedNodeError(ValueError):
    """A node without in-edges reached a strict attention layer."""
