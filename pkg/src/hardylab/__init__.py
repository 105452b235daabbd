"""Numerical laboratory for 1-D heat control with an inverse-square
boundary potential: Hardy-type quadratic forms, spectral blow-up sweeps,
boundary-degenerate exponential weights, and HUM null control.
"""

__version__ = "0.1.0"

from .errors import (HardyLabError, InfeasibleError, NumericalError,
                     PropertyViolation, UsageError)

__all__ = [
    "__version__",
    "HardyLabError",
    "InfeasibleError",
    "NumericalError",
    "PropertyViolation",
    "UsageError",
]
