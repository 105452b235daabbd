"""Exception taxonomy shared across the package.

Everything derives from HardyLabError so callers (CLI, service) can map
failures onto exit codes: usage/config problems -> 2, numerical failures -> 3,
invariant violations -> 1.
"""


class HardyLabError(Exception):
    """Base class for all package errors."""


class UsageError(HardyLabError):
    """Bad configuration, bad arguments, inconsistent geometry."""


class MeshError(UsageError):
    pass


class RegionError(UsageError):
    """Region nesting / overlap violations."""


class NumericalError(HardyLabError):
    """A computation could not be completed (breakdown, divergence)."""


class SolverBreakdown(NumericalError):
    """Tridiagonal elimination hit a zero pivot."""

    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


class EigsolveError(NumericalError):
    pass


class UnderResolvedError(UsageError):
    """Mesh too coarse for the requested regularization (h > eps/10)."""


class InfeasibleError(NumericalError):
    """No admissible constant pair found (expected for supercritical mu)."""

    def __init__(self, msg, tried=None):
        super().__init__(msg)
        self.tried = tried if tried is not None else []


class PropertyViolation(HardyLabError):
    """A claimed mathematical property failed numerically (exit code 1)."""


class SingularTimeError(UsageError):
    """Carleman weight requested at t=0 or t=T where theta blows up."""
