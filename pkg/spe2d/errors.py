"""
Exception hierarchy for the spe2d package.

Every error raised on purpose by library code derives from ``Spe2dError`` so
the CLI can map it to an exit code without catching unrelated failures.
"""


class Spe2dError(Exception):
    """Base class for all spe2d errors."""


class ContractViolation(Spe2dError, ValueError):
    """Caller broke an operation's precondition (domain mismatch, bad tag, range)."""


class ConstraintViolation(Spe2dError, ValueError):
    """The vertical integral of a u-field does not vanish column by column."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class ConfigError(Spe2dError):
    """Invalid run configuration. ``key_path`` names the offending key."""

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path
        self.detail = message


class EigenSolverError(Spe2dError):
    """Block eigensolve failed or produced pairs outside tolerance."""

    def __init__(self, message: str, residuals: dict[str, float] | None = None):
        if residuals:
            shown = ", ".join(f"{k}={v:.3e}" for k, v in residuals.items())
            message = f"{message} ({shown})"
        super().__init__(message)
        self.residuals = residuals or {}


class SnapshotError(Spe2dError):
    """Missing, too coarse, or unreadable snapshot/basis/checkpoint data."""


class NumericalBlowup(Spe2dError):
    """A trajectory left the finite range. Raised only in strict mode."""

    def __init__(self, message: str, step: int, time: float):
        super().__init__(message)
        self.step = step
        self.time = time
