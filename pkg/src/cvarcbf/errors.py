"""Exception types shared across the package."""


class CvarCbfError(Exception):
    """Base class for all package-specific errors."""


class InvalidInput(CvarCbfError):
    """An argument is outside its documented domain."""


class DimensionMismatch(CvarCbfError):
    """Array shapes are inconsistent with each other or with a declared dimension."""


class NotPSD(CvarCbfError):
    """A matrix required to be positive semidefinite has an eigenvalue below -1e-10."""


class EpsilonTooLarge(CvarCbfError):
    """The empirical-band half-width reached 0.5, where the tail integral bound is undefined."""


class InvalidAlpha(CvarCbfError):
    """A tail level alpha is outside (0, 1) or incompatible with the band width."""


class InvalidShift(CvarCbfError):
    """A quantile shift B is outside the open interval (0, alpha)."""


class SupportViolated(CvarCbfError):
    """A sample exceeds the declared upper support bound."""


class BarrierNotAffine(CvarCbfError):
    """An operation requiring an affine barrier representation got a barrier without one."""


class SingularInnovation(CvarCbfError):
    """The measurement-update innovation covariance is numerically singular."""


class SolverFailure(CvarCbfError):
    """An optimization subroutine returned no usable answer; details in the message."""


class MissingColumns(CvarCbfError):
    """A CSV input lacks columns required to reconstruct per-step beliefs."""


class ConfigError(CvarCbfError):
    """An experiment configuration failed validation."""
