"""Error taxonomy shared by every riskmmse module.

All domain errors derive from :class:`RiskMmseError` so callers (and the
CLI) can catch one base class and map it to a nonzero exit code while
letting programming errors propagate unchanged.
"""

__all__ = [
    "RiskMmseError",
    "UnknownKind",
    "InvalidParameter",
    "UnsupportedKind",
    "ZeroPosteriorMass",
    "QuadratureNotConverged",
    "NegativeMu",
    "NegativeRisk",
    "MultiplierCapExceeded",
    "GridTooCoarse",
]


class RiskMmseError(Exception):
    """Base class for all domain errors raised by this package."""


class UnknownKind(RiskMmseError):
    """Model config names a kind this package does not define."""


class InvalidParameter(RiskMmseError):
    """Model parameters fail validation (sign, shape, normalization)."""


class UnsupportedKind(RiskMmseError):
    """Operation is not defined for this model kind."""


class ZeroPosteriorMass(RiskMmseError):
    """The observation carries no posterior mass (outside model support)."""


class QuadratureNotConverged(RiskMmseError):
    """Self-convergence test failed after the configured refinements."""


class NegativeMu(RiskMmseError):
    """A multiplier argument was negative."""


class NegativeRisk(RiskMmseError):
    """Conditional risk evaluated below the allowed roundoff band."""


class MultiplierCapExceeded(RiskMmseError):
    """No multiplier below the cap meets the risk tolerance."""


class GridTooCoarse(RiskMmseError):
    """Brute-force grid search ended with its minimum on the boundary."""
