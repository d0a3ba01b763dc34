"""Exception types raised across the package."""


class DecTdcError(Exception):
    """Base class for all package errors."""


class SupportViolation(DecTdcError, ValueError):
    """A behavior probability is zero where a ratio is required."""


class AssumptionViolation(DecTdcError, ValueError):
    """An instance breaks a standing modelling assumption (invertibility etc.)."""


class FeatureRankError(AssumptionViolation):
    """Feature generation could not produce a full-row-rank matrix."""


class ConvergenceError(DecTdcError, RuntimeError):
    """An iterative routine hit its iteration cap."""


class MixingFitError(DecTdcError, RuntimeError):
    """Total-variation distances do not decay geometrically over the horizon."""


class SpecError(DecTdcError, ValueError):
    """An experiment spec or topology file failed to parse or validate."""
