"""Exception and warning types raised by npsurvey."""


class NpSurveyError(Exception):
    """Base class for all npsurvey errors."""


class DimensionError(NpSurveyError, ValueError):
    """Array shapes do not match the covariate schema."""


class DomainError(NpSurveyError, ValueError):
    """A value lies outside its legal domain (e.g. y=2 for a binary family)."""


class ParseError(NpSurveyError, ValueError):
    """A data file could not be parsed; carries the offending location."""

    def __init__(self, message, row=None, col=None):
        self.row = row
        self.col = col
        where = []
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"column {col!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SchemaError(NpSurveyError, ValueError):
    """Column sets of the two samples disagree."""

    def __init__(self, message, columns=()):
        self.columns = frozenset(columns)
        super().__init__(message)


class ConfigError(NpSurveyError, ValueError):
    """An analysis or simulation configuration is invalid."""


class EstimationError(NpSurveyError, RuntimeError):
    """Base class for numerical failures during estimation."""


class SeparationError(EstimationError):
    """Binary outcome MLE diverges (perfect or quasi-complete separation)."""


class SingularError(EstimationError):
    """An information matrix is singular."""


class ConvergenceError(EstimationError):
    """Optimizer exhausted its budget; ``best`` holds the last iterate."""

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class NoRootError(EstimationError):
    """Calibration equations have no root within tolerance from any start."""


class HullViolationError(EstimationError):
    """EL targets lie outside the convex hull of the constraint functions."""


class InternalError(NpSurveyError, RuntimeError):
    """An invariant that should never fail did (e.g. NaN reaching a report)."""


class IdentifiabilityWarning(UserWarning):
    """Observed information is ill-conditioned; parameters weakly identified."""


class FlooringWarning(UserWarning):
    """A negative plug-in variance was floored at zero."""


class PseudoInverseWarning(UserWarning):
    """A near-singular matrix was inverted with a pseudo-inverse."""
