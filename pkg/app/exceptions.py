from typing import Any, Dict, Optional


class ShiftAUCError(Exception):
    """Base exception for all shiftauc errors"""

    exit_code: int = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable error body used by the CLI."""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "details": self.details,
        }


class InputError(ShiftAUCError):
    """Raised when inputs violate a data or usage contract."""

    exit_code = 2


class NumericalError(ShiftAUCError):
    """Raised when a solver or model fit fails on otherwise valid input."""

    exit_code = 3


# Data ingestion


class MissingColumn(InputError):
    """A schema column is absent from the input file."""


class BadValue(InputError):
    """A cell could not be parsed; the row index is reported."""


class EmptyCohort(InputError):
    """A cohort has no usable rows."""


class DegenerateResponse(InputError):
    """The response indicator is constant (one class missing)."""


class SchemaMismatch(InputError):
    """Two cohorts do not share the same covariate columns in order."""


class DimensionMismatch(InputError):
    """A vector does not conform to the expected dimension."""


class MissingSummary(InputError):
    """A block of target summary statistics required by the feature map is absent."""


class IndexOutOfRange(InputError):
    """A subject index is invalid for the requested operation."""


class RequirementUnmet(InputError):
    """The supplied data do not satisfy the estimator's data requirements."""


class GroupTooSmall(InputError):
    """A response group has no more subjects than model parameters."""


class NoPairs(InputError):
    """No responder/non-responder pair carries positive weight."""


# Numerical failures


class InfeasibleTarget(NumericalError):
    """Target moments lie outside the convex hull of the cohort features."""


class MaxIterations(NumericalError):
    """An iterative solver hit its iteration limit before converging."""


class NumericalBreakdown(NumericalError):
    """A linear system stayed singular after the ridge fallback."""


class SeparationDetected(NumericalError):
    """Logistic MLE diverges because the classes are (quasi-)separated."""


class SingularDesign(NumericalError):
    """The logistic design matrix is rank deficient."""


class NonFiniteWeight(NumericalError):
    """An inverse-probability weight is infinite or NaN."""


class RankDeficientDesign(NumericalError):
    """An outcome-model design matrix is rank deficient."""


class DegenerateVariance(NumericalError):
    """Both residual scales are zero so the normal kernel is a step function."""


class TooManyFailures(NumericalError):
    """Too many bootstrap resamples failed for the report to be trusted."""
