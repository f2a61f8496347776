from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, BeforeValidator, Field, model_validator

from app.exceptions import (
    DegenerateResponse,
    DimensionMismatch,
    EmptyCohort,
    InputError,
    RequirementUnmet,
)


class CohortRole(str, Enum):
    """Role a cohort plays in the analysis"""

    VALIDATION = "validation"
    RWD = "rwd"
    TARGET_SAMPLE = "target-sample"


ROLE_VALUES = tuple(role.value for role in CohortRole)


def _frozen(values: Any, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _as_array(values: Any) -> np.ndarray:
    return values if isinstance(values, np.ndarray) else np.asarray(values)


# ndarray field that also accepts nested lists and tuples
Array = Annotated[np.ndarray, BeforeValidator(_as_array)]


class Cohort(BaseModel):
    """Rectangular subject-level records for one data source.

    Arrays are copied and made read-only on construction so a cohort can be
    shared between worker threads.
    """

    x: Array
    y: Optional[Array] = None
    d: Optional[Array] = None
    design_weight: Optional[Array] = None
    role: CohortRole = CohortRole.VALIDATION
    column_names: List[str] = Field(default_factory=list)

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def validate_arrays(self) -> "Cohort":
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DimensionMismatch(f"x must be a matrix, got {x.ndim} dimensions")
        n, p = x.shape
        if n == 0:
            raise EmptyCohort("cohort has no rows")
        if not np.all(np.isfinite(x)):
            raise InputError("covariates must be finite")
        if not self.column_names:
            self.column_names = [f"x{k + 1}" for k in range(p)]
        if len(self.column_names) != p:
            raise DimensionMismatch(
                f"{len(self.column_names)} column names for {p} covariate columns"
            )
        self.x = _frozen(x)

        if self.y is not None:
            y = np.asarray(self.y, dtype=float).ravel()
            if y.shape[0] != n:
                raise DimensionMismatch(f"y has length {y.shape[0]}, expected {n}")
            self.y = _frozen(y)
        if self.d is not None:
            d = np.asarray(self.d).ravel()
            if d.shape[0] != n:
                raise DimensionMismatch(f"d has length {d.shape[0]}, expected {n}")
            if not np.all((d == 0) | (d == 1)):
                raise InputError("d must contain only 0 and 1")
            self.d = _frozen(d, dtype=np.int8)
        if self.design_weight is not None:
            w = np.asarray(self.design_weight, dtype=float).ravel()
            if w.shape[0] != n:
                raise DimensionMismatch(
                    f"design_weight has length {w.shape[0]}, expected {n}"
                )
            if not np.all(np.isfinite(w) & (w > 0)):
                raise InputError("design weights must be positive and finite")
            self.design_weight = _frozen(w)

        if self.role == CohortRole.VALIDATION and (self.y is None or self.d is None):
            raise InputError("a validation cohort needs both y and d")
        if self.role == CohortRole.RWD and self.d is None:
            raise InputError("an rwd cohort needs d")
        return self

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """Design weights, defaulting to 1 for every row."""
        if self.design_weight is None:
            return np.ones(self.n)
        return self.design_weight

    def require_both_classes(self) -> None:
        """Raise unless both response classes are present."""
        if self.d is None:
            raise RequirementUnmet(f"{self.role.value} cohort has no response column")
        n_pos = int(self.d.sum())
        if n_pos == 0 or n_pos == self.n:
            raise DegenerateResponse(
                f"{self.role.value} cohort needs both responders and non-responders",
                {"n": self.n, "responders": n_pos},
            )

    def take(self, indices: np.ndarray) -> "Cohort":
        """Return a new cohort made of the given rows (repeats allowed)."""
        indices = np.asarray(indices, dtype=np.intp)
        return Cohort(
            x=self.x[indices],
            y=None if self.y is None else self.y[indices],
            d=None if self.d is None else self.d[indices],
            design_weight=None
            if self.design_weight is None
            else self.design_weight[indices],
            role=self.role,
            column_names=list(self.column_names),
        )

    def with_role(self, role: CohortRole) -> "Cohort":
        """Return the same rows under another role."""
        return Cohort(
            x=self.x,
            y=self.y,
            d=self.d,
            design_weight=self.design_weight,
            role=role,
            column_names=list(self.column_names),
        )


class CombinedData(BaseModel):
    """Validation cohort plus optional patient-level RWD."""

    validation: Cohort
    rwd: Optional[Cohort] = None

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def check_schemas(self) -> "CombinedData":
        if self.rwd is not None:
            from app.cohort import check_compatibility

            check_compatibility(self.validation, self.rwd)
        return self


class WeightVector(BaseModel):
    """Per-subject nonnegative weights."""

    w: Array
    normalized: bool = False

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def validate_weights(self) -> "WeightVector":
        w = np.asarray(self.w, dtype=float).ravel()
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("weights must be finite and nonnegative")
        if self.normalized and abs(float(w.sum()) - 1.0) > 1e-12:
            w = w / w.sum()
        self.w = _frozen(w)
        return self

    def __len__(self) -> int:
        return self.w.shape[0]

    def normalize(self) -> "WeightVector":
        total = float(np.sum(self.w))
        if total <= 0:
            raise InputError("cannot normalize weights with zero total mass")
        return WeightVector(w=self.w / total, normalized=True)

    def effective_sample_size(self) -> float:
        """Kish effective sample size (sum w)^2 / sum w^2."""
        total = float(np.sum(self.w))
        return total**2 / float(np.sum(self.w**2))


class PointEstimate(BaseModel):
    """Ratio-form AUC estimate with its diagnostic pieces."""

    value: float
    numerator: float
    denominator: float
    effective_pairs: int
    diagnostics: Dict[str, Any] = Field(default_factory=dict)


class EstimateReport(BaseModel):
    """Point estimate with bootstrap standard error and interval."""

    estimator: str
    point: float
    se: float = Field(..., ge=0)
    ci_low: float
    ci_high: float
    ci_kind: Literal["normal", "percentile"] = "normal"
    n_boot: int
    n_boot_failed: int = 0
    seed: int
    unreliable: bool = False
    diagnostics: Dict[str, Any] = Field(default_factory=dict)


class DifferenceSummary(BaseModel):
    point: float
    se: float = Field(..., ge=0)
    ci_low: float
    ci_high: float


class ComparisonReport(BaseModel):
    """Two cohorts' AUCs benchmarked to a common target population."""

    benchmark: Literal["a", "b", "mixture"]
    auc_a: EstimateReport
    auc_b: EstimateReport
    difference: DifferenceSummary
    naive_difference: Optional[float] = None
