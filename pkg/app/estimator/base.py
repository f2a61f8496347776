import threading
from abc import ABC, abstractmethod
from enum import Enum
from typing import Any, Callable, Dict, Hashable, List, Literal, Optional, Tuple, TypeVar

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr, model_validator

from app.calibration import CalibrationSolution, solve
from app.config import SamplingSettings, SolverSettings, config
from app.estimator.ustat import om_rwd
from app.exceptions import DimensionMismatch, RequirementUnmet
from app.features import (
    FEATURE_ALIASES,
    FeatureKind,
    FeatureMap,
    SummaryStatistics,
    TargetMoments,
    target_moments_from_cohort,
    target_moments_from_statistics,
)
from app.logger import logger
from app.outcome import OutcomeBasis, OutcomeModelFit
from app.outcome import fit as fit_outcome_model
from app.sampling import SamplingFit, fit_sampling_model, truncate_normalize
from app.schema import Cohort, CombinedData, PointEstimate, WeightVector


class EstimatorTag(str, Enum):
    NAIVE = "naive"
    IPSW = "ipsw"
    CW = "cw"
    OM = "om"
    OM_RWD = "om_rwd"
    ACW = "acw"
    AIPSW = "aipsw"


TAG_VALUES = tuple(tag.value for tag in EstimatorTag)

T = TypeVar("T")


class EstimatorOptions(BaseModel):
    """Model choices shared by every estimator family."""

    feature_map: str = Field("g1", description="Calibration function: g1, g2 or custom")
    feature_terms: Optional[List[str]] = Field(
        None, description="Term list when feature_map is custom"
    )
    continuous_mask: Optional[List[bool]] = Field(
        None, description="Which covariates get squared terms (None = detect)"
    )
    sampling_basis: Optional[List[str]] = Field(
        None, description="Sampling-model terms (None = the calibration feature map)"
    )
    outcome_terms_1: Optional[List[str]] = Field(None, description="D=1 outcome-model terms")
    outcome_terms_0: Optional[List[str]] = Field(None, description="D=0 outcome-model terms")
    truncation: Optional[Tuple[float, float]] = Field(
        None, description="Lower/upper weight percentiles, None disables truncation"
    )
    ties: Literal["strict", "half"] = "strict"
    block_size: int = Field(512, gt=0)
    solver: Optional[SolverSettings] = None
    sampling: Optional[SamplingSettings] = None

    @model_validator(mode="after")
    def check_options(self) -> "EstimatorOptions":
        if self.feature_map not in FEATURE_ALIASES and self.feature_map not in {
            k.value for k in FeatureKind
        }:
            raise ValueError(f"unknown feature map {self.feature_map!r}")
        if self.truncation is not None:
            lo, hi = self.truncation
            if not 0 <= lo < hi <= 100:
                raise ValueError("truncation percentiles must satisfy 0 <= lower < upper <= 100")
        return self

    @classmethod
    def from_config(cls, **overrides: Any) -> "EstimatorOptions":
        """Defaults drawn from the loaded configuration, then overridden."""
        trunc = config.truncation
        values: Dict[str, Any] = {
            "sampling_basis": config.sampling.basis,
            "outcome_terms_1": config.outcome.basis_1,
            "outcome_terms_0": config.outcome.basis_0,
            "truncation": (trunc.lower_pct, trunc.upper_pct) if trunc.enabled else None,
            "ties": config.outcome.ties,
            "block_size": config.outcome.block_size,
        }
        values.update(overrides)
        return cls(**values)


class EstimatorKind(BaseModel):
    tag: EstimatorTag
    options: EstimatorOptions = Field(default_factory=EstimatorOptions)

    @property
    def label(self) -> str:
        if self.tag in (EstimatorTag.CW, EstimatorTag.OM, EstimatorTag.ACW):
            return f"{self.tag.value}({self.options.feature_map})"
        return self.tag.value


class StudyData(BaseModel):
    """Everything an estimator may draw on.

    ``rwd`` is patient-level target data (an RWD or target-sample cohort).
    Explicit ``target_moments`` take precedence over ``target_summary``,
    which takes precedence over the RWD's own moments.
    """

    validation: Cohort
    rwd: Optional[Cohort] = None
    target_summary: Optional[SummaryStatistics] = None
    target_moments: Optional[TargetMoments] = None

    # fitted pieces shared by the estimators that run on this data
    _memo: Dict[Hashable, Any] = PrivateAttr(default_factory=dict)
    _memo_lock: Any = PrivateAttr(default_factory=threading.Lock)

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def check_schemas(self) -> "StudyData":
        if self.rwd is not None:
            CombinedData(validation=self.validation, rwd=self.rwd)
        return self

    def memo(self, key: Hashable, build: Callable[[], T]) -> T:
        """Return ``build()``, computed at most once per key for this data.

        Failures are not cached; the next caller rebuilds and raises again.
        """
        with self._memo_lock:
            if key in self._memo:
                return self._memo[key]
        value = build()
        with self._memo_lock:
            return self._memo.setdefault(key, value)

    @property
    def combined(self) -> CombinedData:
        return CombinedData(validation=self.validation, rwd=self.rwd)

    @property
    def has_target_moments(self) -> bool:
        return any(v is not None for v in (self.target_moments, self.target_summary, self.rwd))

    def resample(self, rng_validation: np.random.Generator, rng_rwd: np.random.Generator):
        """Independent with-replacement resamples of both cohorts; summaries stay fixed."""
        validation = self.validation.take(
            rng_validation.integers(0, self.validation.n, self.validation.n)
        )
        rwd = None
        if self.rwd is not None:
            rwd = self.rwd.take(rng_rwd.integers(0, self.rwd.n, self.rwd.n))
        return StudyData(
            validation=validation,
            rwd=rwd,
            target_summary=self.target_summary,
            target_moments=self.target_moments,
        )


class BaseEstimator(ABC, BaseModel):
    """Base class for AUC estimators.

    Subclasses declare their data requirements and implement ``compute``;
    the shared model-building steps live here so the augmented estimators
    reuse exactly the same weights and fits as their components.
    """

    name: EstimatorTag
    description: str
    options: EstimatorOptions = Field(default_factory=EstimatorOptions)

    requires_rwd: bool = False
    requires_rwd_response: bool = False
    requires_target_moments: bool = False

    class Config:
        arbitrary_types_allowed = True

    def __call__(self, data: StudyData) -> PointEstimate:
        return self.estimate(data)

    def check_requirements(self, data: StudyData) -> None:
        tag = self.name.value
        if self.requires_rwd and data.rwd is None:
            raise RequirementUnmet(
                f"{tag} needs patient-level RWD covariates", {"estimator": tag}
            )
        if self.requires_rwd_response and (data.rwd is None or data.rwd.d is None):
            raise RequirementUnmet(
                f"{tag} needs patient-level RWD with covariates and response",
                {"estimator": tag},
            )
        if self.requires_target_moments and not data.has_target_moments:
            raise RequirementUnmet(
                f"{tag} needs target moments: a target summary, target moments or RWD",
                {"estimator": tag},
            )

    def estimate(self, data: StudyData) -> PointEstimate:
        self.check_requirements(data)
        data.validation.require_both_classes()
        result = self.compute(data)
        logger.debug(f"{self.name.value}: {result.value:.6f}")
        return result

    @abstractmethod
    def compute(self, data: StudyData) -> PointEstimate:
        """Estimate the target-population AUC."""

    # shared building blocks

    def feature_map(self, data: StudyData) -> FeatureMap:
        if data.target_moments is not None:
            return data.target_moments.feature_map
        names = data.validation.column_names
        if self.options.feature_map == "custom":
            if not self.options.feature_terms:
                raise RequirementUnmet("a custom feature map needs feature_terms")
            return FeatureMap.from_terms(self.options.feature_terms, names)
        return FeatureMap.build(
            self.options.feature_map,
            names,
            x=data.validation.x,
            continuous_mask=self.options.continuous_mask,
        )

    def target_moments(self, data: StudyData, feature_map: FeatureMap) -> TargetMoments:
        if data.target_moments is not None:
            return data.target_moments
        if data.target_summary is not None:
            return target_moments_from_statistics(feature_map, data.target_summary)
        if data.rwd is not None:
            return target_moments_from_cohort(feature_map, data.rwd)
        raise RequirementUnmet(f"{self.name.value} needs target moments")

    def _feature_key(self) -> Tuple:
        o = self.options
        return (o.feature_map, tuple(o.feature_terms or ()), tuple(o.continuous_mask or ()))

    def _outcome_key(self) -> Tuple:
        o = self.options
        return (tuple(o.outcome_terms_1 or ()), tuple(o.outcome_terms_0 or ()))

    def calibrate(self, data: StudyData) -> CalibrationSolution:
        solver = self.options.solver or config.solver
        key = ("calibration", self._feature_key(), solver.model_dump_json())
        return data.memo(key, lambda: self._calibrate(data, solver))

    def _calibrate(self, data: StudyData, solver: SolverSettings) -> CalibrationSolution:
        fmap = self.feature_map(data)
        moments = self.target_moments(data, fmap)
        if moments.feature_map.labels != fmap.labels:
            raise DimensionMismatch(
                "target moments were built for a different feature map",
                {"expected": fmap.labels, "got": moments.feature_map.labels},
            )
        g = fmap.design(data.validation.x)
        return solve(g, moments, solver)

    def fit_sampling(self, data: StudyData) -> SamplingFit:
        settings = self.options.sampling or config.sampling
        basis_key = tuple(self.options.sampling_basis or ()) or self._feature_key()
        key = ("sampling", basis_key, settings.model_dump_json())
        return data.memo(key, lambda: self._fit_sampling(data, settings))

    def _fit_sampling(self, data: StudyData, settings: SamplingSettings) -> SamplingFit:
        names = data.validation.column_names
        if self.options.sampling_basis:
            basis = FeatureMap.from_terms(self.options.sampling_basis, names)
        else:
            basis = self.feature_map(data)
        return fit_sampling_model(data.validation, data.rwd, basis, settings)

    def fit_outcome(self, data: StudyData) -> OutcomeModelFit:
        def build() -> OutcomeModelFit:
            validation = data.validation
            basis = OutcomeBasis.from_terms(
                validation.column_names, self.options.outcome_terms_1, self.options.outcome_terms_0
            )
            return fit_outcome_model(validation, basis)

        return data.memo(("outcome", self._outcome_key()), build)

    def outcome_on_rwd(self, data: StudyData) -> PointEstimate:
        """OM+RWD value for this estimator's outcome model; a fresh copy per call."""
        key = ("om_rwd", self._outcome_key(), self.options.block_size)
        result = data.memo(
            key,
            lambda: om_rwd(data.rwd, self.fit_outcome(data), block_size=self.options.block_size),
        )
        return result.model_copy(deep=True)

    def finalize_weights(self, w: WeightVector) -> WeightVector:
        """Optional quantile truncation, then normalization to sum 1."""
        if self.options.truncation is not None:
            return truncate_normalize(w, *self.options.truncation)
        return w.normalize()


def weight_diagnostics(w: WeightVector) -> Dict[str, float]:
    return {
        "effective_sample_size": w.effective_sample_size(),
        "max_weight": float(np.max(w.w) / np.sum(w.w)),
    }
