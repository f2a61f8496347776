"""Doubly robust estimators: ACW and AIPSW.

Both take a weighted estimator, subtract the outcome model evaluated with
the same weights and add the outcome model evaluated on the RWD:

    acw   = cw   - om(cw weights)   + om_rwd
    aipsw = ipsw - om(ipsw weights) + om_rwd

The primary value is unclamped and may leave [0, 1] in small samples; the
clamped value is kept as a diagnostic.
"""

from typing import Literal, Optional, Tuple

import numpy as np

from app.calibration import CalibrationSolution
from app.estimator.base import BaseEstimator, EstimatorTag, StudyData, weight_diagnostics
from app.estimator.ustat import DEFAULT_BLOCK, om_rwd, om_weighted, weighted_auc
from app.exceptions import RequirementUnmet
from app.outcome import OutcomeModelFit
from app.sampling import SamplingFit, ipsw_weights, truncate_normalize
from app.schema import CombinedData, PointEstimate, WeightVector


def _finalize(w: WeightVector, truncation: Optional[Tuple[float, float]]) -> WeightVector:
    if truncation is not None:
        return truncate_normalize(w, *truncation)
    return w.normalize()


def _augment(
    combined: CombinedData,
    w: WeightVector,
    fit: OutcomeModelFit,
    ties: str,
    block_size: int,
    weighted_label: str,
    om_target: Optional[PointEstimate] = None,
) -> PointEstimate:
    if combined.rwd is None or combined.rwd.d is None:
        raise RequirementUnmet("augmented estimators need RWD with covariates and response")
    v = combined.validation
    weighted = weighted_auc(v.y, v.d, w, ties)
    om = om_weighted(v, fit, w, block_size=block_size)
    if om_target is None:
        om_target = om_rwd(combined.rwd, fit, block_size=block_size)
    value = weighted.value - om.value + om_target.value
    return PointEstimate(
        value=value,
        numerator=value,
        denominator=1.0,
        effective_pairs=weighted.effective_pairs,
        diagnostics={
            "components": {
                weighted_label: weighted.value,
                "om": om.value,
                "om_rwd": om_target.value,
            },
            "clamped": float(np.clip(value, 0.0, 1.0)),
            **weight_diagnostics(w),
        },
    )


def acw(
    combined: CombinedData,
    cal: CalibrationSolution,
    fit: OutcomeModelFit,
    ties: Literal["strict", "half"] = "strict",
    truncation: Optional[Tuple[float, float]] = None,
    block_size: int = DEFAULT_BLOCK,
    om_target: Optional[PointEstimate] = None,
) -> PointEstimate:
    """Augmented calibration weighting: cw - om(cw weights) + om_rwd.

    ``om_target`` is a precomputed :func:`om_rwd` for the same fit.
    """
    w = _finalize(cal.q_weights, truncation)
    result = _augment(combined, w, fit, ties, block_size, "cw", om_target)
    result.diagnostics["calibration_residual"] = cal.residual
    return result


def aipsw(
    combined: CombinedData,
    sfit: SamplingFit,
    fit: OutcomeModelFit,
    ties: Literal["strict", "half"] = "strict",
    truncation: Optional[Tuple[float, float]] = None,
    block_size: int = DEFAULT_BLOCK,
    om_target: Optional[PointEstimate] = None,
) -> PointEstimate:
    """Augmented IPSW: ipsw - om(ipsw weights) + om_rwd."""
    w = _finalize(ipsw_weights(sfit, combined.validation.x), truncation)
    result = _augment(combined, w, fit, ties, block_size, "ipsw", om_target)
    result.diagnostics["sampling_deviance"] = sfit.deviance
    return result


class ACWEstimator(BaseEstimator):
    name: EstimatorTag = EstimatorTag.ACW
    description: str = "Augmented calibration weighting (doubly robust)"
    requires_rwd_response: bool = True
    requires_target_moments: bool = True

    def compute(self, data: StudyData) -> PointEstimate:
        return acw(
            data.combined,
            self.calibrate(data),
            self.fit_outcome(data),
            ties=self.options.ties,
            truncation=self.options.truncation,
            block_size=self.options.block_size,
            om_target=self.outcome_on_rwd(data),
        )


class AIPSWEstimator(BaseEstimator):
    name: EstimatorTag = EstimatorTag.AIPSW
    description: str = "Augmented inverse probability of sampling weighting (doubly robust)"
    requires_rwd_response: bool = True

    def compute(self, data: StudyData) -> PointEstimate:
        return aipsw(
            data.combined,
            self.fit_sampling(data),
            self.fit_outcome(data),
            ties=self.options.ties,
            truncation=self.options.truncation,
            block_size=self.options.block_size,
            om_target=self.outcome_on_rwd(data),
        )
