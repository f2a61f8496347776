"""Outcome-model estimators.

OM averages the model's pairwise probabilities over calibrated validation
pairs; OM+RWD averages them over the RWD's own responder/non-responder
pairs. The outcome model is always fitted on the validation cohort.
"""

from app.estimator.base import BaseEstimator, EstimatorTag, StudyData, weight_diagnostics
from app.estimator.ustat import om_weighted
from app.schema import PointEstimate


class OMEstimator(BaseEstimator):
    name: EstimatorTag = EstimatorTag.OM
    description: str = "Outcome model over calibration-weighted validation pairs"
    requires_target_moments: bool = True

    def compute(self, data: StudyData) -> PointEstimate:
        cal = self.calibrate(data)
        w = self.finalize_weights(cal.q_weights)
        fit = self.fit_outcome(data)
        result = om_weighted(data.validation, fit, w, block_size=self.options.block_size)
        result.diagnostics.update(weight_diagnostics(w))
        result.diagnostics.update({"sigma_1": fit.sigma_1, "sigma_0": fit.sigma_0})
        return result


class OMRWDEstimator(BaseEstimator):
    name: EstimatorTag = EstimatorTag.OM_RWD
    description: str = "Outcome model averaged over RWD pairs"
    requires_rwd_response: bool = True

    def compute(self, data: StudyData) -> PointEstimate:
        fit = self.fit_outcome(data)
        result = self.outcome_on_rwd(data)
        result.diagnostics.update({"sigma_1": fit.sigma_1, "sigma_0": fit.sigma_0})
        return result
