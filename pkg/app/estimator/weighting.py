"""Weighted Mann-Whitney estimators: Naive, IPSW and CW.

All three are ``weighted_auc`` with different per-subject weights; the
pairwise weight factors as w_i * w_j.
"""

from app.estimator.base import BaseEstimator, EstimatorTag, StudyData, weight_diagnostics
from app.estimator.ustat import weighted_auc
from app.sampling import ipsw_weights
from app.schema import PointEstimate


class NaiveEstimator(BaseEstimator):
    name: EstimatorTag = EstimatorTag.NAIVE
    description: str = "Unweighted AUC of the validation cohort"

    def compute(self, data: StudyData) -> PointEstimate:
        v = data.validation
        return weighted_auc(v.y, v.d, None, self.options.ties)


class IPSWEstimator(BaseEstimator):
    name: EstimatorTag = EstimatorTag.IPSW
    description: str = "Inverse probability of sampling weighting"
    requires_rwd: bool = True

    def compute(self, data: StudyData) -> PointEstimate:
        v = data.validation
        sfit = self.fit_sampling(data)
        w = self.finalize_weights(ipsw_weights(sfit, v.x))
        result = weighted_auc(v.y, v.d, w, self.options.ties)
        result.diagnostics.update(weight_diagnostics(w))
        result.diagnostics["sampling_deviance"] = sfit.deviance
        return result


class CWEstimator(BaseEstimator):
    name: EstimatorTag = EstimatorTag.CW
    description: str = "Entropy-balancing calibration weighting"
    requires_target_moments: bool = True

    def compute(self, data: StudyData) -> PointEstimate:
        v = data.validation
        cal = self.calibrate(data)
        w = self.finalize_weights(cal.q_weights)
        result = weighted_auc(v.y, v.d, w, self.options.ties)
        result.diagnostics.update(weight_diagnostics(w))
        result.diagnostics.update(
            {
                "calibration_residual": cal.residual,
                "calibration_iterations": cal.iterations,
                "lambda": cal.lam.tolist(),
            }
        )
        return result
