from app.estimator.augmented import ACWEstimator, AIPSWEstimator, acw, aipsw
from app.estimator.base import (
    TAG_VALUES,
    BaseEstimator,
    EstimatorKind,
    EstimatorOptions,
    EstimatorTag,
    StudyData,
)
from app.estimator.collection import (
    EstimatorCollection,
    EstimatorFactory,
    estimate,
    parse_kinds,
)
from app.estimator.outcome_based import OMEstimator, OMRWDEstimator
from app.estimator.ustat import om_rwd, om_weighted, weighted_auc
from app.estimator.weighting import CWEstimator, IPSWEstimator, NaiveEstimator


__all__ = [
    "TAG_VALUES",
    "ACWEstimator",
    "AIPSWEstimator",
    "BaseEstimator",
    "CWEstimator",
    "EstimatorCollection",
    "EstimatorFactory",
    "EstimatorKind",
    "EstimatorOptions",
    "EstimatorTag",
    "IPSWEstimator",
    "NaiveEstimator",
    "OMEstimator",
    "OMRWDEstimator",
    "StudyData",
    "acw",
    "aipsw",
    "estimate",
    "om_rwd",
    "om_weighted",
    "parse_kinds",
    "weighted_auc",
]
