"""Estimator registry and dispatch."""

from typing import Dict, Iterable, List, Union

from app.estimator.augmented import ACWEstimator, AIPSWEstimator
from app.estimator.base import (
    TAG_VALUES,
    BaseEstimator,
    EstimatorKind,
    EstimatorOptions,
    EstimatorTag,
    StudyData,
)
from app.estimator.outcome_based import OMEstimator, OMRWDEstimator
from app.estimator.weighting import CWEstimator, IPSWEstimator, NaiveEstimator
from app.exceptions import InputError
from app.logger import logger
from app.schema import PointEstimate


class EstimatorFactory:
    """Factory for creating estimators from an :class:`EstimatorKind`"""

    @staticmethod
    def create(kind: EstimatorKind) -> BaseEstimator:
        estimators = {
            EstimatorTag.NAIVE: NaiveEstimator,
            EstimatorTag.IPSW: IPSWEstimator,
            EstimatorTag.CW: CWEstimator,
            EstimatorTag.OM: OMEstimator,
            EstimatorTag.OM_RWD: OMRWDEstimator,
            EstimatorTag.ACW: ACWEstimator,
            EstimatorTag.AIPSW: AIPSWEstimator,
        }

        estimator_class = estimators.get(kind.tag)
        if not estimator_class:
            raise InputError(f"Unknown estimator: {kind.tag}")

        return estimator_class(options=kind.options)


class EstimatorCollection:
    """A named collection of configured estimators."""

    def __init__(self, *kinds: EstimatorKind):
        self.kinds: List[EstimatorKind] = []
        self.estimator_map: Dict[str, BaseEstimator] = {}
        self.add_kinds(*kinds)

    def __iter__(self):
        return iter(self.kinds)

    def __len__(self) -> int:
        return len(self.kinds)

    @property
    def labels(self) -> List[str]:
        return [kind.label for kind in self.kinds]

    def get(self, label: str) -> BaseEstimator:
        estimator = self.estimator_map.get(label)
        if estimator is None:
            raise InputError(f"Estimator {label} is not in the collection")
        return estimator

    def add_kind(self, kind: EstimatorKind):
        """Add one estimator; a label already present is skipped with a warning."""
        if kind.label in self.estimator_map:
            logger.warning(f"Estimator {kind.label} already exists in collection, skipping")
            return self
        self.kinds.append(kind)
        self.estimator_map[kind.label] = EstimatorFactory.create(kind)
        return self

    def add_kinds(self, *kinds: EstimatorKind):
        for kind in kinds:
            self.add_kind(kind)
        return self

    def estimate(self, label: str, data: StudyData) -> PointEstimate:
        return self.get(label)(data)

    def estimate_all(self, data: StudyData) -> Dict[str, PointEstimate]:
        """Run every estimator in insertion order."""
        return {kind.label: self.estimate(kind.label, data) for kind in self.kinds}


def parse_kinds(tags: Union[str, Iterable[str]], **option_overrides) -> List[EstimatorKind]:
    """Turn ``"naive,cw,acw"`` (or a list of tags) into estimator kinds."""
    if isinstance(tags, str):
        tags = [t for t in tags.split(",") if t.strip()]
    options = EstimatorOptions.from_config(**option_overrides)
    kinds = []
    for tag in tags:
        tag = tag.strip().lower()
        if tag not in TAG_VALUES:
            raise InputError(f"unknown estimator {tag!r}", {"known": list(TAG_VALUES)})
        kinds.append(EstimatorKind(tag=EstimatorTag(tag), options=options))
    return kinds


def estimate(kind: EstimatorKind, data: StudyData) -> PointEstimate:
    """Build the estimator for ``kind`` and run it on ``data``."""
    return EstimatorFactory.create(kind)(data)
