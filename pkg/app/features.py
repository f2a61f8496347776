"""Calibration functions g(X) and target-population moment vectors.

Feature order is fixed: main effects in column order, then squares of the
continuous columns in column order, then pairwise products in lexicographic
pair order. Second moments are raw E[X^2], not variances.
"""

import json
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.exceptions import (
    BadValue,
    DimensionMismatch,
    EmptyCohort,
    InputError,
    MissingSummary,
)
from app.schema import Array, Cohort


class FeatureKind(str, Enum):
    G1 = "g1_moments"
    G2 = "g2_moments_interactions"
    CUSTOM = "custom"


FEATURE_ALIASES = {
    "g1": FeatureKind.G1,
    "g2": FeatureKind.G2,
    "custom": FeatureKind.CUSTOM,
}


class Term(BaseModel):
    """One column of a design: a main effect, a square or a pairwise product."""

    kind: Literal["main", "square", "interaction"]
    columns: Tuple[int, ...]

    def label(self, names: Sequence[str]) -> str:
        if self.kind == "main":
            return names[self.columns[0]]
        if self.kind == "square":
            return f"{names[self.columns[0]]}^2"
        return f"{names[self.columns[0]]}*{names[self.columns[1]]}"

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "main":
            return x[:, self.columns[0]]
        if self.kind == "square":
            return x[:, self.columns[0]] ** 2
        return x[:, self.columns[0]] * x[:, self.columns[1]]


def parse_term(text: str, names: Sequence[str]) -> Term:
    """Parse ``x1``, ``x1^2`` or ``x1*x3`` against the column names."""
    index = {name: k for k, name in enumerate(names)}

    def lookup(name: str) -> int:
        name = name.strip()
        if name not in index:
            raise InputError(f"unknown covariate {name!r} in term {text!r}")
        return index[name]

    text = text.strip()
    if text.endswith("^2"):
        return Term(kind="square", columns=(lookup(text[:-2]),))
    if "*" in text:
        left, right = text.split("*", 1)
        i, j = sorted((lookup(left), lookup(right)))
        if i == j:
            return Term(kind="square", columns=(i,))
        return Term(kind="interaction", columns=(i, j))
    return Term(kind="main", columns=(lookup(text),))


def detect_continuous(x: np.ndarray) -> List[bool]:
    """A column is treated as binary when every value is 0 or 1."""
    x = np.asarray(x, dtype=float)
    return [not bool(np.all((x[:, k] == 0) | (x[:, k] == 1))) for k in range(x.shape[1])]


class FeatureMap(BaseModel):
    """The calibration function g(.) over named covariate columns."""

    kind: FeatureKind = FeatureKind.G1
    column_names: List[str]
    continuous_mask: List[bool] = Field(default_factory=list)
    terms: List[Term] = Field(default_factory=list)

    @model_validator(mode="after")
    def build_terms(self) -> "FeatureMap":
        p = len(self.column_names)
        if not self.continuous_mask:
            self.continuous_mask = [True] * p
        if len(self.continuous_mask) != p:
            raise DimensionMismatch(
                f"continuous_mask has {len(self.continuous_mask)} entries for {p} columns"
            )
        if self.kind == FeatureKind.CUSTOM:
            if not self.terms:
                raise InputError("a custom feature map needs at least one term")
            return self
        terms = [Term(kind="main", columns=(k,)) for k in range(p)]
        terms += [
            Term(kind="square", columns=(k,)) for k in range(p) if self.continuous_mask[k]
        ]
        if self.kind == FeatureKind.G2:
            terms += [Term(kind="interaction", columns=pair) for pair in combinations(range(p), 2)]
        self.terms = terms
        return self

    @classmethod
    def build(
        cls,
        kind: Union[FeatureKind, str],
        column_names: Sequence[str],
        x: Optional[np.ndarray] = None,
        continuous_mask: Optional[Sequence[bool]] = None,
    ) -> "FeatureMap":
        """Build g1/g2 with the continuous mask given or detected from ``x``."""
        kind = FEATURE_ALIASES.get(kind, kind) if isinstance(kind, str) else kind
        if continuous_mask is None:
            continuous_mask = detect_continuous(x) if x is not None else None
        return cls(
            kind=FeatureKind(kind),
            column_names=list(column_names),
            continuous_mask=list(continuous_mask or []),
        )

    @classmethod
    def from_terms(cls, terms: Sequence[str], column_names: Sequence[str]) -> "FeatureMap":
        parsed = [parse_term(t, column_names) for t in terms]
        return cls(kind=FeatureKind.CUSTOM, column_names=list(column_names), terms=parsed)

    @classmethod
    def main_effects(cls, column_names: Sequence[str]) -> "FeatureMap":
        return cls.from_terms(list(column_names), column_names)

    @property
    def p(self) -> int:
        return len(self.column_names)

    @property
    def q(self) -> int:
        return len(self.terms)

    @property
    def labels(self) -> List[str]:
        return [t.label(self.column_names) for t in self.terms]

    def design(self, x: np.ndarray) -> np.ndarray:
        """Evaluate g on every row of ``x`` (n x p) giving an n x q matrix."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.p:
            raise DimensionMismatch(f"expected {self.p} covariates, got {x.shape[1]}")
        return np.column_stack([t.evaluate(x) for t in self.terms])


def apply(feature_map: FeatureMap, x_row: Sequence[float]) -> np.ndarray:
    """g(x) for a single covariate row."""
    x_row = np.asarray(x_row, dtype=float).ravel()
    if x_row.shape[0] != feature_map.p:
        raise DimensionMismatch(f"expected {feature_map.p} covariates, got {x_row.shape[0]}")
    return feature_map.design(x_row.reshape(1, -1))[0]


class TargetMoments(BaseModel):
    """Target-population mean of g(X)."""

    g_tilde: Array
    source: Literal["rwd_empirical", "design_weighted", "user_summary"]
    feature_map: FeatureMap

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def check_vector(self) -> "TargetMoments":
        g = np.asarray(self.g_tilde, dtype=float).ravel()
        if g.shape[0] != self.feature_map.q:
            raise DimensionMismatch(
                f"g_tilde has length {g.shape[0]}, feature map has q={self.feature_map.q}"
            )
        if not np.all(np.isfinite(g)):
            raise InputError("target moments must be finite")
        self.g_tilde = g
        return self


def target_moments_from_cohort(feature_map: FeatureMap, target: Cohort) -> TargetMoments:
    """Design-weighted mean of g over the cohort rows."""
    if target.n == 0:
        raise EmptyCohort("target cohort has no rows")
    weights = target.weights
    g = feature_map.design(target.x)
    g_tilde = weights @ g / weights.sum()
    source = "rwd_empirical" if target.design_weight is None else "design_weighted"
    return TargetMoments(g_tilde=g_tilde, source=source, feature_map=feature_map)


class SummaryStatistics(BaseModel):
    """Published marginal summaries of the target population.

    Variances are population (divisor n) variances so that
    E[X^2] = variance + mean^2 holds exactly.
    """

    means: Dict[str, float]
    variances: Dict[str, float] = Field(default_factory=dict)
    interaction_means: Dict[str, float] = Field(default_factory=dict)

    @classmethod
    def from_json(cls, path: Union[str, Path], column_names: Sequence[str]) -> "SummaryStatistics":
        """Load ``{"means": ..., "variances": ..., "interaction_means": ...}``.

        Blocks may be objects keyed by covariate name (``"x1*x2"`` for
        interactions) or lists in column / lexicographic pair order.
        """
        path = Path(path)
        try:
            with path.open(encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError as e:
            raise InputError(f"{path}: no such file", {"path": str(path)}) from e
        except OSError as e:
            raise InputError(f"cannot read {path}: {e.strerror}", {"path": str(path)}) from e
        except UnicodeDecodeError as e:
            raise BadValue(f"{path.name}: not valid UTF-8 at byte {e.start}") from e
        except json.JSONDecodeError as e:
            raise BadValue(
                f"{path.name}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}",
                {"line": e.lineno, "column": e.colno},
            ) from e
        if not isinstance(raw, dict):
            raise BadValue(f"{path.name}: expected a JSON object of summary blocks")
        names = list(column_names)
        pairs = [f"{a}*{b}" for a, b in combinations(names, 2)]

        def number(value, label: str, key: str) -> float:
            try:
                return float(value)
            except (TypeError, ValueError) as e:
                raise BadValue(f"{label}[{key!r}] is not a number: {value!r}") from e

        def keyed(block, keys: List[str], label: str) -> Dict[str, float]:
            if block is None:
                return {}
            if not isinstance(block, (list, dict)):
                raise BadValue(f"{label} must be an object or a list")
            if isinstance(block, list):
                if len(block) != len(keys):
                    raise DimensionMismatch(
                        f"{label} has {len(block)} entries, expected {len(keys)}"
                    )
                return {k: number(v, label, k) for k, v in zip(keys, block)}
            unknown = sorted(set(block) - set(keys))
            if unknown:
                raise InputError(f"{label} names unknown covariates: {unknown}")
            return {k: number(v, label, k) for k, v in block.items()}

        if "means" not in raw:
            raise MissingSummary("summary file has no 'means' block")
        return cls(
            means=keyed(raw["means"], names, "means"),
            variances=keyed(raw.get("variances"), names, "variances"),
            interaction_means=keyed(raw.get("interaction_means"), pairs, "interaction_means"),
        )

    @classmethod
    def from_cohort(cls, cohort: Cohort) -> "SummaryStatistics":
        """Summaries of a cohort's own (design-weighted) covariate distribution."""
        w = cohort.weights / cohort.weights.sum()
        names = list(cohort.column_names)
        mu = w @ cohort.x
        var = w @ (cohort.x - mu) ** 2
        inter = {
            f"{names[i]}*{names[j]}": float(w @ (cohort.x[:, i] * cohort.x[:, j]))
            for i, j in combinations(range(cohort.p), 2)
        }
        return cls(
            means=dict(zip(names, map(float, mu))),
            variances=dict(zip(names, map(float, var))),
            interaction_means=inter,
        )


def target_moments_from_summary(
    feature_map: FeatureMap,
    means: Sequence[float],
    variances: Optional[Sequence[Optional[float]]] = None,
    interaction_means: Optional[Sequence[float]] = None,
) -> TargetMoments:
    """Assemble g~ from marginal summaries.

    ``interaction_means`` holds raw E[X_i X_j] for every pair in
    lexicographic order.
    """
    means = np.asarray(means, dtype=float).ravel()
    p = feature_map.p
    if means.shape[0] != p:
        raise DimensionMismatch(f"means has {means.shape[0]} entries, expected {p}")
    pair_index = {pair: k for k, pair in enumerate(combinations(range(p), 2))}

    g_tilde = []
    for term in feature_map.terms:
        if term.kind == "main":
            g_tilde.append(means[term.columns[0]])
        elif term.kind == "square":
            k = term.columns[0]
            if variances is None or variances[k] is None:
                raise MissingSummary(
                    f"variance of {feature_map.column_names[k]!r} is needed for its second moment"
                )
            g_tilde.append(float(variances[k]) + means[k] ** 2)
        else:
            if interaction_means is None:
                raise MissingSummary("interaction means are needed for pairwise features")
            if len(interaction_means) != len(pair_index):
                raise DimensionMismatch(
                    f"interaction_means has {len(interaction_means)} entries, "
                    f"expected {len(pair_index)}"
                )
            g_tilde.append(float(interaction_means[pair_index[term.columns]]))
    return TargetMoments(
        g_tilde=np.asarray(g_tilde), source="user_summary", feature_map=feature_map
    )


def target_moments_from_statistics(
    feature_map: FeatureMap, summary: SummaryStatistics
) -> TargetMoments:
    """Keyed-summary front end of :func:`target_moments_from_summary`."""
    names = feature_map.column_names
    missing = [n for n in names if n not in summary.means]
    if missing:
        raise MissingSummary(f"means missing for {missing}")
    means = [summary.means[n] for n in names]
    variances = [summary.variances.get(n) for n in names] if summary.variances else None
    interaction_means = None
    if summary.interaction_means:
        keys = [f"{a}*{b}" for a, b in combinations(names, 2)]
        absent = [k for k in keys if k not in summary.interaction_means]
        needed = any(t.kind == "interaction" for t in feature_map.terms)
        if absent and needed:
            raise MissingSummary(f"interaction means missing for {absent}")
        if not absent:
            interaction_means = [summary.interaction_means[k] for k in keys]
    return target_moments_from_summary(feature_map, means, variances, interaction_means)
