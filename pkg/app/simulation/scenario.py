"""Monte-Carlo scenario runner.

A scenario fixes the covariate-shift severity and which working models
(sampling, outcome) are correctly specified. Each replication draws a fresh
finite population, selects a biased validation cohort, draws a fresh RWD
sample and runs the ten-estimator grid, or a chosen subset of it.

A wrong working model leaves X1 out by default (terms x2 and x3 only);
``wrong_sampling_terms`` and ``wrong_outcome_terms`` pick another basis,
for example the main effects x1, x2, x3.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator

from app.config import config
from app.estimator.base import EstimatorKind, EstimatorOptions, EstimatorTag, StudyData
from app.estimator.collection import estimate
from app.exceptions import InputError, ShiftAUCError
from app.inference import bootstrap_report, bootstrap_values, stream
from app.logger import logger
from app.simulation.dgp import (
    OMIT_X1,
    OUTCOME_TERMS_0,
    OUTCOME_TERMS_1,
    SAMPLING_TERMS,
    DgpSpec,
    OracleAUC,
    generate_population,
    generate_rwd,
    select_validation,
    true_tau0,
)


SHIFT_ALPHAS: Dict[str, Tuple[float, float, float, float]] = {
    "none": (0.15, 0.0, 0.0, 0.0),
    "moderate": (0.15, 0.30, -0.10, 0.10),
    "severe": (0.15, 0.45, -0.25, 0.20),
}

# cell -> (sampling model correct, outcome model correct)
SPEC_CELLS: Dict[str, Tuple[bool, bool]] = {
    "both_correct": (True, True),
    "sm_correct_om_wrong": (True, False),
    "sm_wrong_om_correct": (False, True),
    "both_wrong": (False, False),
}

STREAM_DATA = 10
STREAM_BOOT = 11
STREAM_ORACLE = 12


class ScenarioSpec(BaseModel):
    shift: Literal["none", "moderate", "severe"]
    spec_cell: Literal["both_correct", "sm_correct_om_wrong", "sm_wrong_om_correct", "both_wrong"]
    n_reps: int = Field(200, gt=0)
    n_boot: int = Field(100, ge=0, description="0 disables the bootstrap (no SE, no coverage)")
    seed: int = Field(..., ge=0)
    dgp: Optional[DgpSpec] = None
    oracle_size: int = Field(2_000_000, gt=0)
    threads: Optional[int] = None
    estimators: Optional[List[str]] = Field(
        None, description="Labels or tags to run; None runs the whole grid"
    )
    wrong_sampling_terms: List[str] = Field(default_factory=lambda: list(OMIT_X1))
    wrong_outcome_terms: List[str] = Field(default_factory=lambda: list(OMIT_X1))

    @field_validator("wrong_sampling_terms", "wrong_outcome_terms", mode="before")
    @classmethod
    def default_terms(cls, value):
        return list(OMIT_X1) if value is None else value

    @model_validator(mode="after")
    def build_dgp(self) -> "ScenarioSpec":
        if self.n_boot == 1:
            raise ValueError("n_boot must be 0 or at least 2")
        alpha = SHIFT_ALPHAS[self.shift]
        if self.dgp is None:
            self.dgp = DgpSpec(sampling_alpha=alpha)
        elif tuple(self.dgp.sampling_alpha) != alpha:
            raise ValueError(f"sampling_alpha must be {alpha} for shift {self.shift!r}")
        if self.estimators is not None:
            select_kinds(scenario_kinds(self.spec_cell), self.estimators)
        return self

    @property
    def alpha(self) -> Tuple[float, float, float, float]:
        return SHIFT_ALPHAS[self.shift]


class MetricsRow(BaseModel):
    estimator: str
    mean_estimate: float
    bias: float
    relative_bias_pct: float
    mc_sd: float
    bias_over_se: float
    rmse: float
    coverage: Optional[float] = Field(None, ge=0, le=1)
    mean_se: Optional[float] = None
    n_ok: int
    n_failed: int


class ScenarioResult(BaseModel):
    scenario: ScenarioSpec
    tau0: OracleAUC
    metrics: List[MetricsRow]
    replicates: pd.DataFrame

    class Config:
        arbitrary_types_allowed = True


def scenario_kinds(
    spec_cell: str,
    wrong_sampling_terms: Sequence[str] = OMIT_X1,
    wrong_outcome_terms: Sequence[str] = OMIT_X1,
) -> List[EstimatorKind]:
    """Naive, IPSW, CW(g1), CW(g2), OM(g1), OM(g2), OM+RWD, AIPSW, ACW(g1), ACW(g2)."""
    sampling_ok, outcome_ok = SPEC_CELLS[spec_cell]
    base = EstimatorOptions(
        sampling_basis=SAMPLING_TERMS if sampling_ok else list(wrong_sampling_terms),
        outcome_terms_1=OUTCOME_TERMS_1 if outcome_ok else list(wrong_outcome_terms),
        outcome_terms_0=OUTCOME_TERMS_0 if outcome_ok else list(wrong_outcome_terms),
        truncation=None,
    )
    g2 = base.model_copy(update={"feature_map": "g2"})
    grid = [
        (EstimatorTag.NAIVE, base),
        (EstimatorTag.IPSW, base),
        (EstimatorTag.CW, base),
        (EstimatorTag.CW, g2),
        (EstimatorTag.OM, base),
        (EstimatorTag.OM, g2),
        (EstimatorTag.OM_RWD, base),
        (EstimatorTag.AIPSW, base),
        (EstimatorTag.ACW, base),
        (EstimatorTag.ACW, g2),
    ]
    return [EstimatorKind(tag=tag, options=opts) for tag, opts in grid]


def select_kinds(kinds: List[EstimatorKind], names: Sequence[str]) -> List[EstimatorKind]:
    """Kinds whose label or tag is in ``names``, in grid order.

    A tag such as ``cw`` selects both feature maps; ``cw(g2)`` selects one.
    """
    wanted = {name.strip().lower() for name in names}
    if not wanted:
        raise InputError("no scenario estimators selected")
    known = {k.label for k in kinds} | {k.tag.value for k in kinds}
    unknown = sorted(wanted - known)
    if unknown:
        raise InputError(f"unknown scenario estimators {unknown}", {"known": sorted(known)})
    return [k for k in kinds if k.label in wanted or k.tag.value in wanted]


def _row(r: int, label: str) -> dict:
    return {
        "replicate": r,
        "estimator": label,
        "estimate": math.nan,
        "se": math.nan,
        "ci_low": math.nan,
        "ci_high": math.nan,
        "error": "",
    }


def _replicate(scenario: ScenarioSpec, kinds: List[EstimatorKind], r: int) -> List[dict]:
    spec = scenario.dgp
    rng = stream(scenario.seed, r, STREAM_DATA)
    population = generate_population(spec, spec.n_pop, rng)
    validation = select_validation(population, scenario.alpha, spec.n_val, rng)
    rwd = generate_rwd(spec, rng)
    data = StudyData(validation=validation, rwd=rwd)
    boot_seed = int(np.random.SeedSequence([scenario.seed, r, STREAM_BOOT]).generate_state(1)[0])

    rows, points, ok = [], [], []
    for kind in kinds:
        row = _row(r, kind.label)
        try:
            point = estimate(kind, data)
            row["estimate"] = point.value
            points.append(point)
            ok.append(kind)
        except ShiftAUCError as e:
            logger.warning(f"replicate {r} {kind.label} failed: {type(e).__name__}: {e.message}")
            row["error"] = type(e).__name__
        rows.append(row)

    if scenario.n_boot >= 2 and ok:
        # one set of resamples serves every kind that has a point estimate
        per_kind = bootstrap_values(ok, data, scenario.n_boot, boot_seed, threads=1)
        by_label = {row["estimator"]: row for row in rows}
        for kind, point, values in zip(ok, points, per_kind):
            row = by_label[kind.label]
            try:
                report = bootstrap_report(kind, point, values, boot_seed, strict=False)
            except ShiftAUCError as e:
                logger.warning(f"replicate {r} {kind.label} bootstrap failed: {e.message}")
                row.update(estimate=math.nan, error=type(e).__name__)
                continue
            row.update(se=report.se, ci_low=report.ci_low, ci_high=report.ci_high)
    return rows


def _sd(values: List[float]) -> float:
    if len(values) < 2:
        return math.nan
    mean = math.fsum(values) / len(values)
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))


def summarize(replicates: pd.DataFrame, tau0: float, labels: List[str]) -> List[MetricsRow]:
    """Per-estimator bias, bias/SD, RMSE and coverage against ``tau0``."""
    metrics = []
    for label in labels:
        rows = replicates[replicates["estimator"] == label]
        ok = rows[rows["error"] == ""]
        values = ok["estimate"].tolist()
        n_ok = len(values)
        if n_ok == 0:
            logger.warning(f"{label}: every replication failed")
            continue
        mean = math.fsum(values) / n_ok
        bias = mean - tau0
        mc_sd = _sd(values)
        rmse = math.sqrt(math.fsum((v - tau0) ** 2 for v in values) / n_ok)
        with_ci = ok.dropna(subset=["ci_low", "ci_high"])
        coverage = mean_se = None
        if len(with_ci):
            covered = ((with_ci["ci_low"] <= tau0) & (tau0 <= with_ci["ci_high"])).tolist()
            coverage = sum(covered) / len(covered)
            mean_se = math.fsum(with_ci["se"].tolist()) / len(with_ci)
        metrics.append(
            MetricsRow(
                estimator=label,
                mean_estimate=mean,
                bias=bias,
                relative_bias_pct=100.0 * bias / tau0,
                mc_sd=mc_sd,
                bias_over_se=bias / mc_sd if mc_sd and mc_sd > 0 else math.nan,
                rmse=rmse,
                coverage=coverage,
                mean_se=mean_se,
                n_ok=n_ok,
                n_failed=len(rows) - n_ok,
            )
        )
    return metrics


def run_scenario(scenario: ScenarioSpec, tau0: Optional[OracleAUC] = None) -> ScenarioResult:
    """Run every replication of ``scenario`` and aggregate the metrics.

    Replications run in parallel; each draws from its own (seed, replicate)
    streams and results are folded in replicate order, so output does not
    depend on ``scenario.threads``.
    """
    if tau0 is None:
        tau0 = true_tau0(
            scenario.dgp, scenario.oracle_size, stream(scenario.seed, 0, STREAM_ORACLE)
        )
    logger.info(
        f"Scenario shift={scenario.shift} cell={scenario.spec_cell}: "
        f"{scenario.n_reps} reps, {scenario.n_boot} bootstrap, tau0={tau0.value:.4f}"
    )
    kinds = scenario_kinds(
        scenario.spec_cell, scenario.wrong_sampling_terms, scenario.wrong_outcome_terms
    )
    if scenario.estimators is not None:
        kinds = select_kinds(kinds, scenario.estimators)
    workers = scenario.threads or config.bootstrap.threads or os.cpu_count() or 1

    def job(r: int) -> List[dict]:
        return _replicate(scenario, kinds, r)

    if workers == 1:
        chunks = [job(r) for r in range(scenario.n_reps)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, range(scenario.n_reps)))
    replicates = pd.DataFrame([row for chunk in chunks for row in chunk])
    replicates.insert(0, "shift", scenario.shift)
    replicates.insert(1, "spec_cell", scenario.spec_cell)
    metrics = summarize(replicates, tau0.value, [k.label for k in kinds])
    logger.info(f"Scenario shift={scenario.shift} cell={scenario.spec_cell} finished")
    return ScenarioResult(scenario=scenario, tau0=tau0, metrics=metrics, replicates=replicates)
