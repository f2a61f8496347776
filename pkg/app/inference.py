"""Bootstrap inference and two-cohort benchmarking.

Replicate r draws from its own generator seeded with (seed, r, stream tag),
so results do not depend on thread count or scheduling. Replicate values
are gathered in index order before any reduction.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Literal, Optional, Sequence, Tuple, TypeVar

import numpy as np

from app.cohort import check_compatibility
from app.config import config
from app.estimator.base import EstimatorKind, EstimatorTag, StudyData
from app.estimator.collection import estimate
from app.exceptions import InputError, ShiftAUCError, TooManyFailures
from app.logger import logger
from app.schema import (
    Cohort,
    CohortRole,
    ComparisonReport,
    DifferenceSummary,
    EstimateReport,
    PointEstimate,
)


Z_975 = 1.96

STREAM_VALIDATION = 0
STREAM_RWD = 1
STREAM_COHORT_A = 2
STREAM_COHORT_B = 3

T = TypeVar("T")


def stream(seed: int, replicate: int, tag: int) -> np.random.Generator:
    """Independent generator for one (seed, replicate, purpose) triple."""
    return np.random.default_rng(np.random.SeedSequence([seed, replicate, tag]))


def _check_args(n_boot: int, seed: int) -> None:
    if n_boot < 2:
        raise InputError("n_boot must be at least 2", {"n_boot": n_boot})
    if seed < 0:
        raise InputError("seed must be a nonnegative integer", {"seed": seed})


def _run_replicates(
    job: Callable[[int], T], n_boot: int, threads: Optional[int]
) -> List[T]:
    workers = threads or config.bootstrap.threads or os.cpu_count() or 1
    if workers == 1:
        return [job(r) for r in range(n_boot)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, range(n_boot)))


def _spread(
    point: float, values: Sequence[float], ci: Literal["normal", "percentile"]
) -> Tuple[float, float, float]:
    """Sample SD of replicate values and the requested interval."""
    k = len(values)
    if max(values) == min(values):
        se = 0.0
    else:
        mean = math.fsum(values) / k
        se = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (k - 1))
    if ci == "percentile":
        lo, hi = np.percentile(np.asarray(values), [2.5, 97.5])
        return se, float(lo), float(hi)
    return se, point - Z_975 * se, point + Z_975 * se


def _check_failures(
    n_boot: int, failed: int, max_failure_rate: float, strict: bool, label: str
) -> bool:
    if n_boot - failed < 2:
        raise TooManyFailures(
            f"{label}: only {n_boot - failed} of {n_boot} bootstrap resamples succeeded",
            {"n_boot": n_boot, "n_boot_failed": failed},
        )
    unreliable = failed / n_boot > max_failure_rate
    if unreliable:
        if strict:
            raise TooManyFailures(
                f"{label}: {failed} of {n_boot} bootstrap resamples failed",
                {"n_boot": n_boot, "n_boot_failed": failed, "max_failure_rate": max_failure_rate},
            )
        logger.warning(f"{label}: {failed}/{n_boot} bootstrap resamples failed; report flagged")
    return unreliable


def _report(
    label: str,
    point: PointEstimate,
    values: Sequence[float],
    n_boot: int,
    failed: int,
    seed: int,
    ci: Literal["normal", "percentile"],
    unreliable: bool,
) -> EstimateReport:
    se, lo, hi = _spread(point.value, values, ci)
    diagnostics = {
        "numerator": point.numerator,
        "denominator": point.denominator,
        "effective_pairs": point.effective_pairs,
        **point.diagnostics,
    }
    return EstimateReport(
        estimator=label,
        point=point.value,
        se=se,
        ci_low=lo,
        ci_high=hi,
        ci_kind=ci,
        n_boot=n_boot,
        n_boot_failed=failed,
        seed=seed,
        unreliable=unreliable,
        diagnostics=diagnostics,
    )


def bootstrap_values(
    kinds: Sequence[EstimatorKind],
    data: StudyData,
    n_boot: int,
    seed: int,
    threads: Optional[int] = None,
) -> List[List[Optional[float]]]:
    """Replicate values per kind, ``None`` where that kind failed on a resample.

    Every kind is evaluated on the same resample r, so fits they have in
    common are made once per resample. Resample r depends only on
    (seed, r), which makes each kind's values identical to a bootstrap of
    that kind alone.
    """
    _check_args(n_boot, seed)

    def replicate(r: int) -> Tuple[Optional[float], ...]:
        resampled = data.resample(
            stream(seed, r, STREAM_VALIDATION), stream(seed, r, STREAM_RWD)
        )
        values: List[Optional[float]] = []
        for kind in kinds:
            try:
                values.append(estimate(kind, resampled).value)
            except ShiftAUCError as e:
                logger.warning(f"{kind.label} resample {r} failed: {type(e).__name__}: {e.message}")
                values.append(None)
        return tuple(values)

    results = _run_replicates(replicate, n_boot, threads)
    return [[res[i] for res in results] for i in range(len(kinds))]


def bootstrap_report(
    kind: EstimatorKind,
    point: PointEstimate,
    values: Sequence[Optional[float]],
    seed: int,
    ci: Optional[Literal["normal", "percentile"]] = None,
    strict: bool = True,
    max_failure_rate: Optional[float] = None,
) -> EstimateReport:
    """Fold one kind's replicate values from :func:`bootstrap_values` into a report."""
    ci = ci or config.bootstrap.ci
    max_failure_rate = (
        config.bootstrap.max_failure_rate if max_failure_rate is None else max_failure_rate
    )
    n_boot = len(values)
    kept = [v for v in values if v is not None]
    failed = n_boot - len(kept)
    unreliable = _check_failures(n_boot, failed, max_failure_rate, strict, kind.label)
    return _report(kind.label, point, kept, n_boot, failed, seed, ci, unreliable)


def bootstrap_many(
    kinds: Sequence[EstimatorKind],
    data: StudyData,
    n_boot: int,
    seed: int,
    ci: Optional[Literal["normal", "percentile"]] = None,
    threads: Optional[int] = None,
    strict: bool = True,
    max_failure_rate: Optional[float] = None,
) -> List[EstimateReport]:
    """:func:`bootstrap` for several kinds over one shared set of resamples."""
    _check_args(n_boot, seed)
    points = [estimate(kind, data) for kind in kinds]
    per_kind = bootstrap_values(kinds, data, n_boot, seed, threads)
    return [
        bootstrap_report(kind, point, values, seed, ci, strict, max_failure_rate)
        for kind, point, values in zip(kinds, points, per_kind)
    ]


def bootstrap(
    kind: EstimatorKind,
    data: StudyData,
    n_boot: int,
    seed: int,
    ci: Optional[Literal["normal", "percentile"]] = None,
    threads: Optional[int] = None,
    strict: bool = True,
    max_failure_rate: Optional[float] = None,
) -> EstimateReport:
    """Point estimate plus a nonparametric bootstrap SE and interval.

    The validation cohort and, when present, the RWD are resampled
    independently and every model is refitted inside each resample.
    Resamples that raise an estimator error count as failed and are
    excluded. Above ``max_failure_rate`` failures the call raises
    :class:`TooManyFailures`, or with ``strict=False`` flags the report
    as unreliable.
    """
    return bootstrap_many([kind], data, n_boot, seed, ci, threads, strict, max_failure_rate)[0]


def _pool(a: Cohort, b: Cohort) -> Cohort:
    """Stack both cohorts in a canonical row order so the pool ignores labelling."""
    x = np.vstack([a.x, b.x])
    y = np.concatenate([a.y, b.y])
    d = np.concatenate([a.d, b.d])
    order = np.lexsort(np.column_stack([x, y, d]).T[::-1])
    return Cohort(
        x=x[order],
        y=y[order],
        d=d[order],
        role=CohortRole.RWD,
        column_names=list(a.column_names),
    )


def _benchmark_study(
    cohort: Cohort, a: Cohort, b: Cohort, benchmark: Literal["a", "b", "mixture"]
) -> StudyData:
    if benchmark == "a":
        target = a.with_role(CohortRole.RWD)
    elif benchmark == "b":
        target = b.with_role(CohortRole.RWD)
    else:
        target = _pool(a, b)
    return StudyData(validation=cohort.with_role(CohortRole.VALIDATION), rwd=target)


def compare(
    cohort_a: Cohort,
    cohort_b: Cohort,
    benchmark: Literal["a", "b", "mixture"],
    kind: EstimatorKind,
    n_boot: int,
    seed: int,
    ci: Optional[Literal["normal", "percentile"]] = None,
    threads: Optional[int] = None,
    strict: bool = True,
) -> ComparisonReport:
    """Benchmark two cohorts' AUCs to a common target population.

    The benchmark population (cohort a, cohort b or their pooled rows)
    plays the RWD role for both cohorts. Both cohorts are resampled jointly
    in each replicate and the target is rebuilt from the resampled rows.
    """
    if benchmark not in ("a", "b", "mixture"):
        raise InputError(f"unknown benchmark {benchmark!r}")
    _check_args(n_boot, seed)
    check_compatibility(cohort_a, cohort_b)
    for name, c in (("a", cohort_a), ("b", cohort_b)):
        if c.y is None or c.d is None:
            raise InputError(f"cohort {name} needs y and d")
    ci = ci or config.bootstrap.ci

    def pair(a: Cohort, b: Cohort) -> Tuple[PointEstimate, PointEstimate]:
        return (
            estimate(kind, _benchmark_study(a, a, b, benchmark)),
            estimate(kind, _benchmark_study(b, a, b, benchmark)),
        )

    point_a, point_b = pair(cohort_a, cohort_b)
    naive = EstimatorKind(tag=EstimatorTag.NAIVE, options=kind.options)
    naive_difference = (
        estimate(naive, StudyData(validation=cohort_b.with_role(CohortRole.VALIDATION))).value
        - estimate(naive, StudyData(validation=cohort_a.with_role(CohortRole.VALIDATION))).value
    )

    def replicate(r: int) -> Optional[Tuple[float, float]]:
        rng_a, rng_b = stream(seed, r, STREAM_COHORT_A), stream(seed, r, STREAM_COHORT_B)
        a = cohort_a.take(rng_a.integers(0, cohort_a.n, cohort_a.n))
        b = cohort_b.take(rng_b.integers(0, cohort_b.n, cohort_b.n))
        try:
            est_a, est_b = pair(a, b)
        except ShiftAUCError as e:
            logger.warning(f"compare resample {r} failed: {type(e).__name__}: {e.message}")
            return None
        return est_a.value, est_b.value

    results = _run_replicates(replicate, n_boot, threads)
    kept = [res for res in results if res is not None]
    failed = n_boot - len(kept)
    unreliable = _check_failures(
        n_boot, failed, config.bootstrap.max_failure_rate, strict, f"compare {kind.label}"
    )
    values_a = [v[0] for v in kept]
    values_b = [v[1] for v in kept]
    report_a = _report(kind.label, point_a, values_a, n_boot, failed, seed, ci, unreliable)
    report_b = _report(kind.label, point_b, values_b, n_boot, failed, seed, ci, unreliable)

    diff_point = point_b.value - point_a.value
    se, lo, hi = _spread(diff_point, [vb - va for va, vb in kept], ci)
    logger.info(
        f"compare {kind.label} benchmark={benchmark}: a={point_a.value:.4f} "
        f"b={point_b.value:.4f} diff={diff_point:.4f} (naive {naive_difference:.4f})"
    )
    return ComparisonReport(
        benchmark=benchmark,
        auc_a=report_a,
        auc_b=report_b,
        difference=DifferenceSummary(point=diff_point, se=se, ci_low=lo, ci_high=hi),
        naive_difference=naive_difference,
    )
