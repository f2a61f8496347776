import numpy as np
import pytest

from app.estimator import EstimatorKind, EstimatorOptions, EstimatorTag, StudyData, estimate
from app.exceptions import InputError, TooManyFailures
from app.inference import bootstrap, bootstrap_many, compare, stream
from app.schema import Cohort


def kind(tag, **options):
    return EstimatorKind(tag=EstimatorTag(tag), options=EstimatorOptions(**options))


def test_streams_are_reproducible():
    a = stream(7, 3, 0).integers(0, 1000, 5)
    assert a.tolist() == stream(7, 3, 0).integers(0, 1000, 5).tolist()
    assert a.tolist() != stream(7, 3, 1).integers(0, 1000, 5).tolist()


def test_thread_count_does_not_change_results(moderate_study):
    validation, rwd = moderate_study
    data = StudyData(validation=validation, rwd=rwd)

    serial = bootstrap(kind("cw"), data, n_boot=12, seed=5, threads=1)
    parallel = bootstrap(kind("cw"), data, n_boot=12, seed=5, threads=4)

    assert serial.model_dump() == parallel.model_dump()
    assert serial.se > 0
    assert serial.ci_low < serial.point < serial.ci_high
    assert serial.ci_high - serial.ci_low == pytest.approx(2 * 1.96 * serial.se)


def test_se_agrees_with_delong(moderate_study):
    validation, _ = moderate_study
    report = bootstrap(kind("naive"), StudyData(validation=validation), n_boot=400, seed=9)

    y1 = validation.y[validation.d == 1]
    y0 = validation.y[validation.d == 0]
    above = (y1[:, None] > y0[None, :]).astype(float)
    delong = np.sqrt(
        above.mean(axis=1).var(ddof=1) / y1.size + above.mean(axis=0).var(ddof=1) / y0.size
    )
    assert report.se == pytest.approx(delong, rel=0.2)


def test_shared_resamples_match_single_runs(moderate_study):
    validation, rwd = moderate_study
    data = StudyData(validation=validation, rwd=rwd)
    kinds = [kind("naive"), kind("ipsw"), kind("acw")]

    together = bootstrap_many(kinds, data, n_boot=6, seed=4, threads=2)

    for k, report in zip(kinds, together):
        alone = bootstrap(k, StudyData(validation=validation, rwd=rwd), n_boot=6, seed=4)
        assert report.model_dump() == alone.model_dump()


def test_percentile_interval(moderate_study):
    validation, _ = moderate_study
    report = bootstrap(kind("naive"), StudyData(validation=validation), 40, seed=1, ci="percentile")
    assert report.ci_kind == "percentile"
    assert report.ci_low < report.ci_high


def test_separated_groups_have_zero_se():
    """Tests that constant replicate values give se = 0 and a degenerate interval."""
    y = np.concatenate([np.arange(20.0) + 100, np.arange(20.0)])
    d = np.repeat([1, 0], 20)
    data = StudyData(validation=Cohort(x=np.zeros((40, 1)), y=y, d=d))

    report = bootstrap(kind("naive"), data, n_boot=30, seed=2)
    assert report.point == 1.0
    assert report.se == 0.0
    assert (report.ci_low, report.ci_high) == (1.0, 1.0)


def test_argument_checks(tiny_validation):
    data = StudyData(validation=tiny_validation)
    with pytest.raises(InputError):
        bootstrap(kind("naive"), data, n_boot=1, seed=0)
    with pytest.raises(InputError):
        bootstrap(kind("naive"), data, n_boot=10, seed=-1)


def test_failed_resamples(tiny_validation):
    """Tests that a third of resamples losing a class is fatal when strict."""
    data = StudyData(validation=tiny_validation)
    with pytest.raises(TooManyFailures):
        bootstrap(kind("naive"), data, n_boot=50, seed=0)

    report = bootstrap(kind("naive"), data, n_boot=50, seed=0, strict=False)
    assert report.point == 1.0
    assert report.unreliable
    assert 0 < report.n_boot_failed < 50


@pytest.fixture(scope="module")
def two_cohorts():
    def draw(rng, n, d_rate):
        x = rng.normal(size=(n, 2))
        d = (rng.uniform(size=n) < d_rate).astype(int)
        y = x[:, 0] + 0.7 * d + rng.normal(size=n)
        return Cohort(x=x, y=y, d=d, column_names=["x1", "x2"])

    rng = np.random.default_rng(17)
    return draw(rng, 300, 0.4), draw(rng, 250, 0.5)


def test_compare_identical_cohorts(two_cohorts):
    a, _ = two_cohorts
    report = compare(a, a, "mixture", kind("cw"), n_boot=10, seed=3)
    assert report.difference.point == 0.0
    assert report.naive_difference == 0.0
    assert report.auc_a.point == report.auc_b.point


def test_compare_benchmark_to_a(two_cohorts):
    a, b = two_cohorts
    report = compare(a, b, "a", kind("cw"), n_boot=5, seed=3)
    naive_a = estimate(kind("naive"), StudyData(validation=a)).value
    assert report.auc_a.point == pytest.approx(naive_a, rel=1e-9)
    assert report.difference.point == pytest.approx(report.auc_b.point - report.auc_a.point)


def test_mixture_is_symmetric(two_cohorts):
    a, b = two_cohorts
    forward = compare(a, b, "mixture", kind("cw"), n_boot=4, seed=8)
    backward = compare(b, a, "mixture", kind("cw"), n_boot=4, seed=8)
    assert forward.difference.point == -backward.difference.point
    assert forward.auc_a.point == backward.auc_b.point


def test_compare_rejects_unknown_benchmark(two_cohorts):
    a, b = two_cohorts
    with pytest.raises(InputError):
        compare(a, b, "median", kind("cw"), n_boot=4, seed=0)


def test_benchmarking_removes_spread_difference():
    """Tests that calibrating B's narrower covariates to A closes the naive gap."""
    rng = np.random.default_rng(99)
    n = 40_000

    def cohort(sd):
        x = rng.normal(0.0, sd, size=(n, 1))
        d = (rng.uniform(size=n) < 0.5).astype(int)
        y = x[:, 0] + d + rng.normal(0.0, 0.5, size=n)
        return Cohort(x=x, y=y, d=d, column_names=["x1"])

    a, b = cohort(1.0), cohort(np.sqrt(2.0 / 3.0))
    report = compare(a, b, "a", kind("cw"), n_boot=2, seed=0)

    assert report.naive_difference > 0.02
    assert abs(report.difference.point) < 0.015
