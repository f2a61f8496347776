import json

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from app.exceptions import InputError
from app.simulation import (
    SHIFT_ALPHAS,
    SPEC_CELLS,
    DgpSpec,
    OracleAUC,
    ScenarioSpec,
    format_table,
    metrics_json,
    run_scenario,
    scenario_kinds,
    select_kinds,
    true_tau0,
)
from app.simulation.report import metrics_frame


TAU0 = OracleAUC(value=0.81, half_width=0.0005, size=2_000_000)


def small(shift="moderate", cell="both_correct", **overrides):
    values = dict(
        shift=shift,
        spec_cell=cell,
        n_reps=3,
        n_boot=0,
        seed=11,
        dgp=DgpSpec(sampling_alpha=SHIFT_ALPHAS[shift], n_pop=4000, n_val=400, m_rwd=1500),
    )
    values.update(overrides)
    return ScenarioSpec(**values)


def test_ten_estimator_grid():
    labels = [k.label for k in scenario_kinds("sm_wrong_om_correct")]
    assert labels == [
        "naive",
        "ipsw",
        "cw(g1)",
        "cw(g2)",
        "om(g1)",
        "om(g2)",
        "om_rwd",
        "aipsw",
        "acw(g1)",
        "acw(g2)",
    ]
    ipsw = scenario_kinds("sm_wrong_om_correct")[1]
    assert ipsw.options.sampling_basis == ["x2", "x3"]
    assert ipsw.options.outcome_terms_1[-2:] == ["x1^2", "x1*x3"]
    assert all(k.options.truncation is None for k in scenario_kinds("both_wrong"))
    assert set(SPEC_CELLS) == {"both_correct", "sm_correct_om_wrong", "sm_wrong_om_correct", "both_wrong"}


def test_wrong_models_are_configurable():
    main_effects = ["x1", "x2", "x3"]
    kinds = scenario_kinds("both_wrong", main_effects, ["x1"])
    assert kinds[1].options.sampling_basis == main_effects
    assert kinds[6].options.outcome_terms_1 == ["x1"]
    assert kinds[6].options.outcome_terms_0 == ["x1"]

    correct = scenario_kinds("both_correct", main_effects, main_effects)[7]
    assert correct.options.sampling_basis == ["x1^2", "x2^2", "x1*x3"]

    assert small(wrong_sampling_terms=None).wrong_sampling_terms == ["x2", "x3"]


def test_estimator_subset():
    kinds = scenario_kinds("both_correct")
    assert [k.label for k in select_kinds(kinds, ["acw(g1)", "naive", "CW"])] == [
        "naive",
        "cw(g1)",
        "cw(g2)",
        "acw(g1)",
    ]
    with pytest.raises(InputError):
        select_kinds(kinds, ["cw(g3)"])
    with pytest.raises(InputError):
        small(estimators=[])

    result = run_scenario(small(n_reps=2, estimators=["naive", "om_rwd"]), tau0=TAU0)
    assert [m.estimator for m in result.metrics] == ["naive", "om_rwd"]
    assert len(result.replicates) == 2 * 2


def test_subset_rows_match_full_grid():
    """Tests that sharing resamples across estimators leaves each one's numbers unchanged."""
    full = run_scenario(small(n_reps=2, n_boot=3), tau0=TAU0).replicates
    part = run_scenario(small(n_reps=2, n_boot=3, estimators=["ipsw"]), tau0=TAU0).replicates

    pd.testing.assert_frame_equal(
        full[full["estimator"] == "ipsw"].reset_index(drop=True), part.reset_index(drop=True)
    )


def test_scenario_spec_checks():
    with pytest.raises(ValidationError):
        small(n_boot=1)
    with pytest.raises(ValidationError):
        small(dgp=DgpSpec(sampling_alpha=SHIFT_ALPHAS["none"]))
    assert small(dgp=None).dgp.sampling_alpha == SHIFT_ALPHAS["moderate"]


def test_results_do_not_depend_on_threads():
    serial = run_scenario(small(threads=1), tau0=TAU0)
    parallel = run_scenario(small(threads=3), tau0=TAU0)

    pd.testing.assert_frame_equal(serial.replicates, parallel.replicates)
    assert [m.model_dump() for m in serial.metrics] == [m.model_dump() for m in parallel.metrics]
    assert len(serial.replicates) == 3 * 10


def test_metric_identities():
    result = run_scenario(small(n_reps=4), tau0=TAU0)
    for m in result.metrics:
        assert m.rmse >= abs(m.bias) - 1e-12
        assert m.bias == pytest.approx(m.mean_estimate - TAU0.value)
        assert m.relative_bias_pct == pytest.approx(100 * m.bias / TAU0.value)
        assert m.coverage is None and m.mean_se is None
        assert m.n_ok + m.n_failed == 4


def test_bootstrap_fills_coverage():
    result = run_scenario(small(n_reps=2, n_boot=4), tau0=TAU0)
    naive = result.metrics[0]
    assert naive.estimator == "naive"
    assert naive.coverage is not None and 0 <= naive.coverage <= 1
    assert naive.mean_se > 0
    assert result.replicates["se"].notna().any()


def test_reports():
    result = run_scenario(small(n_reps=1), tau0=TAU0)

    payload = metrics_json([result])
    text = json.dumps(payload, allow_nan=False)
    scenario = json.loads(text)["scenarios"][0]
    assert scenario["alpha"] == list(SHIFT_ALPHAS["moderate"])
    assert scenario["metrics"][0]["mc_sd"] is None

    table = format_table([result])
    assert table.splitlines()[0].split() == [
        "Scenario", "Cell", "Estimator", "tau0", "Bias(%)", "Bias/SE", "RMSE", "CP"
    ]
    assert "Moderate shift" in table
    assert "acw(g2)" in table

    frame = metrics_frame([result])
    assert list(frame["estimator"])[:2] == ["naive", "ipsw"]
    assert (frame["shift"] == "moderate").all()


@pytest.fixture(scope="module")
def oracle():
    return true_tau0(DgpSpec(), 2_000_000, np.random.default_rng(0))


@pytest.mark.slow
def test_naive_bias_grows_with_shift(oracle):
    bias = {}
    for shift in ("none", "moderate", "severe"):
        result = run_scenario(
            ScenarioSpec(shift=shift, spec_cell="both_correct", n_reps=200, n_boot=0, seed=1),
            tau0=oracle,
        )
        bias[shift] = result.metrics[0].relative_bias_pct
    assert abs(bias["none"]) < 0.5
    assert 1.0 < bias["moderate"] < bias["severe"] < 4.0


@pytest.mark.slow
@pytest.mark.parametrize("cell", list(SPEC_CELLS))
def test_bias_patterns_under_moderate_shift(cell, oracle):
    sampling_ok, outcome_ok = SPEC_CELLS[cell]
    result = run_scenario(
        ScenarioSpec(shift="moderate", spec_cell=cell, n_reps=200, n_boot=0, seed=2),
        tau0=oracle,
    )
    bias = {m.estimator: m.bias for m in result.metrics}

    for label in ("cw(g1)", "cw(g2)", "acw(g1)", "acw(g2)"):
        assert abs(bias[label]) <= 0.005, label
    if not outcome_ok:
        for label in ("om(g1)", "om(g2)", "om_rwd"):
            assert abs(bias[label]) > 0.01, label
    if not sampling_ok:
        assert abs(bias["ipsw"]) > 0.01
    if sampling_ok or outcome_ok:
        assert abs(bias["aipsw"]) <= 0.005


@pytest.mark.slow
def test_calibrated_intervals_cover_under_severe_shift(oracle):
    dgp = DgpSpec(sampling_alpha=SHIFT_ALPHAS["severe"], m_rwd=2000)
    coverage = {}
    for cell in SPEC_CELLS:
        # cw and naive do not depend on the working models
        estimators = ["naive", "cw(g1)", "acw(g1)"] if cell == "both_correct" else ["acw(g1)"]
        result = run_scenario(
            ScenarioSpec(
                shift="severe",
                spec_cell=cell,
                n_reps=150,
                n_boot=100,
                seed=5,
                dgp=dgp,
                estimators=estimators,
            ),
            tau0=oracle,
        )
        coverage.update({(cell, m.estimator): m.coverage for m in result.metrics})

    assert coverage[("both_correct", "cw(g1)")] >= 0.90
    for cell in SPEC_CELLS:
        assert coverage[(cell, "acw(g1)")] >= 0.90, cell
    assert coverage[("both_correct", "naive")] <= 0.70


@pytest.mark.slow
@pytest.mark.parametrize(
    "shift, relative_bias, coverage",
    [("none", 0.018, 0.946), ("moderate", 1.914, 0.780), ("severe", 2.860, 0.602)],
)
def test_naive_bias_and_coverage_by_shift(shift, relative_bias, coverage, oracle):
    result = run_scenario(
        ScenarioSpec(
            shift=shift,
            spec_cell="both_correct",
            n_reps=1000,
            n_boot=100,
            seed=3,
            estimators=["naive"],
        ),
        tau0=oracle,
    )
    naive = result.metrics[0]

    assert oracle.value == pytest.approx(0.81, abs=0.01)
    assert naive.relative_bias_pct == pytest.approx(relative_bias, abs=0.5)
    assert naive.coverage == pytest.approx(coverage, abs=0.03)
