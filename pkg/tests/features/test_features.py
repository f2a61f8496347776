import json

import numpy as np
import pytest

from app.exceptions import DimensionMismatch, InputError, MissingSummary
from app.features import (
    FeatureKind,
    FeatureMap,
    SummaryStatistics,
    apply,
    detect_continuous,
    target_moments_from_cohort,
    target_moments_from_statistics,
    target_moments_from_summary,
)
from app.schema import Cohort, CohortRole


NAMES = ["x1", "x2", "x3"]


def test_g1_and_g2_order():
    g1 = FeatureMap.build("g1", NAMES)
    assert g1.labels == ["x1", "x2", "x3", "x1^2", "x2^2", "x3^2"]

    g2 = FeatureMap.build(FeatureKind.G2, NAMES)
    assert g2.labels[6:] == ["x1*x2", "x1*x3", "x2*x3"]
    assert g2.q == 9


def test_binary_column_gets_no_square():
    x = np.array([[0.3, 1.0], [1.7, 0.0], [2.2, 1.0]])
    assert detect_continuous(x) == [True, False]

    fm = FeatureMap.build("g1", ["age", "smoker"], x=x)
    assert fm.labels == ["age", "smoker", "age^2"]


def test_apply_single_row():
    fm = FeatureMap.build("g2", ["a", "b"])
    np.testing.assert_allclose(apply(fm, [2.0, 3.0]), [2.0, 3.0, 4.0, 9.0, 6.0])

    with pytest.raises(DimensionMismatch):
        apply(fm, [1.0, 2.0, 3.0])


def test_custom_terms():
    fm = FeatureMap.from_terms(["x1", "x2^2", "x3*x1", "x2*x2"], NAMES)
    assert fm.labels == ["x1", "x2^2", "x1*x3", "x2^2"]

    with pytest.raises(InputError, match="x9"):
        FeatureMap.from_terms(["x9"], NAMES)


def test_moments_from_summary():
    """Tests that second moments add the squared mean to the variance."""
    fm = FeatureMap.build("g1", ["a", "b"])
    moments = target_moments_from_summary(fm, means=[1.0, 2.0], variances=[0.5, 1.0])
    np.testing.assert_allclose(moments.g_tilde, [1.0, 2.0, 1.5, 5.0])
    assert moments.source == "user_summary"

    g2 = FeatureMap.build("g2", ["a", "b"])
    moments = target_moments_from_summary(
        g2, means=[1.0, 2.0], variances=[0.5, 1.0], interaction_means=[2.5]
    )
    np.testing.assert_allclose(moments.g_tilde, [1.0, 2.0, 1.5, 5.0, 2.5])


def test_missing_summaries():
    fm = FeatureMap.build("g1", ["a", "b"])
    with pytest.raises(MissingSummary):
        target_moments_from_summary(fm, means=[1.0, 2.0])

    g2 = FeatureMap.build("g2", ["a", "b"])
    with pytest.raises(MissingSummary):
        target_moments_from_summary(g2, means=[1.0, 2.0], variances=[0.5, 1.0])

    with pytest.raises(DimensionMismatch):
        target_moments_from_summary(fm, means=[1.0])


def test_summary_json(tmp_path):
    path = tmp_path / "summary.json"
    path.write_text(
        json.dumps(
            {
                "means": {"x1": 0.1, "x2": 0.2, "x3": 0.3},
                "variances": [1.0, 2.0, 3.0],
                "interaction_means": {"x1*x2": 0.0, "x1*x3": 0.5, "x2*x3": -0.5},
            }
        ),
        encoding="utf-8",
    )
    summary = SummaryStatistics.from_json(path, NAMES)
    assert summary.variances["x3"] == 3.0

    moments = target_moments_from_statistics(FeatureMap.build("g2", NAMES), summary)
    np.testing.assert_allclose(
        moments.g_tilde, [0.1, 0.2, 0.3, 1.01, 2.04, 3.09, 0.0, 0.5, -0.5]
    )

    path.write_text(json.dumps({"variances": [1.0, 2.0, 3.0]}), encoding="utf-8")
    with pytest.raises(MissingSummary):
        SummaryStatistics.from_json(path, NAMES)


def test_summary_of_cohort_matches_direct_moments():
    rng = np.random.default_rng(7)
    cohort = Cohort(
        x=rng.normal(size=(200, 3)),
        design_weight=rng.uniform(0.5, 2.0, size=200),
        role=CohortRole.TARGET_SAMPLE,
        column_names=NAMES,
    )
    fm = FeatureMap.build("g2", NAMES)

    direct = target_moments_from_cohort(fm, cohort)
    via_summary = target_moments_from_statistics(fm, SummaryStatistics.from_cohort(cohort))

    assert direct.source == "design_weighted"
    np.testing.assert_allclose(direct.g_tilde, via_summary.g_tilde, rtol=1e-10, atol=1e-12)
