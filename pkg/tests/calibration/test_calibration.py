import math

import numpy as np
import pytest

from app.calibration import pair_weight, solve
from app.config import SolverSettings
from app.exceptions import IndexOutOfRange, InfeasibleTarget, MaxIterations
from app.features import FeatureMap, target_moments_from_cohort
from app.schema import Cohort, CohortRole, WeightVector


TIGHT = SolverSettings(tol=1e-12)


def test_two_point_closed_form():
    """Tests g = [0, 1] with target 0.75: q = (1/4, 3/4) and lambda = ln 3."""
    solution = solve(np.array([[0.0], [1.0]]), np.array([0.75]), TIGHT)

    np.testing.assert_allclose(solution.q_weights.w, [0.25, 0.75], atol=1e-12)
    assert solution.lam[0] == pytest.approx(math.log(3.0), abs=1e-10)
    assert solution.residual <= 1e-12


def test_self_calibration_gives_uniform_weights():
    rng = np.random.default_rng(3)
    G = FeatureMap.build("g1", ["a", "b"]).design(rng.normal(size=(50, 2)))
    solution = solve(G, G.mean(axis=0))

    np.testing.assert_allclose(solution.q_weights.w, np.full(50, 1 / 50), rtol=1e-12)
    np.testing.assert_array_equal(solution.lam, np.zeros(4))
    assert solution.iterations == 0


def test_moments_are_matched():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(400, 3))
    target_x = rng.normal(loc=0.3, scale=0.9, size=(2000, 3))
    fm = FeatureMap.build("g2", ["x1", "x2", "x3"])
    moments = target_moments_from_cohort(
        fm, Cohort(x=target_x, role=CohortRole.TARGET_SAMPLE, column_names=fm.column_names)
    )

    solution = solve(fm.design(x), moments)
    q = solution.q_weights.w

    assert q.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(q > 0)
    np.testing.assert_allclose(q @ fm.design(x), moments.g_tilde, atol=1e-7)
    assert solution.objective_trace == sorted(solution.objective_trace, reverse=True)


def test_target_outside_range():
    G = np.array([[0.0], [1.0], [2.0]])
    with pytest.raises(InfeasibleTarget) as info:
        solve(G, np.array([3.5]))
    assert info.value.details["feature"] == 0


def test_target_outside_convex_hull():
    # x in {-1, 0, 1} with x^2: every coordinate is in range but (0.9, 0.1) is not in the hull
    G = np.array([[-1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(InfeasibleTarget):
        solve(G, np.array([0.9, 0.1]))


def test_stalled_solver_checks_the_hull():
    G = np.array([[-1.0, 1.0], [0.0, 0.0], [1.0, 1.0], [0.5, 0.25]])
    short = SolverSettings(max_iter=1, tol=1e-14)

    with pytest.raises(InfeasibleTarget):
        solve(G, np.array([0.9, 0.1]), short)
    with pytest.raises(MaxIterations):
        solve(G, np.array([0.6, 0.7]), short)


def test_constant_feature():
    G = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])

    solution = solve(G, np.array([1.0, 1.0]))
    np.testing.assert_allclose(solution.q_weights.w, np.full(3, 1 / 3), atol=1e-9)
    assert solution.lam[0] == 0.0

    with pytest.raises(InfeasibleTarget, match="constant"):
        solve(G, np.array([2.0, 1.0]))


def test_pair_weight():
    w = WeightVector(w=[0.2, 0.3, 0.5])
    assert pair_weight(w, 0, 2) == pytest.approx(0.1)

    with pytest.raises(IndexOutOfRange):
        pair_weight(w, 1, 1)
    with pytest.raises(IndexOutOfRange):
        pair_weight(w, 0, 3)


def test_objective_decreases_every_iteration():
    rng = np.random.default_rng(21)
    x = rng.normal(size=(300, 2))
    G = np.column_stack([x, x**2, x[:, 0] * x[:, 1]])
    target = np.array([0.4, -0.3, 1.2, 0.9, 0.1])

    solution = solve(G, target, TIGHT)

    trace = solution.objective_trace
    assert solution.iterations >= 3
    assert len(trace) == solution.iterations + 1
    assert all(after <= before for before, after in zip(trace, trace[1:]))


def test_weights_are_affine_equivariant():
    """Tests that rescaling and shifting features and target alike leaves q unchanged."""
    rng = np.random.default_rng(6)
    G = rng.normal(size=(200, 3))
    target = np.array([0.2, -0.1, 0.3])
    c, b = np.array([2.0, 0.01, 50.0]), np.array([-3.0, 7.0, 0.5])

    base = solve(G, target, TIGHT)
    moved = solve(G * c + b, target * c + b, TIGHT)
    order = rng.permutation(200)
    shuffled = solve(G[order], target, TIGHT)

    np.testing.assert_allclose(moved.q_weights.w, base.q_weights.w, rtol=1e-8)
    np.testing.assert_allclose(moved.lam * c, base.lam, rtol=1e-7)
    np.testing.assert_allclose(shuffled.q_weights.w, base.q_weights.w[order], rtol=1e-8)


def test_weights_track_inverse_sampling_probability():
    """Tests that calibrating a log-linear sample to its population recovers 1/pi up to scale."""
    rng = np.random.default_rng(13)
    population = rng.normal(size=(200_000, 2))
    pi = np.exp(-3.0 + 0.3 * population[:, 0] - 0.3 * population[:, 1])
    sample = population[rng.uniform(size=pi.size) < pi]

    solution = solve(sample, population.mean(axis=0))
    inverse_pi = np.exp(3.0 - 0.3 * sample[:, 0] + 0.3 * sample[:, 1])

    assert np.corrcoef(solution.q_weights.w, inverse_pi)[0, 1] > 0.99
