import numpy as np
import pytest

from app.schema import Cohort, CohortRole
from app.simulation.dgp import DgpSpec, generate_population, generate_rwd, select_validation


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow Monte-Carlo tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def moderate_study():
    """A small moderate-shift validation cohort with its RWD sample."""
    spec = DgpSpec(sampling_alpha=(0.15, 0.30, -0.10, 0.10), n_pop=6000, n_val=500, m_rwd=2000)
    rng = np.random.default_rng(20240611)
    population = generate_population(spec, spec.n_pop, rng)
    validation = select_validation(population, spec.sampling_alpha, spec.n_val, rng)
    rwd = generate_rwd(spec, rng)
    return validation, rwd


@pytest.fixture
def tiny_validation():
    """Two responders above one non-responder."""
    return Cohort(
        x=[[0.1], [0.2], [0.3]],
        y=[2.0, 3.0, 1.0],
        d=[1, 1, 0],
        role=CohortRole.VALIDATION,
        column_names=["x1"],
    )
