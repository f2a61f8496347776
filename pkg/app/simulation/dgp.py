"""Data-generating process for covariate-shift simulations.

    X1 ~ N(1, 0.5^2), X2 ~ N(-1, 0.5^2), X3 ~ U(0, 1)
    logit Pr(D=1 | X) = 0.2 - 0.25 X1 - 0.15 X2 + 0.25 X2 X3 + 0.3 X3^2
    Y = 0.2 - 0.15 X1 + 0.2 X3 + 0.1 X2 X3 - 0.1 X2^2
        + 0.15 D + 0.4 D X1^2 + 0.2 D X1 X3 + eps,    eps ~ N(0, 0.5^2)
    logit Pr(S=1 | X) = a0 + a1 X1^2 + a2 X2^2 + a3 X1 X3
"""

import math
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.special import expit

from app.estimator.ustat import weighted_auc
from app.exceptions import InputError
from app.schema import Cohort, CohortRole


COLUMN_NAMES = ["x1", "x2", "x3"]

# (intercept, x1, x3, x2*x3, x2^2, d, d*x1^2, d*x1*x3)
OUTCOME_COEFFS = (0.2, -0.15, 0.2, 0.1, -0.1, 0.15, 0.4, 0.2)
# (intercept, x1, x2, x2*x3, x3^2)
RESPONSE_COEFFS = (0.2, -0.25, -0.15, 0.25, 0.3)

# Correctly specified working models.
SAMPLING_TERMS = ["x1^2", "x2^2", "x1*x3"]
OUTCOME_TERMS_0 = ["x1", "x3", "x2*x3", "x2^2"]
OUTCOME_TERMS_1 = OUTCOME_TERMS_0 + ["x1^2", "x1*x3"]
# Default misspecification: X1 left out of both working models.
OMIT_X1 = ["x2", "x3"]


class DgpSpec(BaseModel):
    outcome_coeffs: Tuple[float, ...] = OUTCOME_COEFFS
    response_coeffs: Tuple[float, ...] = RESPONSE_COEFFS
    sampling_alpha: Tuple[float, ...] = (0.15, 0.0, 0.0, 0.0)
    noise_sd: float = Field(0.5, ge=0)
    n_pop: int = Field(50_000, gt=0)
    n_val: int = Field(800, gt=0)
    m_rwd: int = Field(8_000, gt=0)

    @model_validator(mode="after")
    def check_lengths(self) -> "DgpSpec":
        if len(self.sampling_alpha) != 4:
            raise ValueError("sampling_alpha needs exactly four coefficients (a0..a3)")
        if len(self.outcome_coeffs) != 8:
            raise ValueError("outcome_coeffs needs eight coefficients")
        if len(self.response_coeffs) != 5:
            raise ValueError("response_coeffs needs five coefficients")
        if self.n_val > self.n_pop:
            raise ValueError("n_val cannot exceed n_pop")
        return self


def _covariates(size: int, rng: np.random.Generator) -> np.ndarray:
    x1 = rng.normal(1.0, 0.5, size)
    x2 = rng.normal(-1.0, 0.5, size)
    x3 = rng.uniform(0.0, 1.0, size)
    return np.column_stack([x1, x2, x3])


def response_probability(spec: DgpSpec, x: np.ndarray) -> np.ndarray:
    c = spec.response_coeffs
    x1, x2, x3 = x.T
    return expit(c[0] + c[1] * x1 + c[2] * x2 + c[3] * x2 * x3 + c[4] * x3**2)


def biomarker_mean(spec: DgpSpec, x: np.ndarray, d: np.ndarray) -> np.ndarray:
    b = spec.outcome_coeffs
    x1, x2, x3 = x.T
    base = b[0] + b[1] * x1 + b[2] * x3 + b[3] * x2 * x3 + b[4] * x2**2
    return base + d * (b[5] + b[6] * x1**2 + b[7] * x1 * x3)


def sampling_score(alpha, x: np.ndarray) -> np.ndarray:
    """pi(X) = logistic(a0 + a1 X1^2 + a2 X2^2 + a3 X1 X3)."""
    a = np.asarray(alpha, dtype=float)
    if a.shape[0] != 4:
        raise InputError("sampling alpha needs four coefficients")
    x1, x2, x3 = x.T
    return expit(a[0] + a[1] * x1**2 + a[2] * x2**2 + a[3] * x1 * x3)


def _draw(spec: DgpSpec, size: int, rng: np.random.Generator):
    if size <= 0:
        raise InputError("population size must be positive", {"size": size})
    x = _covariates(size, rng)
    d = (rng.uniform(size=size) < response_probability(spec, x)).astype(np.int8)
    y = biomarker_mean(spec, x, d) + rng.normal(0.0, 1.0, size) * spec.noise_sd
    return x, y, d


def generate_population(spec: DgpSpec, size: int, rng: np.random.Generator) -> Cohort:
    """iid rows with covariates, biomarker and response."""
    x, y, d = _draw(spec, size, rng)
    return Cohort(x=x, y=y, d=d, role=CohortRole.VALIDATION, column_names=COLUMN_NAMES)


def generate_rwd(spec: DgpSpec, rng: np.random.Generator) -> Cohort:
    """RWD sample of ``spec.m_rwd`` rows; the biomarker is not observed."""
    x, _, d = _draw(spec, spec.m_rwd, rng)
    return Cohort(x=x, d=d, role=CohortRole.RWD, column_names=COLUMN_NAMES)


class OracleAUC(BaseModel):
    value: float
    half_width: float = Field(..., description="95% Monte-Carlo half-width from batch means")
    size: int


def true_tau0(
    spec: DgpSpec, oracle_size: int, rng: np.random.Generator, batches: int = 20
) -> OracleAUC:
    """Target-population AUC from one large draw of the DGP."""
    if oracle_size < batches * 2:
        raise InputError("oracle_size is too small", {"oracle_size": oracle_size})
    x, y, d = _draw(spec, oracle_size, rng)
    value = weighted_auc(y, d).value
    bounds = np.linspace(0, oracle_size, batches + 1).astype(int)
    batch_values: List[float] = [
        weighted_auc(y[lo:hi], d[lo:hi]).value for lo, hi in zip(bounds[:-1], bounds[1:])
    ]
    batch_sd = float(np.std(batch_values, ddof=1))
    return OracleAUC(
        value=value, half_width=1.96 * batch_sd / math.sqrt(batches), size=oracle_size
    )


def select_validation(
    population: Cohort, alpha, n_val: int, rng: np.random.Generator
) -> Cohort:
    """Draw ``n_val`` rows without replacement, successively proportional to pi(X).

    Uses exponential keys E_i / pi_i and keeps the ``n_val`` smallest, which
    has the same law as sequential weighted draws. Selected rows keep
    population order.
    """
    if n_val > population.n:
        raise InputError(
            "n_val exceeds the population size", {"n_val": n_val, "population": population.n}
        )
    if n_val <= 0:
        raise InputError("n_val must be positive", {"n_val": n_val})
    pi = sampling_score(alpha, population.x)
    keys = rng.exponential(size=population.n) / pi
    if n_val == population.n:
        chosen = np.arange(population.n)
    else:
        chosen = np.sort(np.argpartition(keys, n_val - 1)[:n_val])
    return population.take(chosen).with_role(CohortRole.VALIDATION)
