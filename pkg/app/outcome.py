"""Per-response-group linear models for the biomarker and the pairwise kernel.

E[Y | X, D=d] = M(X, d; beta_d) is fitted by least squares separately in the
D=1 and D=0 groups of the validation cohort. Under a normal error model

    Pr(Y_i > Y_j | X_i, X_j, D_i=1, D_j=0)
        = Phi((M(X_i, 1) - M(X_j, 0)) / sqrt(sigma_0^2 + sigma_1^2)).
"""

from abc import ABC, abstractmethod
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy import linalg
from scipy.special import ndtr

from app.exceptions import (
    DegenerateVariance,
    DimensionMismatch,
    GroupTooSmall,
    InputError,
    RankDeficientDesign,
)
from app.features import FeatureMap
from app.logger import logger
from app.schema import Array, Cohort


class OutcomeBasis(BaseModel):
    """Design bases (without intercept) for the D=1 and D=0 models."""

    group_1: FeatureMap
    group_0: FeatureMap

    @classmethod
    def main_effects(cls, column_names: Sequence[str]) -> "OutcomeBasis":
        basis = FeatureMap.main_effects(column_names)
        return cls(group_1=basis, group_0=basis)

    @classmethod
    def from_terms(
        cls,
        column_names: Sequence[str],
        terms_1: Optional[Sequence[str]] = None,
        terms_0: Optional[Sequence[str]] = None,
    ) -> "OutcomeBasis":
        """Build from term lists such as ``["x1", "x1^2", "x1*x3"]``; None = main effects."""
        main = FeatureMap.main_effects(column_names)
        return cls(
            group_1=FeatureMap.from_terms(terms_1, column_names) if terms_1 else main,
            group_0=FeatureMap.from_terms(terms_0, column_names) if terms_0 else main,
        )

    def for_group(self, d: int) -> FeatureMap:
        return self.group_1 if d == 1 else self.group_0


class OutcomeModelFit(BaseModel):
    beta_1: Array
    beta_0: Array
    sigma_1: float = Field(..., ge=0)
    sigma_0: float = Field(..., ge=0)
    basis: OutcomeBasis
    n_1: int
    n_0: int
    p_1: int
    p_0: int

    class Config:
        arbitrary_types_allowed = True

    def coefficients(self, d: int) -> np.ndarray:
        return self.beta_1 if d == 1 else self.beta_0

    @property
    def pooled_sd(self) -> float:
        return float(np.sqrt(self.sigma_0**2 + self.sigma_1**2))


def _design(basis: FeatureMap, x: np.ndarray) -> np.ndarray:
    features = basis.design(x)
    return np.column_stack([np.ones(features.shape[0]), features])


def _ols(design: np.ndarray, y: np.ndarray, group: int):
    n, p = design.shape
    if n <= p:
        raise GroupTooSmall(
            f"D={group} group has {n} subjects for {p} parameters; need n_d > p_d",
            {"group": group, "n": n, "p": p},
        )
    _, r, _ = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > diag[0] * max(n, p) * np.finfo(float).eps))
    if rank < p:
        raise RankDeficientDesign(
            f"D={group} design has rank {rank} < {p}", {"group": group, "rank": rank, "p": p}
        )
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta
    sigma = float(np.sqrt(resid @ resid / (n - p)))
    return beta, sigma


def fit(validation: Cohort, basis: OutcomeBasis) -> OutcomeModelFit:
    """Least-squares fit per response group with the (n_d - p_d) variance divisor."""
    if validation.y is None or validation.d is None:
        raise InputError("outcome models need a cohort with y and d")
    results = {}
    for group in (1, 0):
        rows = validation.d == group
        design = _design(basis.for_group(group), validation.x[rows])
        results[group] = (*_ols(design, validation.y[rows], group), design.shape)
    (beta_1, sigma_1, (n_1, p_1)) = results[1]
    (beta_0, sigma_0, (n_0, p_0)) = results[0]
    logger.debug(
        f"Outcome models fitted: sigma_1={sigma_1:.4f} (n={n_1}), sigma_0={sigma_0:.4f} (n={n_0})"
    )
    return OutcomeModelFit(
        beta_1=beta_1,
        beta_0=beta_0,
        sigma_1=sigma_1,
        sigma_0=sigma_0,
        basis=basis,
        n_1=n_1,
        n_0=n_0,
        p_1=p_1,
        p_0=p_0,
    )


def predict_means(fit: OutcomeModelFit, x: np.ndarray, d: int) -> np.ndarray:
    """M(X, d; beta_d) for every row of ``x``."""
    return _design(fit.basis.for_group(d), x) @ fit.coefficients(d)


def predict_mean(fit: OutcomeModelFit, x_row: Sequence[float], d: int) -> float:
    x_row = np.asarray(x_row, dtype=float).ravel()
    p = fit.basis.for_group(d).p
    if x_row.shape[0] != p:
        raise DimensionMismatch(f"expected {p} covariates, got {x_row.shape[0]}")
    return float(predict_means(fit, x_row.reshape(1, -1), d)[0])


def std_normal_cdf(z: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Standard normal CDF Phi(z)."""
    out = ndtr(z)
    return float(out) if np.ndim(out) == 0 else out


class PairKernel(ABC):
    """Pr(Y_i > Y_j | X_i, X_j, D_i=1, D_j=0) given fitted group means."""

    @abstractmethod
    def __call__(self, m1: np.ndarray, m0: np.ndarray, fit: OutcomeModelFit) -> np.ndarray:
        """Probabilities for the outer grid m1[:, None] vs m0[None, :]."""


class NormalPairKernel(PairKernel):
    def __call__(self, m1: np.ndarray, m0: np.ndarray, fit: OutcomeModelFit) -> np.ndarray:
        sd = fit.pooled_sd
        if sd == 0:
            raise DegenerateVariance(
                "sigma_0 = sigma_1 = 0: the outcome model is deterministic"
            )
        return ndtr((np.asarray(m1)[:, None] - np.asarray(m0)[None, :]) / sd)


def pair_prob(fit: OutcomeModelFit, x_i: Sequence[float], x_j: Sequence[float]) -> float:
    """P_ij for responder covariates ``x_i`` and non-responder covariates ``x_j``."""
    m1 = predict_mean(fit, x_i, 1)
    m0 = predict_mean(fit, x_j, 0)
    return float(NormalPairKernel()(np.array([m1]), np.array([m0]), fit)[0, 0])
