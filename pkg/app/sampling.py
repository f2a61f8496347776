"""Logistic sampling-score model and inverse-probability weights.

The validation cohort is labelled S=1 and the RWD, standing in for the rest
of the target population, S=0. Coefficients are fitted by IRLS on a
standardized design and reported on the original scale.
"""

from typing import Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy import linalg
from scipy.special import expit

from app.config import SamplingSettings, config
from app.exceptions import (
    DegenerateResponse,
    DimensionMismatch,
    InputError,
    MaxIterations,
    NonFiniteWeight,
    SeparationDetected,
    SingularDesign,
)
from app.features import FeatureMap
from app.logger import logger
from app.schema import Array, Cohort, WeightVector


class SamplingFit(BaseModel):
    """Fitted logistic model for Pr(S=1 | X)."""

    alpha: Array = Field(..., description="Intercept followed by basis coefficients")
    converged: bool
    deviance: float
    iterations: int = 0
    feature_map: Optional[FeatureMap] = Field(
        None, description="Basis of the design, without the intercept column"
    )

    class Config:
        arbitrary_types_allowed = True

    def design(self, x: np.ndarray) -> np.ndarray:
        if self.feature_map is None:
            raise InputError("sampling fit has no recorded basis; pass a design matrix")
        basis = self.feature_map.design(x)
        return np.column_stack([np.ones(basis.shape[0]), basis])

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Sampling scores pi(X; alpha) for covariate rows."""
        return expit(self.design(x) @ self.alpha)


def _deviance(s: np.ndarray, eta: np.ndarray) -> float:
    # -2 log-likelihood, stable for large |eta|
    return float(2.0 * np.sum(np.logaddexp(0.0, -(2.0 * s - 1.0) * eta)))


def fit_logistic(
    design: np.ndarray,
    s: np.ndarray,
    opts: Optional[SamplingSettings] = None,
    feature_map: Optional[FeatureMap] = None,
) -> SamplingFit:
    """Maximum-likelihood logistic regression by iteratively reweighted least squares.

    ``design`` must contain an intercept column. Convergence is declared when
    |Δdeviance| < ``opts.deviance_tol`` or the score max-norm falls below
    ``opts.grad_tol``; one more Newton step then polishes the estimate.
    """
    opts = opts or config.sampling
    X = np.asarray(design, dtype=float)
    s = np.asarray(s, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != s.shape[0]:
        raise DimensionMismatch(f"design {X.shape} does not match {s.shape[0]} labels")
    if not np.all((s == 0) | (s == 1)):
        raise InputError("sampling labels must be 0 or 1")
    if s.min() == s.max():
        raise DegenerateResponse("both S=1 and S=0 rows are needed to fit a sampling model")
    n, k = X.shape

    spread = X.max(axis=0) - X.min(axis=0)
    constant = spread == 0
    has_intercept = bool(np.any(constant & (X[0] != 0)))
    center = np.zeros(k)
    scale = np.ones(k)
    varying = ~constant
    if has_intercept:
        center[varying] = X[:, varying].mean(axis=0)
    scale[varying] = X[:, varying].std(axis=0)
    Xs = (X - center) / scale
    if np.linalg.matrix_rank(Xs) < k:
        raise SingularDesign("sampling design matrix is rank deficient", {"columns": k})

    def newton_step(beta: np.ndarray):
        p = expit(Xs @ beta)
        score = Xs.T @ (s - p)
        info = (Xs * (p * (1.0 - p))[:, None]).T @ Xs
        try:
            factor = linalg.cho_factor(info, check_finite=False)
        except linalg.LinAlgError as e:
            if np.max(np.abs(beta)) > 0.5 * opts.coef_cap:
                raise SeparationDetected(
                    "Fisher information collapsed; classes look separated",
                    {"coef_norm": float(np.max(np.abs(beta)))},
                ) from e
            raise SingularDesign("Fisher information is singular") from e
        return linalg.cho_solve(factor, score, check_finite=False), score

    beta = np.zeros(k)
    deviance = _deviance(s, Xs @ beta)
    converged = False
    for iteration in range(1, opts.max_iter + 1):
        delta, _ = newton_step(beta)
        beta = beta + delta
        if np.max(np.abs(beta)) > opts.coef_cap:
            raise SeparationDetected(
                "logistic coefficients diverged (complete or quasi separation)",
                {"coef_norm": float(np.max(np.abs(beta))), "coef_cap": opts.coef_cap},
            )
        new_deviance = _deviance(s, Xs @ beta)
        score = Xs.T @ (s - expit(Xs @ beta))
        change = abs(deviance - new_deviance)
        deviance = new_deviance
        if change < opts.deviance_tol or np.max(np.abs(score)) < opts.grad_tol:
            converged = True
            break
    if not converged:
        raise MaxIterations(
            f"IRLS did not converge in {opts.max_iter} iterations", {"deviance": deviance}
        )
    if deviance < 1e-6:
        raise SeparationDetected("perfect fit: the sampling classes are separated")

    delta, _ = newton_step(beta)
    beta = beta + delta
    deviance = _deviance(s, Xs @ beta)

    alpha = beta / scale
    if has_intercept:
        intercept = int(np.flatnonzero(constant & (X[0] != 0))[0])
        alpha[intercept] = (beta[intercept] - np.sum(alpha[varying] * center[varying])) / X[
            0, intercept
        ]
    logger.debug(f"IRLS converged in {iteration} iterations, deviance={deviance:.6f}")
    return SamplingFit(
        alpha=alpha,
        converged=True,
        deviance=deviance,
        iterations=iteration,
        feature_map=feature_map,
    )


def fit_sampling_model(
    validation: Cohort,
    rwd: Cohort,
    basis: FeatureMap,
    opts: Optional[SamplingSettings] = None,
) -> SamplingFit:
    """Fit pi(X) on the stacked validation (S=1) and RWD (S=0) rows."""
    x = np.vstack([validation.x, rwd.x])
    s = np.concatenate([np.ones(validation.n), np.zeros(rwd.n)])
    features = basis.design(x)
    design = np.column_stack([np.ones(x.shape[0]), features])
    return fit_logistic(design, s, opts, feature_map=basis)


def ipsw_weights(fit: SamplingFit, validation_x: np.ndarray) -> WeightVector:
    """Unnormalized inverse sampling-score weights 1/pi(X_i) for validation rows."""
    if not fit.converged:
        raise InputError("sampling model did not converge")
    pi = fit.predict(validation_x)
    with np.errstate(divide="ignore"):
        w = 1.0 / pi
    bad = ~np.isfinite(w) | (pi <= 0)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise NonFiniteWeight(
            f"sampling score underflowed to {pi[row]!r} at validation row {row}",
            {"row": row, "count": int(bad.sum())},
        )
    return WeightVector(w=w)


def truncate_normalize(w: WeightVector, lower_pct: float, upper_pct: float) -> WeightVector:
    """Clamp weights to empirical quantiles and rescale to sum to 1.

    The bounds are the order statistics on either side of the linearly
    interpolated quantile (``lower`` below, ``higher`` above). Clipping
    leaves those order statistics in place, so a second call with the same
    percentiles clips nothing.
    """
    if not 0 <= lower_pct < upper_pct <= 100:
        raise InputError("percentiles must satisfy 0 <= lower < upper <= 100")
    lo = np.percentile(w.w, lower_pct, method="lower")
    hi = np.percentile(w.w, upper_pct, method="higher")
    clipped = np.clip(w.w, lo, hi)
    return WeightVector(w=clipped / clipped.sum(), normalized=True)
