"""Entropy-balancing calibration weights.

Minimizes sum q_i log q_i subject to q_i >= 0, sum q_i = 1 and
sum q_i g(X_i) = g~ through its convex dual

    phi(lambda) = log sum_i exp(lambda' (g_i - g~)),

with damped Newton steps. The optimal weights are the softmax of
lambda' g(X_i).
"""

from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy import linalg, optimize
from scipy.special import logsumexp, softmax

from app.config import SolverSettings, config
from app.exceptions import (
    DimensionMismatch,
    IndexOutOfRange,
    InfeasibleTarget,
    MaxIterations,
    NumericalBreakdown,
)
from app.features import TargetMoments
from app.logger import logger
from app.schema import Array, WeightVector


class CalibrationSolution(BaseModel):
    """Dual multipliers and the calibrated weights they induce."""

    lam: Array = Field(..., description="Multipliers on the original feature scale")
    q_weights: WeightVector
    residual: float = Field(..., description="Max-norm moment constraint violation")
    iterations: int
    objective_trace: List[float] = Field(default_factory=list)

    class Config:
        arbitrary_types_allowed = True


def _newton_direction(hessian: np.ndarray, grad: np.ndarray, ridge: float) -> np.ndarray:
    try:
        factor = linalg.cho_factor(hessian, check_finite=False)
        return -linalg.cho_solve(factor, grad, check_finite=False)
    except linalg.LinAlgError:
        pass
    trace = float(np.trace(hessian))
    bump = ridge * trace if trace > 0 else ridge
    logger.warning(f"Hessian not positive definite; retrying with ridge {bump:.3g}")
    try:
        factor = linalg.cho_factor(
            hessian + bump * np.eye(hessian.shape[0]), check_finite=False
        )
        return -linalg.cho_solve(factor, grad, check_finite=False)
    except linalg.LinAlgError as e:
        raise NumericalBreakdown(
            "calibration Hessian is singular after ridge fallback",
            {"ridge": bump},
        ) from e


def _in_hull(A: np.ndarray) -> bool:
    """Whether 0 is a convex combination of the rows of ``A`` (a feasibility LP)."""
    n = A.shape[0]
    result = optimize.linprog(
        np.zeros(n),
        A_eq=np.vstack([A.T, np.ones(n)]),
        b_eq=np.append(np.zeros(A.shape[1]), 1.0),
        bounds=(0, None),
        method="highs",
    )
    return result.status != 2


def _newton(A: np.ndarray, scale: np.ndarray, opts: SolverSettings):
    lam = np.zeros(A.shape[1])
    trace: List[float] = []
    phi = float(logsumexp(A @ lam))
    for iteration in range(opts.max_iter + 1):
        weights = softmax(A @ lam)
        grad = A.T @ weights
        residual = float(np.max(np.abs(grad * scale))) if A.shape[1] else 0.0
        trace.append(phi)
        if residual <= opts.tol:
            return lam, trace, iteration
        if iteration == opts.max_iter:
            raise MaxIterations(
                f"entropy balancing did not converge in {opts.max_iter} iterations",
                {"residual": residual},
            )

        hessian = (A * weights[:, None]).T @ A - np.outer(grad, grad)
        step = _newton_direction(hessian, grad, opts.ridge)
        slope = float(grad @ step)
        t = 1.0
        while True:
            candidate = lam + t * step
            phi_new = float(logsumexp(A @ candidate))
            if phi_new <= phi + opts.armijo * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                norm = float(np.max(np.abs(lam)))
                if norm > 0.5 * opts.lambda_cap:
                    raise InfeasibleTarget(
                        "line search stalled with diverging multipliers",
                        {"lambda_norm": norm, "residual": residual},
                    )
                raise NumericalBreakdown(
                    "line search stalled before the moment constraints were met",
                    {"residual": residual, "iteration": iteration},
                )
        lam, phi = candidate, phi_new
        if np.max(np.abs(lam)) > opts.lambda_cap:
            raise InfeasibleTarget(
                "multipliers exceeded lambda_cap; target is likely outside the convex hull",
                {"lambda_norm": float(np.max(np.abs(lam))), "lambda_cap": opts.lambda_cap},
            )


def solve(
    g_matrix: np.ndarray,
    g_tilde: Union[TargetMoments, np.ndarray],
    opts: Optional[SolverSettings] = None,
) -> CalibrationSolution:
    """Solve the entropy-balancing program for the rows of ``g_matrix``.

    Raises:
        InfeasibleTarget: g~ is outside the convex hull of the rows, detected
            up front per coordinate, by the multipliers exceeding
            ``opts.lambda_cap``, or by a hull LP once Newton fails.
        MaxIterations: no convergence within ``opts.max_iter`` steps.
        NumericalBreakdown: the Hessian could not be factorized.
    """
    opts = opts or config.solver
    G = np.asarray(g_matrix, dtype=float)
    if G.ndim == 1:
        G = G.reshape(-1, 1)
    target = g_tilde.g_tilde if isinstance(g_tilde, TargetMoments) else g_tilde
    target = np.asarray(target, dtype=float).ravel()
    n, q = G.shape
    if target.shape[0] != q:
        raise DimensionMismatch(f"g_tilde has length {target.shape[0]}, features have {q}")

    lo, hi = G.min(axis=0), G.max(axis=0)
    constant = (hi - lo) <= 1e-12 * np.maximum(1.0, np.abs(hi))
    for k in np.flatnonzero(constant):
        if abs(target[k] - G[0, k]) > opts.tol:
            raise InfeasibleTarget(
                f"feature {k} is constant in the cohort but the target differs",
                {"feature": int(k), "cohort_value": float(G[0, k]), "target": float(target[k])},
            )
        logger.debug(f"Dropping constant feature {k} from the calibration system")
    outside = ~constant & ((target < lo) | (target > hi))
    if outside.any():
        k = int(np.flatnonzero(outside)[0])
        raise InfeasibleTarget(
            f"target moment {k} lies outside the cohort range",
            {"feature": k, "target": float(target[k]), "range": [float(lo[k]), float(hi[k])]},
        )

    active = np.flatnonzero(~constant)
    # centering cancels inside phi; only the scale conditions the Newton system
    if opts.standardize:
        scale = G[:, active].std(axis=0)
    else:
        scale = np.ones(active.size)
    A = (G[:, active] - target[active]) / scale

    try:
        lam, trace, iteration = _newton(A, scale, opts)
    except (MaxIterations, NumericalBreakdown) as e:
        if not _in_hull(A):
            raise InfeasibleTarget(
                "target moments lie outside the convex hull of the cohort features",
                {"residual": e.details.get("residual")},
            ) from e
        raise

    q_hat = softmax(A @ lam)
    full_lambda = np.zeros(q)
    full_lambda[active] = lam / scale
    final_residual = float(np.max(np.abs(q_hat @ G - target)))
    logger.debug(
        f"Entropy balancing converged: n={n}, q={q}, iterations={iteration}, "
        f"residual={final_residual:.2e}"
    )
    return CalibrationSolution(
        lam=full_lambda,
        q_weights=WeightVector(w=q_hat, normalized=True),
        residual=final_residual,
        iterations=iteration,
        objective_trace=trace,
    )


def pair_weight(w: WeightVector, i: int, j: int) -> float:
    """Pairwise weight w_i * w_j for distinct subjects (0-based indices)."""
    n = len(w)
    if i == j:
        raise IndexOutOfRange("pair weights exclude the diagonal (i == j)", {"i": i, "j": j})
    if not (0 <= i < n and 0 <= j < n):
        raise IndexOutOfRange(f"indices must lie in [0, {n})", {"i": i, "j": j})
    return float(w.w[i] * w.w[j])
