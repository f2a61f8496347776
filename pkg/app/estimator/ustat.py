"""Weighted two-sample U-statistics for the AUC.

Every estimator in this package reduces to one of two ratio forms over
responder (D=1) x non-responder (D=0) pairs with product weights w_i * w_j:

  - ``weighted_auc``: the kernel is the indicator Y_i > Y_j,
  - ``om_weighted`` / ``om_rwd``: the kernel is the model probability P_ij.

Partial sums are combined with ``math.fsum`` in a fixed order so results do
not depend on how work is split.
"""

import math
from typing import Literal, Optional, Union

import numpy as np

from app.exceptions import DimensionMismatch, InputError, NoPairs
from app.outcome import NormalPairKernel, OutcomeModelFit, PairKernel, predict_means
from app.schema import Cohort, PointEstimate, WeightVector


Ties = Literal["strict", "half"]
DEFAULT_BLOCK = 512


def _as_weights(w: Union[WeightVector, np.ndarray, None], n: int) -> np.ndarray:
    if w is None:
        return np.ones(n)
    arr = w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=float).ravel()
    if arr.shape[0] != n:
        raise DimensionMismatch(f"{arr.shape[0]} weights for {n} subjects")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InputError("weights must be finite and nonnegative")
    return arr


def _group_mass(w1: np.ndarray, w0: np.ndarray):
    mass_1, mass_0 = math.fsum(w1), math.fsum(w0)
    if mass_1 <= 0 or mass_0 <= 0:
        raise NoPairs(
            "both response groups need positive total weight",
            {"responder_mass": mass_1, "non_responder_mass": mass_0},
        )
    pairs = int(np.count_nonzero(w1 > 0)) * int(np.count_nonzero(w0 > 0))
    return mass_1, mass_0, pairs


def weighted_auc(
    y: np.ndarray,
    d: np.ndarray,
    w: Union[WeightVector, np.ndarray, None] = None,
    ties: Ties = "strict",
) -> PointEstimate:
    """Weighted Mann-Whitney AUC in O(n log n).

    Non-responders are sorted once; for each responder the weight of
    non-responders strictly below (and tied with) its value is read off a
    prefix sum. Unit weights give the naive AUC.
    """
    y = np.asarray(y, dtype=float).ravel()
    d = np.asarray(d).ravel()
    if y.shape != d.shape:
        raise DimensionMismatch(f"y has {y.shape[0]} entries, d has {d.shape[0]}")
    if ties not in ("strict", "half"):
        raise InputError(f"unknown ties policy {ties!r}")
    w = _as_weights(w, y.shape[0])
    pos, neg = d == 1, d == 0
    y1, w1, y0, w0 = y[pos], w[pos], y[neg], w[neg]
    mass_1, mass_0, pairs = _group_mass(w1, w0)

    order = np.argsort(y0, kind="mergesort")
    y0_sorted = y0[order]
    prefix = np.concatenate([[0.0], np.cumsum(w0[order])])
    below = prefix[np.searchsorted(y0_sorted, y1, side="left")]
    per_responder = below
    if ties == "half":
        at_or_below = prefix[np.searchsorted(y0_sorted, y1, side="right")]
        per_responder = below + 0.5 * (at_or_below - below)

    numerator = math.fsum(w1 * per_responder)
    denominator = mass_1 * mass_0
    return PointEstimate(
        value=numerator / denominator,
        numerator=numerator,
        denominator=denominator,
        effective_pairs=pairs,
        diagnostics={"ties": ties},
    )


def _kernel_sum(
    m1: np.ndarray,
    m0: np.ndarray,
    w1: np.ndarray,
    w0: np.ndarray,
    fit: OutcomeModelFit,
    kernel: PairKernel,
    block_size: int,
) -> float:
    partials = []
    for start in range(0, m1.shape[0], block_size):
        stop = start + block_size
        probs = kernel(m1[start:stop], m0, fit)
        # numpy's pairwise summation inside each block
        partials.append(float(np.sum(probs * w1[start:stop, None] * w0[None, :])))
    return math.fsum(partials)


def om_weighted(
    validation: Cohort,
    fit: OutcomeModelFit,
    w: Union[WeightVector, np.ndarray, None] = None,
    kernel: Optional[PairKernel] = None,
    block_size: int = DEFAULT_BLOCK,
) -> PointEstimate:
    """Weighted mean of P_ij over validation responder x non-responder pairs."""
    if validation.d is None:
        raise InputError("validation cohort has no response column")
    kernel = kernel or NormalPairKernel()
    w = _as_weights(w, validation.n)
    pos, neg = validation.d == 1, validation.d == 0
    w1, w0 = w[pos], w[neg]
    mass_1, mass_0, pairs = _group_mass(w1, w0)
    m1 = predict_means(fit, validation.x[pos], 1)
    m0 = predict_means(fit, validation.x[neg], 0)
    numerator = _kernel_sum(m1, m0, w1, w0, fit, kernel, block_size)
    denominator = mass_1 * mass_0
    return PointEstimate(
        value=numerator / denominator,
        numerator=numerator,
        denominator=denominator,
        effective_pairs=pairs,
    )


def om_rwd(
    rwd: Cohort,
    fit: OutcomeModelFit,
    kernel: Optional[PairKernel] = None,
    block_size: int = DEFAULT_BLOCK,
) -> PointEstimate:
    """Unweighted mean of P_ij over RWD responder x non-responder pairs.

    The outcome model is fitted on the validation cohort only; the RWD
    contributes covariates and response status.
    """
    if rwd.d is None:
        raise InputError("rwd cohort has no response column")
    kernel = kernel or NormalPairKernel()
    pos, neg = rwd.d == 1, rwd.d == 0
    w1, w0 = np.ones(int(pos.sum())), np.ones(int(neg.sum()))
    mass_1, mass_0, pairs = _group_mass(w1, w0)
    m1 = predict_means(fit, rwd.x[pos], 1)
    m0 = predict_means(fit, rwd.x[neg], 0)
    numerator = _kernel_sum(m1, m0, w1, w0, fit, kernel, block_size)
    denominator = mass_1 * mass_0
    return PointEstimate(
        value=numerator / denominator,
        numerator=numerator,
        denominator=denominator,
        effective_pairs=pairs,
    )
