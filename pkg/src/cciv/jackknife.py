"""Leave-one-cluster-out estimator and the jackknife LM and AR statistics.

All statistics here are built from bilinear forms that sum over pairs of
observations in *different* clusters, which removes the own-cluster bias terms
that many instruments would otherwise introduce.  The quadruple sums

    sum over clusters g != h, i in g, j in h, of a_i B_ij b_j

are computed in the algebraically identical fast form
``a' B b - sum_g a_[g]' B_[g,g] b_[g]``; the literal loop versions live in the
oracle module and the two are tied together by exact-equality tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClusterPartition, TransformedDesign
from .exceptions import InvalidInput, VarianceError, WeakDesignError


@dataclass(frozen=True)
class JackknifeComponents:
    """Leave-one-cluster-out estimator, its denominator, and both variances.

    ``x_projected`` is ``mw (p - p_diag) x`` (equivalently ``q @ x_raw``), the
    many-IV analogue of the instrumented regressor; its per-cluster score
    products feed the Wald/LM correlation estimator.
    """

    beta2_hat: float
    d_hat: float
    phi2_hat: float
    phi3_hat: float
    x_projected: np.ndarray


def offdiag_bilinear(
    a: np.ndarray, b_mat: np.ndarray, b: np.ndarray, partition: ClusterPartition
) -> float:
    """Cross-cluster bilinear form of a symmetric matrix.

    Returns ``a' B b`` minus the diagonal-block contributions, i.e. the sum of
    ``a_i B_ij b_j`` over all pairs whose observations lie in different
    clusters.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (partition.n,) or b.shape != (partition.n,):
        raise InvalidInput("vector lengths must match the partition")
    total = float(a @ b_mat @ b)
    diag = 0.0
    for sl in partition.slices():
        diag += float(a[sl] @ b_mat[sl, sl] @ b[sl])
    return total - diag


def _pair_block_sums(
    left: np.ndarray, m: np.ndarray, right: np.ndarray, partition: ClusterPartition
) -> np.ndarray:
    """G x G matrix with (g,h) entry ``left_[g]' M_[g,h] right_[h]``."""
    return partition.block_sums(left[:, None] * m * right[None, :])


def jive_beta2(design: TransformedDesign) -> tuple[float, float]:
    """Leave-one-cluster-out IV estimator and its denominator.

    The estimator is the ratio of the cross-cluster bilinear forms of ``x``
    against ``y`` and ``x`` against ``x`` through the many-IV projection.
    """
    part = design.partition
    d_hat = offdiag_bilinear(design.x, design.p, design.x, part)
    if abs(d_hat) <= 1e-12 * float(design.x @ design.x):
        raise WeakDesignError(
            "cross-cluster instrumented variation in x is numerically zero"
        )
    numer = offdiag_bilinear(design.x, design.p, design.y, part)
    return numer / d_hat, d_hat


def variance_phi2(design: TransformedDesign, resid: np.ndarray) -> float:
    """Variance estimator for the leave-one-cluster-out score of ``x`` on ``e``.

    Two-term form: the squared per-cluster sums of ``[(q - q_diag) x_raw]_i e_i``
    plus the sum over ordered cluster pairs (g != h) of
    ``(x_raw_[g]' q_[g,h] e_[h]) (x_raw_[h]' q_[h,g] e_[g])``.  Note the second
    term is not a sum of squares, so the estimator can be negative in small
    samples; callers must treat a non-positive value as invalid.

    The weights use ``q`` while the regressor enters un-partialled, exactly as
    the estimator is defined; do not "simplify" ``x_raw' q`` to ``x' q`` even
    though the annihilator would absorb it.
    """
    resid = np.asarray(resid, dtype=float)
    if not np.all(np.isfinite(resid)):
        raise InvalidInput("residuals contain NaN or Inf")
    part = design.partition
    leaveout_x = (design.q - design.q_diag) @ design.x_raw
    per_cluster = part.cluster_sums(leaveout_x * resid)
    term1 = float(per_cluster @ per_cluster)
    cross = _pair_block_sums(design.x_raw, design.q, resid, part)
    term2 = float(np.sum(cross * cross.T) - np.sum(np.diag(cross) ** 2))
    return term1 + term2


def variance_phi3(design: TransformedDesign, resid: np.ndarray) -> float:
    """Variance estimator for the cross-cluster quadratic form of residuals.

    Twice the sum over cluster pairs (g != h) of the squared block sums
    ``e_[g]' p_[g,h] e_[h]``; nonnegative by construction.
    """
    resid = np.asarray(resid, dtype=float)
    if not np.all(np.isfinite(resid)):
        raise InvalidInput("residuals contain NaN or Inf")
    part = design.partition
    blocks = _pair_block_sums(resid, design.p, resid, part)
    return 2.0 * float(np.sum(blocks * blocks) - np.sum(np.diag(blocks) ** 2))


def lm_stat(design: TransformedDesign, beta0: float, phi2: float) -> float:
    """Studentized leave-one-cluster-out score at the null value.

    The numerator evaluates the score at ``beta0`` (residuals ``y - x b0``),
    not at the estimated coefficient.
    """
    if not phi2 > 0:
        raise VarianceError(f"LM variance must be positive, got {phi2:.3e}")
    numer = offdiag_bilinear(
        design.x, design.p, design.y - design.x * float(beta0), design.partition
    )
    return numer / np.sqrt(phi2)


def ar_stat(design: TransformedDesign, resid: np.ndarray, phi3: float) -> float:
    """Studentized cross-cluster quadratic form of the fitted residuals.

    Uses the estimated residuals throughout (not null-imposed ones), which
    keeps the combined test's power monotone under fixed alternatives.
    """
    if not phi3 > 0:
        raise VarianceError(f"AR variance must be positive, got {phi3:.3e}")
    resid = np.asarray(resid, dtype=float)
    numer = offdiag_bilinear(resid, design.p, resid, design.partition)
    return numer / np.sqrt(phi3)


def jackknife_components(
    design: TransformedDesign, resid: np.ndarray
) -> JackknifeComponents:
    """Assemble the jackknife estimator and both variances for given residuals."""
    beta2, d_hat = jive_beta2(design)
    return JackknifeComponents(
        beta2_hat=beta2,
        d_hat=d_hat,
        phi2_hat=variance_phi2(design, resid),
        phi3_hat=variance_phi3(design, resid),
        x_projected=design.q @ design.x_raw,
    )
