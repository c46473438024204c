"""GMM estimation on the low-dimensional IVs and the cluster-robust Wald statistic.

With partialled data ``(y, x, z)`` and a positive definite weighting matrix
``A``, the scalar GMM estimator is

    beta1 = (x' z A z' x)^{-1} (x' z A z' y),

its cluster-robust sandwich variance is

    phi1 = (x' z A z' x)^{-1} psi (x' z A z' x)^{-1},
    psi  = x' z A omega A z' x,
    omega = sum_g (sum_{i in g} z_i e_i)(sum_{i in g} z_i e_i)',

and the Wald statistic for a null value ``b0`` is ``(beta1 - b0) / sqrt(phi1)``.
The residuals fed into ``omega`` are a caller decision: the inference pipeline
uses residuals from the combined estimator, while the preliminary variance
used to form combination weights uses the estimator's own residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClusterPartition, TransformedDesign
from .exceptions import InvalidInput, VarianceError, WeakDesignError
from .linalg import symmetrize

WEIGHTINGS = ("tsls", "gmm")


@dataclass(frozen=True)
class WaldComponents:
    """Everything the Wald statistic and the combination step need.

    ``x_instrumented`` is the instrument-projected regressor ``z A z' x``,
    whose per-cluster score products feed the correlation estimator between
    the Wald and LM statistics.
    """

    beta1_hat: float
    a_hat: np.ndarray
    omega_hat: np.ndarray
    phi1_hat: float
    psi_hat: float
    x_instrumented: np.ndarray


def cluster_meat(
    z: np.ndarray, resid: np.ndarray, partition: ClusterPartition
) -> np.ndarray:
    """Cluster-aggregated score outer product ``sum_g s_g s_g'``, ``s_g = z_[g]' e_[g]``.

    PSD by construction; with singleton clusters it reduces to the
    heteroskedasticity-robust meat ``sum_i z_i z_i' e_i^2``.
    """
    resid = np.asarray(resid, dtype=float)
    if not np.all(np.isfinite(resid)):
        raise InvalidInput("residuals contain NaN or Inf")
    scores = partition.cluster_sums(z * resid[:, None])
    return symmetrize(scores.T @ scores)


def _gram_pieces(design: TransformedDesign):
    z = design.z_low
    return z, z.T @ design.x, z.T @ design.y


def gmm_beta1(
    design: TransformedDesign, weighting: str = "tsls"
) -> tuple[float, np.ndarray]:
    """Scalar GMM estimator on the low-dimensional IVs and its weighting matrix.

    ``weighting="tsls"`` uses ``A = (z'z)^{-1}``; ``weighting="gmm"`` uses the
    inverse of the cluster meat evaluated at TSLS residuals.
    """
    if weighting not in WEIGHTINGS:
        raise InvalidInput(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    z, zx, zy = _gram_pieces(design)
    a_tsls = np.linalg.inv(symmetrize(z.T @ z))
    beta_tsls = _solve_beta(design, a_tsls, zx, zy)
    if weighting == "tsls":
        return beta_tsls, a_tsls
    resid = design.y - design.x * beta_tsls
    omega_pre = cluster_meat(z, resid, design.partition)
    eigs = np.linalg.eigvalsh(omega_pre)
    if eigs[0] <= 0:
        raise WeakDesignError(
            "preliminary score covariance is singular; cannot form optimal weighting"
        )
    a_gmm = np.linalg.inv(omega_pre)
    return _solve_beta(design, a_gmm, zx, zy), a_gmm


def _solve_beta(design, a_hat, zx, zy) -> float:
    denom = float(zx @ a_hat @ zx)
    if denom <= 1e-12 * float(design.x @ design.x):
        raise WeakDesignError(
            "instrumented variation in x is numerically zero for this weighting"
        )
    return float(zx @ a_hat @ zy) / denom


def wald_components(
    design: TransformedDesign,
    resid: np.ndarray,
    weighting: str = "tsls",
    dof_correction: bool = False,
) -> WaldComponents:
    """Assemble the estimator, weighting, meat, and sandwich for given residuals.

    ``dof_correction`` applies the conventional ``G/(G-1)`` cluster factor to
    the meat.  Off by default: the variance formulas carry no finite-sample
    correction and the exact-equality oracle tests rely on that.
    """
    beta1, a_hat = gmm_beta1(design, weighting)
    z, zx, _ = _gram_pieces(design)
    omega = cluster_meat(z, resid, design.partition)
    if dof_correction:
        g = design.partition.n_clusters
        if g < 2:
            raise InvalidInput("dof correction needs at least two clusters")
        omega = omega * (g / (g - 1.0))
    weighted_score = a_hat @ zx
    psi = float(weighted_score @ omega @ weighted_score)
    denom = float(zx @ weighted_score)
    phi1 = psi / denom**2
    x_instr = z @ weighted_score
    return WaldComponents(
        beta1_hat=beta1,
        a_hat=a_hat,
        omega_hat=omega,
        phi1_hat=phi1,
        psi_hat=psi,
        x_instrumented=x_instr,
    )


def wald_stat(components: WaldComponents, beta0: float) -> float:
    """Studentized distance ``(beta1 - beta0) / sqrt(phi1)``."""
    if not components.phi1_hat > 0:
        raise VarianceError(
            f"Wald variance must be positive, got {components.phi1_hat:.3e}"
        )
    return (components.beta1_hat - float(beta0)) / np.sqrt(components.phi1_hat)
