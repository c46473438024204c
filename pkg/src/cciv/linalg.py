"""Dense symmetric linear algebra primitives shared by the statistical modules.

Everything here operates on plain ``numpy`` arrays.  Symmetric matrices are
kept exactly symmetric by mirroring (``(M + M.T) / 2``) on construction, so
downstream equality tests never see asymmetry noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.stats

from .exceptions import IllConditioned, InvalidInput, NumericalFailure, RankDeficient

#: Inversions refuse to proceed past this condition number instead of
#: silently regularizing a bad design matrix.
CONDITION_LIMIT = 1e12


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return the exactly symmetric part ``(m + m.T) / 2`` of a square matrix."""
    m = np.asarray(m, dtype=float)
    return (m + m.T) / 2.0


@dataclass(frozen=True)
class EigDecomposition:
    """Spectral decomposition ``V diag(w) V.T`` of a symmetric matrix.

    ``eigenvalues`` are sorted in descending order; ``eigenvectors`` holds the
    matching orthonormal eigenvectors as columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return symmetrize((v * self.eigenvalues) @ v.T)


def sym_eig(m: np.ndarray) -> EigDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Raises
    ------
    InvalidInput
        If ``m`` is not square, not finite, or not symmetric.
    NumericalFailure
        If the underlying QL/QR iteration does not converge.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInput("matrix contains NaN or Inf")
    if not np.array_equal(m, m.T):
        scale = max(1.0, float(np.abs(m).max()))
        if np.abs(m - m.T).max() > 1e-12 * scale:
            raise InvalidInput("matrix is not symmetric")
        m = symmetrize(m)
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition did not converge: {exc}") from exc
    order = np.argsort(w)[::-1]
    return EigDecomposition(eigenvalues=w[order], eigenvectors=v[:, order])


def inv_sqrt_psd(m: np.ndarray, eigen_floor: float = 1e-8) -> np.ndarray:
    """Symmetric inverse square root ``R`` of a PSD matrix, ``R R m = I``.

    The symmetric (eigen-based) branch is used rather than a Cholesky factor:
    applied to a correlation matrix it makes the resulting statistics invariant
    to the ordering of the variables.

    Raises
    ------
    IllConditioned
        If the smallest eigenvalue is below ``eigen_floor``.  The exception
        carries ``min_eigenvalue``.
    """
    dec = sym_eig(m)
    w_min = float(dec.eigenvalues[-1])
    if w_min < eigen_floor:
        raise IllConditioned(
            f"matrix not positive definite enough: min eigenvalue {w_min:.3e} "
            f"< floor {eigen_floor:.3e}",
            min_eigenvalue=w_min,
        )
    v = dec.eigenvectors
    return symmetrize((v / np.sqrt(dec.eigenvalues)) @ v.T)


def projection(a: np.ndarray) -> np.ndarray:
    """Orthogonal projection matrix onto the column space of ``a``.

    Built from the thin QR factorization of ``a`` so it is idempotent and
    symmetric to near machine precision; its trace equals the column rank.

    Raises
    ------
    RankDeficient
        If ``a.T a`` looks singular beyond :data:`CONDITION_LIMIT` (estimated
        from the diagonal of the QR factor).  Carries ``condition_estimate``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if not np.all(np.isfinite(a)):
        raise InvalidInput("design matrix contains NaN or Inf")
    q, r = np.linalg.qr(a, mode="reduced")
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        raise InvalidInput("design matrix has no columns")
    d_max, d_min = float(diag.max()), float(diag.min())
    # |diag(R)| ratio estimates cond(a); cond(a.T a) is its square.
    cond = np.inf if d_min == 0.0 else (d_max / d_min) ** 2
    if cond > CONDITION_LIMIT:
        raise RankDeficient(
            f"column space is rank deficient (cond(A'A) ~ {cond:.3e})",
            condition_estimate=cond,
        )
    return symmetrize(q @ q.T)


def annihilator(a: np.ndarray | None, n: int) -> np.ndarray:
    """Residual-maker ``I - projection(a)``; identity when ``a`` is absent/empty."""
    if a is None or (hasattr(a, "shape") and np.asarray(a).shape[-1] == 0):
        return np.eye(n)
    return symmetrize(np.eye(n) - projection(a))


def chi2_quantile(prob: float) -> float:
    """Quantile of the chi-squared distribution with one degree of freedom."""
    if not (0.0 < prob < 1.0):
        raise InvalidInput(f"probability must lie strictly in (0, 1), got {prob!r}")
    return float(scipy.stats.chi2.ppf(prob, df=1))
