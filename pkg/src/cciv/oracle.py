"""Independent brute-force references for the fast-path statistics.

The functions here recompute every cluster-sum statistic in literal loop form,
exactly as the formulas read, with no shared code with the fast
implementations.  They are deliberately slow (an input-size guardrail keeps
them test-only) and exist so the fast paths can be pinned down by
exact-equality tests.

The module also hosts a Monte Carlo simulation of the trivariate-normal limit
experiment that the combination test is derived in, used to check the
optimality claim empirically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClusterPartition, TransformedDesign
from .exceptions import InvalidInput
from .linalg import chi2_quantile, inv_sqrt_psd

NAIVE_MAX_N = 200


def _guard(partition: ClusterPartition) -> list[range]:
    if partition.n > NAIVE_MAX_N:
        raise InvalidInput(
            f"naive reference paths are capped at n={NAIVE_MAX_N}, got {partition.n}"
        )
    return [range(int(a), int(b)) for a, b in zip(partition.starts, partition.stops)]


def naive_offdiag_bilinear(
    a: np.ndarray, b_mat: np.ndarray, b: np.ndarray, partition: ClusterPartition
) -> float:
    """Quadruple-loop sum of ``a_i B_ij b_j`` over pairs in different clusters."""
    blocks = _guard(partition)
    a_l = np.asarray(a, dtype=float).tolist()
    b_l = np.asarray(b, dtype=float).tolist()
    m = np.asarray(b_mat, dtype=float).tolist()
    total = 0.0
    for g, block_g in enumerate(blocks):
        for h, block_h in enumerate(blocks):
            if h == g:
                continue
            for i in block_g:
                for j in block_h:
                    total += a_l[i] * m[i][j] * b_l[j]
    return total


def naive_cluster_meat(
    z: np.ndarray, resid: np.ndarray, partition: ClusterPartition
) -> np.ndarray:
    """Per-cluster accumulation of the score outer products, one loop at a time."""
    blocks = _guard(partition)
    z = np.asarray(z, dtype=float)
    resid = np.asarray(resid, dtype=float)
    d = z.shape[1]
    meat = np.zeros((d, d))
    for block in blocks:
        score = np.zeros(d)
        for i in block:
            for c in range(d):
                score[c] += z[i, c] * resid[i]
        meat += np.outer(score, score)
    return meat


def naive_triple_product(
    mw: np.ndarray, p: np.ndarray, p_diag: np.ndarray
) -> np.ndarray:
    """Loop-form ``mw (p - p_diag) mw`` (cubic cost; small inputs only)."""
    n = mw.shape[0]
    if n > NAIVE_MAX_N:
        raise InvalidInput(f"naive reference paths are capped at n={NAIVE_MAX_N}")
    mw_l = np.asarray(mw, dtype=float).tolist()
    inner = (np.asarray(p, dtype=float) - np.asarray(p_diag, dtype=float)).tolist()
    tmp = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for t in range(n):
                acc += inner[i][t] * mw_l[t][j]
            tmp[i][j] = acc
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for t in range(n):
                acc += mw_l[i][t] * tmp[t][j]
            out[i, j] = acc
    return out


def naive_phi2(design: TransformedDesign, resid: np.ndarray) -> float:
    """Literal two-term leave-one-cluster-out variance for the LM score."""
    blocks = _guard(design.partition)
    x_raw = design.x_raw.tolist()
    e = np.asarray(resid, dtype=float).tolist()
    q = design.q.tolist()
    term1 = 0.0
    for g, block_g in enumerate(blocks):
        acc = 0.0
        for h, block_h in enumerate(blocks):
            if h == g:
                continue
            for j in block_h:
                for i in block_g:
                    acc += x_raw[j] * q[j][i] * e[i]
        term1 += acc * acc
    term2 = 0.0
    for g, block_g in enumerate(blocks):
        for h, block_h in enumerate(blocks):
            if h == g:
                continue
            forward = 0.0
            backward = 0.0
            for i in block_g:
                for j in block_h:
                    forward += x_raw[i] * q[i][j] * e[j]
                    backward += x_raw[j] * q[j][i] * e[i]
            term2 += forward * backward
    return term1 + term2


def naive_phi3(design: TransformedDesign, resid: np.ndarray) -> float:
    """Literal ``2 sum_{g != h} (e_[g]' p_[g,h] e_[h])^2``."""
    blocks = _guard(design.partition)
    e = np.asarray(resid, dtype=float).tolist()
    p = design.p.tolist()
    total = 0.0
    for g, block_g in enumerate(blocks):
        for h, block_h in enumerate(blocks):
            if h == g:
                continue
            acc = 0.0
            for i in block_g:
                for j in block_h:
                    acc += e[i] * p[i][j] * e[j]
            total += acc * acc
    return 2.0 * total


def naive_rho(
    design: TransformedDesign, resid: np.ndarray, a_hat: np.ndarray | None = None
) -> tuple[float, float]:
    """Loop-form correlation estimators (before any clamping).

    Recomputes its own ingredients — the instrumented regressor, the projected
    regressor, the score variance, and both jackknife variances — in literal
    form, so agreement with the fast path checks the entire chain.
    """
    blocks = _guard(design.partition)
    n = design.n
    z = design.z_low
    if a_hat is None:
        a_hat = np.linalg.inv(z.T @ z)
    e = np.asarray(resid, dtype=float).tolist()

    proj_z = (z @ a_hat @ z.T).tolist()
    x_l = design.x.tolist()
    x_instr = [sum(proj_z[i][j] * x_l[j] for j in range(n)) for i in range(n)]

    pm = design.p.tolist()
    pd = design.p_diag.tolist()
    mw = design.mw.tolist()
    tmp = [
        sum((pm[i][j] - pd[i][j]) * x_l[j] for j in range(n)) for i in range(n)
    ]
    x_proj = [sum(mw[i][t] * tmp[t] for t in range(n)) for i in range(n)]

    meat = naive_cluster_meat(z, resid, design.partition)
    zx = z.T @ design.x
    psi = float(zx @ a_hat @ meat @ a_hat @ zx)
    phi2 = naive_phi2(design, resid)
    phi3 = naive_phi3(design, resid)

    s1 = 0.0
    for block in blocks:
        c_wald = 0.0
        c_jive = 0.0
        for i in block:
            c_wald += x_instr[i] * e[i]
            c_jive += x_proj[i] * e[i]
        s1 += c_wald * c_jive
    rho1 = s1 / np.sqrt(psi * phi2)

    s2 = 0.0
    for g, block_g in enumerate(blocks):
        for h, block_h in enumerate(blocks):
            if h == g:
                continue
            lin = 0.0
            quad = 0.0
            for i in block_g:
                for j in block_h:
                    lin += x_l[i] * pm[i][j] * e[j]
                    quad += e[i] * pm[i][j] * e[j]
            s2 += lin * quad
    rho2 = 2.0 * s2 / np.sqrt(phi2 * phi3)
    return float(rho1), float(rho2)


# --- limit experiment ------------------------------------------------------


@dataclass(frozen=True)
class LimitExperimentSpec:
    """Trivariate-normal limit experiment under a local alternative ``delta``.

    The observables have mean ``(a1 delta, a2 delta, 0)`` and correlation
    matrix ``[[1, rho1, 0], [rho1, 1, rho2], [0, rho2, 1]]``, which must be
    positive definite (``rho1^2 + rho2^2 < 1``).
    """

    a1: float = 1.0
    a2: float = 1.0
    rho1: float = 0.0
    rho2: float = 0.0
    delta: float = 0.0
    replications: int = 100_000
    seed: int = 20260810
    alpha_level: float = 0.05

    def __post_init__(self):
        if abs(self.rho1) >= 1 or abs(self.rho2) >= 1:
            raise InvalidInput("correlations must lie strictly inside (-1, 1)")
        if self.rho1**2 + self.rho2**2 >= 1.0:
            raise InvalidInput(
                "rho1^2 + rho2^2 must be below one for a positive definite "
                f"correlation matrix, got {self.rho1**2 + self.rho2**2:.4f}"
            )
        if self.replications < 1:
            raise InvalidInput("need at least one draw")
        if not (0.0 < self.alpha_level < 1.0):
            raise InvalidInput("alpha_level must lie in (0, 1)")

    def correlation(self) -> np.ndarray:
        return np.array(
            [
                [1.0, self.rho1, 0.0],
                [self.rho1, 1.0, self.rho2],
                [0.0, self.rho2, 1.0],
            ]
        )


@dataclass(frozen=True)
class ComparisonRow:
    delta: float
    rate_combined: float
    rate_wald_only: float
    rate_lm_only: float
    mc_std_err: float


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]

    def to_csv(self) -> str:
        lines = ["delta,reject_combined,reject_wald_only,reject_lm_only,mc_std_err"]
        for r in self.rows:
            lines.append(
                f"{r.delta:.10g},{r.rate_combined:.10g},{r.rate_wald_only:.10g},"
                f"{r.rate_lm_only:.10g},{r.mc_std_err:.10g}"
            )
        return "\n".join(lines) + "\n"


def _chol_pattern(rho1: float, rho2: float) -> np.ndarray:
    # Closed-form lower Cholesky factor of [[1,r1,0],[r1,1,r2],[0,r2,1]]:
    #   row 1: (1, 0, 0)
    #   row 2: (r1, s, 0)            with s = sqrt(1 - r1^2)
    #   row 3: (0, r2/s, sqrt(1 - r2^2/s^2))
    # Row products reproduce the matrix; the (3,3) entry is real iff
    # r1^2 + r2^2 < 1.
    s = np.sqrt(1.0 - rho1**2)
    return np.array(
        [
            [1.0, 0.0, 0.0],
            [rho1, s, 0.0],
            [0.0, rho2 / s, np.sqrt(1.0 - rho2**2 / s**2)],
        ]
    )


def mc_limit_experiment(spec: LimitExperimentSpec, stream_key: int = 0) -> ComparisonRow:
    """Rejection rates of the combined test and its single-statistic rivals.

    Draws from the limit experiment, applies the known-parameter combination
    rule (whiten, project on the whitened mean direction, square, compare with
    the one-degree chi-squared critical value), and compares against using the
    first or second coordinate alone.
    """
    rng = np.random.Generator(
        np.random.Philox(
            np.random.SeedSequence(entropy=spec.seed, spawn_key=(stream_key,))
        )
    )
    chol = _chol_pattern(spec.rho1, spec.rho2)
    mean = np.array([spec.a1 * spec.delta, spec.a2 * spec.delta, 0.0])
    draws = rng.standard_normal((spec.replications, 3)) @ chol.T + mean

    root = inv_sqrt_psd(spec.correlation())
    direction = root @ np.array([spec.a1, spec.a2, 0.0])
    crit = chi2_quantile(1.0 - spec.alpha_level)

    whitened = draws @ root.T
    combined = (whitened @ direction) ** 2 / float(direction @ direction)
    rates = np.array(
        [
            np.mean(combined >= crit),
            np.mean(draws[:, 0] ** 2 >= crit),
            np.mean(draws[:, 1] ** 2 >= crit),
        ]
    )
    worst = float(np.max(rates * (1.0 - rates)))
    return ComparisonRow(
        delta=spec.delta,
        rate_combined=float(rates[0]),
        rate_wald_only=float(rates[1]),
        rate_lm_only=float(rates[2]),
        mc_std_err=float(np.sqrt(worst / spec.replications)),
    )


def limit_experiment_table(
    a1: float,
    a2: float,
    rho1: float,
    rho2: float,
    deltas,
    replications: int = 100_000,
    seed: int = 20260810,
    alpha_level: float = 0.05,
) -> ComparisonTable:
    """One comparison row per local-alternative value, independent streams."""
    rows = []
    for idx, delta in enumerate(deltas):
        spec = LimitExperimentSpec(
            a1=a1,
            a2=a2,
            rho1=rho1,
            rho2=rho2,
            delta=float(delta),
            replications=replications,
            seed=seed,
            alpha_level=alpha_level,
        )
        rows.append(mc_limit_experiment(spec, stream_key=idx))
    return ComparisonTable(rows=tuple(rows))
