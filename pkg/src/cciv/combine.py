"""Combined estimation and the optimal three-statistic combination test.

The pipeline runs two IV strategies side by side: GMM on the low-dimensional
IVs (Wald) and the leave-one-cluster-out estimator on the many IVs (LM, AR).
A variance-weighted average of the two point estimates produces the residuals
used by every variance estimator, and the three studentized statistics are
then combined linearly.  With estimated correlations ``(r1, r2)`` the joint
correlation matrix has the pattern

    [[1, r1, 0],
     [r1, 1, r2],
     [0, r2, 1]]

and the test whitens ``(T, LM, AR)`` by the symmetric inverse square root of
that matrix, projects onto the whitened direction of the estimated
noncentralities ``(a1, a2, 0)``, and compares the squared normalized
projection against a one-degree chi-squared critical value.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import jackknife as jk
from . import wald as wd
from .data import ClusteredIVData, TransformedDesign, partial_out
from .exceptions import CcivError, InvalidInput, ValidationFailed, VarianceError
from .linalg import chi2_quantile, inv_sqrt_psd
from .wald import WEIGHTINGS

RHO_CLAMP_MARGIN = 1e-6


@dataclass(frozen=True)
class InferenceConfig:
    """Knobs of the inference pipeline."""

    alpha_level: float = 0.05
    weighting: str = "tsls"
    dof_correction: bool = False

    def __post_init__(self):
        if not (0.0 < self.alpha_level < 1.0):
            raise InvalidInput(f"alpha_level must be in (0,1), got {self.alpha_level}")
        if self.weighting not in WEIGHTINGS:
            raise InvalidInput(
                f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}"
            )


@dataclass(frozen=True)
class CombinationWeights:
    """Estimated combination ingredients.

    ``omega_hat`` mixes the two point estimates; ``(alpha1_hat, alpha2_hat)``
    is the unit vector of relative identification strengths;
    ``(rho1_hat, rho2_hat)`` are the estimated correlations (radially shrunk
    into the open unit disk when necessary, flagged by ``clamped``); ``b_hat``
    is the whitened combination direction.
    """

    omega_hat: float
    alpha1_hat: float
    alpha2_hat: float
    rho1_hat: float
    rho2_hat: float
    clamped: bool
    b_hat: np.ndarray | None = None


@dataclass(frozen=True)
class VarianceEstimates:
    phi1: float
    phi2: float
    phi3: float
    psi: float
    phi1_pre: float
    phi2_pre: float


def combine_weight(phi1_pre: float, phi2_pre: float, d_hat: float) -> float:
    """Weight on the low-dimensional-IV estimate in the combined estimator.

    ``sqrt(phi2_pre / d^2) / (sqrt(phi1_pre) + sqrt(phi2_pre / d^2))``: the
    noisier the many-IV strategy looks, the closer the weight gets to one.
    """
    if not (phi1_pre > 0 and phi2_pre > 0):
        raise VarianceError(
            f"preliminary variances must be positive, got {phi1_pre:.3e}, {phi2_pre:.3e}"
        )
    if d_hat == 0:
        raise VarianceError("leave-one-cluster-out denominator is zero")
    s2 = np.sqrt(phi2_pre / d_hat**2)
    return float(s2 / (np.sqrt(phi1_pre) + s2))


def alpha_hats(phi1: float, phi2: float, d_hat: float) -> tuple[float, float]:
    """Unit vector of relative identification strengths of the two strategies.

    With ``r = phi1 / (phi2 / d^2)``, returns ``(1, sqrt(r)) / sqrt(1 + r)``;
    the squares sum to one by construction.
    """
    if not (phi1 > 0 and phi2 > 0):
        raise VarianceError(
            f"variances must be positive, got {phi1:.3e}, {phi2:.3e}"
        )
    if d_hat == 0:
        raise VarianceError("leave-one-cluster-out denominator is zero")
    r = phi1 / (phi2 / d_hat**2)
    a1 = 1.0 / np.sqrt(1.0 + r)
    return float(a1), float(np.sqrt(r) * a1)


def rho_hats(
    design: TransformedDesign,
    resid: np.ndarray,
    x_instrumented: np.ndarray,
    x_projected: np.ndarray,
    psi_hat: float,
    phi2: float,
    phi3: float,
) -> tuple[float, float, bool]:
    """Estimated correlations of (Wald, LM) and (LM, AR) scores.

    ``rho1`` cross-multiplies the per-cluster score sums of the instrumented
    regressor and the many-IV projected regressor; ``rho2`` cross-multiplies
    the per-cluster-pair linear and quadratic residual forms.  If the pair
    lands outside the open unit disk it is shrunk radially (the joint
    correlation matrix must stay positive definite) and flagged.
    """
    if not (psi_hat > 0 and phi2 > 0 and phi3 > 0):
        raise VarianceError(
            "score variances must be positive, got "
            f"psi={psi_hat:.3e}, phi2={phi2:.3e}, phi3={phi3:.3e}"
        )
    part = design.partition
    resid = np.asarray(resid, dtype=float)
    s_wald = part.cluster_sums(x_instrumented * resid)
    s_jive = part.cluster_sums(x_projected * resid)
    rho1 = float(s_wald @ s_jive) / np.sqrt(psi_hat * phi2)

    lin = part.block_sums(design.x[:, None] * design.p * resid[None, :])
    quad = part.block_sums(resid[:, None] * design.p * resid[None, :])
    cross = float(np.sum(lin * quad) - np.sum(np.diag(lin) * np.diag(quad)))
    rho2 = 2.0 * cross / np.sqrt(phi2 * phi3)

    norm2 = rho1**2 + rho2**2
    limit = 1.0 - RHO_CLAMP_MARGIN
    if norm2 > limit:
        shrink = np.sqrt(limit / norm2)
        return rho1 * shrink, rho2 * shrink, True
    return rho1, rho2, False


def correlation_pattern(rho1: float, rho2: float) -> np.ndarray:
    """Joint correlation matrix of (Wald, LM, AR): LM ties the other two together."""
    return np.array(
        [[1.0, rho1, 0.0], [rho1, 1.0, rho2], [0.0, rho2, 1.0]]
    )


@dataclass(frozen=True)
class CombinedTest:
    """Outcome of the combination step at one null value."""

    tilde_stats: np.ndarray
    combined_stat: float
    critical_value: float
    reject: bool
    weights: CombinationWeights


def combined_test(
    t_stat: float,
    lm: float,
    ar: float,
    weights: CombinationWeights,
    alpha_level: float = 0.05,
) -> CombinedTest:
    """Whiten (T, LM, AR), combine along the estimated direction, and decide."""
    root = inv_sqrt_psd(correlation_pattern(weights.rho1_hat, weights.rho2_hat))
    tilde = root @ np.array([t_stat, lm, ar])
    b_hat = root @ np.array([weights.alpha1_hat, weights.alpha2_hat, 0.0])
    stat = float(b_hat @ tilde) ** 2 / float(b_hat @ b_hat)
    crit = chi2_quantile(1.0 - alpha_level)
    return CombinedTest(
        tilde_stats=tilde,
        combined_stat=stat,
        critical_value=crit,
        reject=bool(stat >= crit),
        weights=replace(weights, b_hat=b_hat),
    )


REPORT_CSV_COLUMNS = (
    "beta0",
    "beta1_hat",
    "beta2_hat",
    "beta_hat",
    "omega_hat",
    "t_stat",
    "lm_stat",
    "ar_stat",
    "t_tilde",
    "lm_tilde",
    "ar_tilde",
    "combined_stat",
    "critical_value",
    "reject",
    "alpha1_hat",
    "alpha2_hat",
    "rho1_hat",
    "rho2_hat",
    "rho_clamped",
    "b1",
    "b2",
    "b3",
    "phi1_hat",
    "phi2_hat",
    "phi3_hat",
    "psi_hat",
    "phi1_pre",
    "phi2_pre",
    "valid",
    "error",
)


@dataclass(frozen=True)
class InferenceReport:
    """Everything the pipeline produced for one null value.

    Serializes to a flat ``key: value`` text block (:meth:`to_text`) and to a
    single CSV row in the column order of :data:`REPORT_CSV_COLUMNS`
    (:meth:`to_csv_row`).
    """

    beta0: float
    beta1_hat: float = float("nan")
    beta2_hat: float = float("nan")
    beta_hat: float = float("nan")
    t_stat: float = float("nan")
    lm_stat: float = float("nan")
    ar_stat: float = float("nan")
    tilde_stats: tuple[float, float, float] = (float("nan"),) * 3
    combined_stat: float = float("nan")
    critical_value: float = float("nan")
    reject: bool = False
    weights: CombinationWeights | None = None
    variances: VarianceEstimates | None = None
    diagnostics: dict = field(default_factory=dict)
    valid: bool = True
    error: str = ""
    error_kind: str = ""  # "", "validation", or "numerical"

    def _weight_tuple(self):
        w = self.weights
        nan = float("nan")
        if w is None:
            return (nan, nan, nan, nan, nan, False, (nan, nan, nan))
        b = tuple(float(v) for v in w.b_hat) if w.b_hat is not None else (nan,) * 3
        return (
            w.omega_hat,
            w.alpha1_hat,
            w.alpha2_hat,
            w.rho1_hat,
            w.rho2_hat,
            w.clamped,
            b,
        )

    def _variance_tuple(self):
        v = self.variances
        nan = float("nan")
        if v is None:
            return (nan,) * 6
        return (v.phi1, v.phi2, v.phi3, v.psi, v.phi1_pre, v.phi2_pre)

    def to_text(self) -> str:
        omega, a1, a2, r1, r2, clamped, b = self._weight_tuple()
        phi1, phi2, phi3, psi, phi1p, phi2p = self._variance_tuple()
        lines = [
            f"beta0: {self.beta0:.6f}",
            f"beta1_hat: {self.beta1_hat:.6f}",
            f"beta2_hat: {self.beta2_hat:.6f}",
            f"beta_hat: {self.beta_hat:.6f}",
            f"omega_hat: {omega:.6f}",
            f"T: {self.t_stat:.6f}",
            f"LM: {self.lm_stat:.6f}",
            f"AR: {self.ar_stat:.6f}",
            f"T_tilde: {self.tilde_stats[0]:.6f}",
            f"LM_tilde: {self.tilde_stats[1]:.6f}",
            f"AR_tilde: {self.tilde_stats[2]:.6f}",
            f"combined_stat: {self.combined_stat:.6f}",
            f"critical_value: {self.critical_value:.6f}",
            f"reject: {'true' if self.reject else 'false'}",
            f"alpha1_hat: {a1:.6f}",
            f"alpha2_hat: {a2:.6f}",
            f"rho1_hat: {r1:.6f}",
            f"rho2_hat: {r2:.6f}",
            f"rho_clamped: {'true' if clamped else 'false'}",
            f"b_hat: {b[0]:.6f} {b[1]:.6f} {b[2]:.6f}",
            f"phi1_hat: {phi1:.6g}",
            f"phi2_hat: {phi2:.6g}",
            f"phi3_hat: {phi3:.6g}",
            f"psi_hat: {psi:.6g}",
            f"phi1_pre: {phi1p:.6g}",
            f"phi2_pre: {phi2p:.6g}",
            f"validation: {self.diagnostics.get('validation', 'not run')}",
            f"largest_cluster_score_share: "
            f"{self.diagnostics.get('largest_cluster_score_share', float('nan')):.6f}",
            f"valid: {'true' if self.valid else 'false'}",
            f"error: {self.error}",
        ]
        return "\n".join(lines)

    def to_csv_row(self) -> str:
        omega, a1, a2, r1, r2, clamped, b = self._weight_tuple()
        phi1, phi2, phi3, psi, phi1p, phi2p = self._variance_tuple()
        num = "%.12g"
        cells = [
            num % self.beta0,
            num % self.beta1_hat,
            num % self.beta2_hat,
            num % self.beta_hat,
            num % omega,
            num % self.t_stat,
            num % self.lm_stat,
            num % self.ar_stat,
            num % self.tilde_stats[0],
            num % self.tilde_stats[1],
            num % self.tilde_stats[2],
            num % self.combined_stat,
            num % self.critical_value,
            "true" if self.reject else "false",
            num % a1,
            num % a2,
            num % r1,
            num % r2,
            "true" if clamped else "false",
            num % b[0],
            num % b[1],
            num % b[2],
            num % phi1,
            num % phi2,
            num % phi3,
            num % psi,
            num % phi1p,
            num % phi2p,
            "true" if self.valid else "false",
            self.error.replace(",", ";"),
        ]
        return ",".join(cells)


class InferencePipeline:
    """All null-independent computation, reusable across a grid of null values.

    Everything except the T and LM numerators is a function of the data alone:
    the combined residuals, every variance estimator, the AR statistic, the
    combination weights, and the whitening matrix are computed once here.
    """

    def __init__(self, data: ClusteredIVData, config: InferenceConfig | None = None):
        self.config = config or InferenceConfig()
        design = partial_out(data)
        self.design = design
        report = design.validation

        beta1, _ = wd.gmm_beta1(design, self.config.weighting)
        comp1_pre = wd.wald_components(
            design,
            design.y - design.x * beta1,
            self.config.weighting,
            self.config.dof_correction,
        )
        beta2, d_hat = jk.jive_beta2(design)
        phi2_pre = jk.variance_phi2(design, design.y - design.x * beta2)
        if not phi2_pre > 0:
            raise VarianceError(
                f"preliminary jackknife variance is not positive ({phi2_pre:.3e})"
            )
        omega = combine_weight(comp1_pre.phi1_hat, phi2_pre, d_hat)
        beta_hat = omega * beta1 + (1.0 - omega) * beta2
        resid = design.y - design.x * beta_hat

        comp1 = wd.wald_components(
            design, resid, self.config.weighting, self.config.dof_correction
        )
        comps2 = jk.jackknife_components(design, resid)
        if not comps2.phi2_hat > 0:
            raise VarianceError(
                f"jackknife variance is not positive ({comps2.phi2_hat:.3e})"
            )
        a1, a2 = alpha_hats(comp1.phi1_hat, comps2.phi2_hat, comps2.d_hat)
        rho1, rho2, clamped = rho_hats(
            design,
            resid,
            comp1.x_instrumented,
            comps2.x_projected,
            comp1.psi_hat,
            comps2.phi2_hat,
            comps2.phi3_hat,
        )
        self.resid = resid
        self.wald = comp1
        self.jackknife = comps2
        self.weights = CombinationWeights(
            omega_hat=omega,
            alpha1_hat=a1,
            alpha2_hat=a2,
            rho1_hat=rho1,
            rho2_hat=rho2,
            clamped=clamped,
        )
        self.variances = VarianceEstimates(
            phi1=comp1.phi1_hat,
            phi2=comps2.phi2_hat,
            phi3=comps2.phi3_hat,
            psi=comp1.psi_hat,
            phi1_pre=comp1_pre.phi1_hat,
            phi2_pre=phi2_pre,
        )
        self.ar = jk.ar_stat(design, resid, comps2.phi3_hat)
        # The LM numerator is linear in the null value; cache both coefficients
        # so a grid of nulls costs no additional bilinear forms.
        self._lm_score_y = jk.offdiag_bilinear(design.x, design.p, design.y, design.partition)

        shares = design.partition.cluster_sums(comp1.x_instrumented**2)
        total = float(shares.sum())
        self.diagnostics = {
            "validation": f"{sum(c.passed for c in report.checks)}/{len(report.checks)} checks passed",
            "largest_cluster_score_share": float(shares.max()) / total
            if total > 0
            else float("nan"),
        }

    def report_at(self, beta0: float) -> InferenceReport:
        t_stat = wd.wald_stat(self.wald, beta0)
        lm = (self._lm_score_y - float(beta0) * self.jackknife.d_hat) / np.sqrt(
            self.jackknife.phi2_hat
        )
        outcome = combined_test(
            t_stat, lm, self.ar, self.weights, self.config.alpha_level
        )
        return InferenceReport(
            beta0=float(beta0),
            beta1_hat=self.wald.beta1_hat,
            beta2_hat=self.jackknife.beta2_hat,
            beta_hat=self.weights.omega_hat * self.wald.beta1_hat
            + (1.0 - self.weights.omega_hat) * self.jackknife.beta2_hat,
            t_stat=t_stat,
            lm_stat=lm,
            ar_stat=self.ar,
            tilde_stats=tuple(float(v) for v in outcome.tilde_stats),
            combined_stat=outcome.combined_stat,
            critical_value=outcome.critical_value,
            reject=outcome.reject,
            weights=outcome.weights,
            variances=self.variances,
            diagnostics=dict(self.diagnostics),
        )


def _invalid_report(beta0: float, exc: CcivError) -> InferenceReport:
    kind = "validation" if isinstance(exc, ValidationFailed) else "numerical"
    return InferenceReport(
        beta0=float(beta0),
        valid=False,
        error=f"{type(exc).__name__}: {exc}",
        error_kind=kind,
    )


def run_inference(
    data: ClusteredIVData, beta0: float, config: InferenceConfig | None = None
) -> InferenceReport:
    """Full pipeline at one null value; failures yield an invalid report."""
    try:
        return InferencePipeline(data, config).report_at(beta0)
    except CcivError as exc:
        return _invalid_report(beta0, exc)


def run_inference_grid(
    data: ClusteredIVData, beta0_grid, config: InferenceConfig | None = None
) -> list[InferenceReport]:
    """Pipeline once, reports for every null value in the grid."""
    grid = [float(b) for b in np.atleast_1d(beta0_grid)]
    try:
        pipeline = InferencePipeline(data, config)
    except CcivError as exc:
        return [_invalid_report(b, exc) for b in grid]
    return [pipeline.report_at(b) for b in grid]
