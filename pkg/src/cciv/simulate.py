"""Monte Carlo engine: clustered panel IV data generator and power curves.

The generated design is a linear panel IV regression with cluster-level fixed
effects (absorbed by within-cluster demeaning before the data leave this
module), equicorrelated instruments within clusters, a moving-average error
structure within clusters, and control-driven heteroskedasticity.  A single
strength knob scales the first-stage coefficient vector, whose entries decay
geometrically; the low-dimensional IV is the cross-column average of the many
instruments (or, optionally, an extra injected instrument direction with its
own strength knob, which keeps the many-IV side genuinely weak while the
low-dimensional side is strong).

Replication streams are counter-based: the generator for replication ``r`` is
seeded from ``(seed, r)``, so results are independent of execution order and
of how replications are distributed over worker processes.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .combine import InferenceConfig, run_inference_grid
from .data import ClusteredIVData, ClusterPartition, partial_out
from .exceptions import InvalidInput
from .linalg import chi2_quantile, projection

LOWDIM_MODES = ("mean", "injected")
TEST_NAMES = ("wald", "lm", "ar", "combined")


@dataclass(frozen=True)
class DGPConfig:
    """Every knob of the simulation design.

    ``phi`` is the geometric decay of the first-stage coefficients across the
    K instruments (``phi = 0``: only the first instrument matters; ``phi = 1``:
    all equally), ``psi`` the identification strength of the many IVs,
    ``rho`` the endogeneity control, ``theta1`` the within-cluster instrument
    equicorrelation, ``theta2`` the within-cluster moving-average decay of the
    errors, and ``gamma_dmn`` the cluster-size allocation exponent.

    ``lowdim_mode="mean"`` builds the low-dimensional IV as the row average of
    the many instruments; ``"injected"`` draws a fresh instrument direction,
    adds it to the first stage with strength ``psi_lowdim``, and supplies
    exactly that direction as the low-dimensional IV.

    ``demean_clusters`` controls whether the cluster effects are absorbed by
    within-cluster demeaning before the data leave the generator (the default,
    mirroring how cluster fixed effects are meant to be handled).  When off,
    the cluster effects stay in the errors as cluster-level variance
    components; the instruments are independent of them, so the tests remain
    valid, just noisier.

    ``heteroskedastic`` and ``shared_cluster_shock`` are unit-test toggles:
    disabling them yields constant error scale and independent cluster shocks
    in the two equations, respectively.
    """

    n: int = 400
    n_clusters: int = 100
    n_many: int = 40
    n_controls: int = 5
    phi: float = 1.0
    psi: float = 30.0
    rho: float = 0.5
    theta1: float = 0.5
    theta2: float = 0.7
    beta_true: float = 0.3
    gamma_dmn: float = 2.0
    beta0_grid: tuple = (0.3,)
    replications: int = 1000
    seed: int = 20260810
    alpha_level: float = 0.05
    weighting: str = "tsls"
    lowdim_mode: str = "mean"
    psi_lowdim: float = 30.0
    demean_clusters: bool = True
    heteroskedastic: bool = True
    shared_cluster_shock: bool = True

    def __post_init__(self):
        if self.n_clusters > self.n:
            raise InvalidInput("more clusters than observations")
        if not self.n_many < self.n:
            raise InvalidInput("the many-IV count must be below the sample size")
        if not (0.0 <= self.phi <= 1.0):
            raise InvalidInput(f"phi must lie in [0, 1], got {self.phi}")
        if not self.psi > 0:
            raise InvalidInput(f"psi must be positive, got {self.psi}")
        if not (-1.0 < self.rho < 1.0):
            raise InvalidInput(f"rho must lie in (-1, 1), got {self.rho}")
        if not (0.0 <= self.theta1 < 1.0):
            raise InvalidInput(f"theta1 must lie in [0, 1), got {self.theta1}")
        if len(self.beta0_grid) == 0:
            raise InvalidInput("beta0_grid must not be empty")
        if self.replications < 1:
            raise InvalidInput("need at least one replication")
        if not (0.0 < self.alpha_level < 1.0):
            raise InvalidInput(f"alpha_level must lie in (0, 1), got {self.alpha_level}")
        if self.lowdim_mode not in LOWDIM_MODES:
            raise InvalidInput(f"lowdim_mode must be one of {LOWDIM_MODES}")
        object.__setattr__(self, "beta0_grid", tuple(float(b) for b in self.beta0_grid))


@dataclass(frozen=True)
class SimulationTruth:
    """What the generator knows: coefficients and the true first-stage mean."""

    beta: float
    pi: np.ndarray
    lowdim_coef: float
    first_stage_mean: np.ndarray


def replication_rng(seed: int, rep_index: int) -> np.random.Generator:
    """Counter-based generator for one replication, independent of order."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(rep_index,)))
    )


def gen_cluster_sizes(n: int, n_clusters: int, gamma: float = 2.0) -> np.ndarray:
    """Deterministic cluster sizes: one observation each, remainder ~ g^gamma.

    Proportional allocation with largest-remainder rounding (ties resolved
    toward later clusters), so sizes are nondecreasing and sum exactly to n.
    """
    if n_clusters > n:
        raise InvalidInput(f"cannot split {n} observations into {n_clusters} clusters")
    if n_clusters < 1:
        raise InvalidInput("need at least one cluster")
    if gamma < 0:
        raise InvalidInput("size exponent must be nonnegative")
    spare = n - n_clusters
    weights = np.arange(1, n_clusters + 1, dtype=float) ** gamma
    quota = spare * weights / weights.sum()
    base = np.floor(quota).astype(np.int64)
    remainder = spare - int(base.sum())
    if remainder > 0:
        frac = quota - base
        # stable argsort ascending on (frac, index); take the top `remainder`
        order = np.argsort(frac, kind="stable")
        base[order[-remainder:]] += 1
    return 1 + base


def _cluster_ma_filter(
    x: np.ndarray, partition: ClusterPartition, theta2: float
) -> np.ndarray:
    """Within-cluster moving average: row r gets ``sum_lag theta2^lag x[r-lag]``."""
    if theta2 == 0.0:
        return x.copy()
    labels = partition.labels()
    pos = np.arange(partition.n) - partition.starts[labels]
    out = x.copy()
    for lag in range(1, int(partition.sizes.max())):
        rows = np.nonzero(pos >= lag)[0]
        out[rows] += theta2**lag * x[rows - lag]
    return out


def _equicorrelated_normal(
    rng: np.random.Generator, partition: ClusterPartition, n_cols: int, theta1: float
) -> np.ndarray:
    """Columns of unit-variance normals with within-cluster correlation theta1."""
    shared = rng.standard_normal((partition.n_clusters, n_cols))
    idio = rng.standard_normal((partition.n, n_cols))
    labels = partition.labels()
    return np.sqrt(theta1) * shared[labels] + np.sqrt(1.0 - theta1) * idio


def gen_dataset(
    config: DGPConfig, rep_index: int
) -> tuple[ClusteredIVData, SimulationTruth]:
    """One replication of the design, already demeaned at the cluster level.

    The fixed draw order (cluster effects, controls, instruments, optional
    injected instrument, idiosyncratic errors, cluster shocks) pins down the
    stream layout for a given ``(seed, rep_index)``.
    """
    rng = replication_rng(config.seed, rep_index)
    sizes = gen_cluster_sizes(config.n, config.n_clusters, config.gamma_dmn)
    part = ClusterPartition(sizes)
    n, g, k, d_w = config.n, config.n_clusters, config.n_many, config.n_controls
    labels = part.labels()

    trend = np.arange(1, g + 1) / g
    alpha_fe = rng.standard_normal(g) + trend
    xi_fe = rng.standard_normal(g) + trend

    w = rng.standard_normal((n, d_w)) if d_w else np.empty((n, 0))
    z_many = _equicorrelated_normal(rng, part, k, config.theta1)
    zeta = (
        _equicorrelated_normal(rng, part, 1, config.theta1)[:, 0]
        if config.lowdim_mode == "injected"
        else np.zeros(n)
    )

    eps = rng.standard_normal(n)
    eta = rng.standard_normal(n)
    if config.shared_cluster_shock:
        shock_e = shock_v = rng.standard_normal(g)
    else:
        shock_e = rng.standard_normal(g)
        shock_v = rng.standard_normal(g)

    coef = np.full(d_w, 1.0 / np.sqrt(d_w)) if d_w else np.empty(0)
    w_signal = w @ coef
    if config.heteroskedastic:
        sigma = np.sqrt((0.2 + w_signal**2) / 2.4)
    else:
        sigma = np.ones(n)

    mix = np.sqrt(1.0 - config.rho**2)
    e_raw = config.rho * eps + mix * sigma * shock_e[labels]
    v_raw = config.rho * eta + mix * sigma * shock_v[labels]
    e = _cluster_ma_filter(e_raw, part, config.theta2)
    v = _cluster_ma_filter(v_raw, part, config.theta2)

    pi = config.phi ** np.arange(k, dtype=float)
    pi *= np.sqrt(config.psi * np.sqrt(k) / n) / np.linalg.norm(pi)
    lowdim_coef = (
        np.sqrt(config.psi_lowdim / n) if config.lowdim_mode == "injected" else 0.0
    )

    x = z_many @ pi + zeta * lowdim_coef + w_signal + xi_fe[labels] + v
    y = x * config.beta_true + w_signal + alpha_fe[labels] + e
    z_low = zeta if config.lowdim_mode == "injected" else z_many.mean(axis=1)

    fsm_extra = 0.0
    if config.demean_clusters:
        y = part.demean_within(y)
        x = part.demean_within(x)
        w = part.demean_within(w) if d_w else w
        z_many = part.demean_within(z_many)
        z_low = part.demean_within(z_low)
    else:
        # cluster effects stay in the errors; their known mean is part of the
        # true first stage
        fsm_extra = trend[labels]

    data = ClusteredIVData(
        y=y, x=x, w=w, z_many=z_many, z_low=z_low[:, None], partition=part
    )
    truth = SimulationTruth(
        beta=config.beta_true,
        pi=pi,
        lowdim_coef=float(lowdim_coef),
        first_stage_mean=z_many @ pi
        + z_low * lowdim_coef
        + (w @ coef if d_w else 0.0)
        + fsm_extra,
    )
    return data, truth


def concentration_diagnostics(data: ClusteredIVData, truth: SimulationTruth) -> dict:
    """Identification-strength proxies computed from the true first stage.

    ``lowdim`` projects the true first-stage signal onto the (partialled)
    low-dimensional IVs, ``many`` onto the many-IV span; comparable magnitudes
    mean the two strategies carry similar identification strength.
    """
    design = partial_out(data)
    signal = design.mw @ truth.first_stage_mean
    proj_low = projection(design.z_low)
    return {
        "lowdim": float(signal @ proj_low @ signal),
        "many": float(signal @ design.p @ signal),
    }


@dataclass(frozen=True)
class PowerTable:
    """Rejection rates per null value for the four tests.

    ``mc_std_err`` is the largest binomial standard error
    ``sqrt(p (1 - p) / R)`` across the four rates in the row, computed with the
    number of valid replications.
    """

    beta0: np.ndarray
    rates: np.ndarray  # shape (len(beta0), 4), columns in TEST_NAMES order
    mc_std_err: np.ndarray
    invalid_count: int
    replications: int

    def rate(self, test: str) -> np.ndarray:
        return self.rates[:, TEST_NAMES.index(test)]

    def to_csv(self) -> str:
        lines = [
            "beta0,reject_wald,reject_lm,reject_ar,reject_combined,mc_std_err,invalid_count"
        ]
        for i, b in enumerate(self.beta0):
            cells = [f"{b:.10g}"]
            cells += [f"{r:.10g}" for r in self.rates[i]]
            cells.append(f"{self.mc_std_err[i]:.10g}")
            cells.append(str(self.invalid_count))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _replication_rejections(
    config: DGPConfig, rep_index: int, infer_config: InferenceConfig, crit: float
) -> tuple[np.ndarray, bool]:
    data, _ = gen_dataset(config, rep_index)
    reports = run_inference_grid(data, config.beta0_grid, infer_config)
    if not all(r.valid for r in reports):
        return np.zeros((len(config.beta0_grid), 4), dtype=np.uint8), False
    out = np.empty((len(config.beta0_grid), 4), dtype=np.uint8)
    for i, rep in enumerate(reports):
        out[i, 0] = rep.t_stat**2 >= crit
        out[i, 1] = rep.lm_stat**2 >= crit
        out[i, 2] = rep.ar_stat**2 >= crit
        out[i, 3] = rep.reject
    return out, True


def _power_worker(args) -> tuple[int, np.ndarray, np.ndarray]:
    config, rep_indices = args
    try:  # keep BLAS single-threaded inside worker processes
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=1)
    except ImportError:  # pragma: no cover - soft dependency
        limiter = None
    try:
        infer_config = InferenceConfig(
            alpha_level=config.alpha_level, weighting=config.weighting
        )
        crit = chi2_quantile(1.0 - config.alpha_level)
        rejects = np.zeros((len(rep_indices), len(config.beta0_grid), 4), dtype=np.uint8)
        valid = np.zeros(len(rep_indices), dtype=np.uint8)
        for j, r in enumerate(rep_indices):
            rejects[j], ok = _replication_rejections(config, r, infer_config, crit)
            valid[j] = ok
        return rep_indices[0], rejects, valid
    finally:
        if limiter is not None:
            limiter.unregister()


def power_curve(config: DGPConfig, workers: int | None = None) -> PowerTable:
    """Rejection rates over the null grid, replications run (maybe) in parallel.

    The output is a pure function of ``(config, workers-independent streams)``:
    identical for any worker count.
    """
    reps = config.replications
    if workers is None:
        workers = os.cpu_count() or 1
    workers = max(1, min(workers, reps))

    all_rejects = np.zeros((reps, len(config.beta0_grid), 4), dtype=np.uint8)
    all_valid = np.zeros(reps, dtype=np.uint8)
    if workers == 1:
        start, rejects, valid = _power_worker((config, list(range(reps))))
        all_rejects[:], all_valid[:] = rejects, valid
    else:
        chunk = max(1, min(64, (reps + workers - 1) // workers))
        tasks = [
            (config, list(range(lo, min(lo + chunk, reps))))
            for lo in range(0, reps, chunk)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for start, rejects, valid in pool.map(_power_worker, tasks):
                all_rejects[start : start + len(valid)] = rejects
                all_valid[start : start + len(valid)] = valid

    mask = all_valid.astype(bool)
    n_valid = int(mask.sum())
    if n_valid == 0:
        raise InvalidInput("every replication failed; check the configuration")
    rates = all_rejects[mask].mean(axis=0)
    worst = np.max(rates * (1.0 - rates), axis=1)
    return PowerTable(
        beta0=np.asarray(config.beta0_grid, dtype=float),
        rates=rates,
        mc_std_err=np.sqrt(worst / n_valid),
        invalid_count=reps - n_valid,
        replications=reps,
    )


# --- configuration files -------------------------------------------------

_INT_FIELDS = {"n", "n_clusters", "n_many", "n_controls", "replications", "seed"}
_FLOAT_FIELDS = {
    "phi",
    "psi",
    "rho",
    "theta1",
    "theta2",
    "beta_true",
    "gamma_dmn",
    "alpha_level",
    "psi_lowdim",
}
_BOOL_FIELDS = {"demean_clusters", "heteroskedastic", "shared_cluster_shock"}
_STR_FIELDS = {"weighting", "lowdim_mode"}


def parse_config_text(text: str) -> DGPConfig:
    """Parse the flat ``key = value`` configuration format into a DGPConfig."""
    values: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"config line {line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in _INT_FIELDS:
                values[key] = int(value)
            elif key in _FLOAT_FIELDS:
                values[key] = float(value)
            elif key in _BOOL_FIELDS:
                if value.lower() not in ("true", "false"):
                    raise ValueError(value)
                values[key] = value.lower() == "true"
            elif key in _STR_FIELDS:
                values[key] = value
            elif key == "beta0_grid":
                values[key] = tuple(float(v) for v in value.split(",") if v.strip())
            else:
                raise InvalidInput(f"config line {line_no}: unknown key {key!r}")
        except ValueError:
            raise InvalidInput(
                f"config line {line_no}: cannot parse value {value!r} for {key!r}"
            ) from None
    return DGPConfig(**values)


def format_config(config: DGPConfig) -> str:
    """Inverse of :func:`parse_config_text`."""
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.name == "beta0_grid":
            value = ",".join(f"{b:.10g}" for b in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path) -> DGPConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# --- presets --------------------------------------------------------------

_PAPER_GRID = tuple(np.round(np.linspace(0.10, 0.50, 9), 10))
_DESK_GRID = tuple(np.round(np.linspace(-0.30, 0.90, 9), 10))

_FIGURES = {
    1: (100, 0.0, 30.0),
    2: (100, 0.95, 30.0),
    3: (100, 1.0, 30.0),
    4: (500, 0.0, 30.0),
    5: (500, 0.95, 30.0),
    6: (500, 1.0, 30.0),
    7: (500, 1.0, 20.0),
    8: (500, 1.0, 10.0),
    9: (500, 1.0, 5.0),
}


def _build_presets() -> dict[str, DGPConfig]:
    presets: dict[str, DGPConfig] = {}
    for fig, (k, phi, psi) in _FIGURES.items():
        presets[f"paper-fig{fig}"] = DGPConfig(
            n=2000,
            n_clusters=500,
            n_many=k,
            n_controls=10,
            phi=phi,
            psi=psi,
            beta0_grid=_PAPER_GRID,
            replications=1000,
        )
        presets[f"paper-fig{fig}-desk"] = DGPConfig(
            n=400,
            n_clusters=100,
            n_many=40,
            n_controls=5,
            phi=phi,
            psi=psi,
            beta0_grid=_DESK_GRID,
            replications=1000,
        )
    presets["desk-weak-many"] = DGPConfig(
        n=400,
        n_clusters=100,
        n_many=40,
        n_controls=5,
        phi=1.0,
        psi=1.0,
        lowdim_mode="injected",
        psi_lowdim=30.0,
        beta0_grid=_DESK_GRID,
        replications=1000,
    )
    presets["smoke"] = DGPConfig(
        n=120,
        n_clusters=30,
        n_many=10,
        n_controls=2,
        phi=1.0,
        psi=30.0,
        beta0_grid=(0.0, 0.3, 0.6),
        replications=20,
    )
    return presets


PRESETS = _build_presets()


def get_preset(name: str) -> DGPConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidInput(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None
