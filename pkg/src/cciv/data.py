"""Data containers, CSV ingestion, diagnostic validation, and control partialling.

The ingestion format is a plain CSV with header
``cluster_id,y,x,w_1..w_{dw},zl_1..zl_{dz},z_1..z_K`` (UTF-8, comma-delimited,
``.`` decimal separator).  ``cluster_id`` is an opaque string key; rows are
grouped into contiguous cluster blocks ordered by first appearance, so a
shuffled file ingests identically to a pre-sorted one.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    InvalidInput,
    ParseError,
    RankDeficient,
    SchemaError,
    ValidationFailed,
)
from .linalg import CONDITION_LIMIT, annihilator, projection, symmetrize

MAX_FIXED_DIM = 64  # controls and low-dimensional IVs must stay genuinely low-dim


@dataclass(frozen=True)
class ClusterPartition:
    """Contiguous partition of ``[0, n)`` into ``G`` cluster blocks.

    ``sizes[g]`` is the number of observations in cluster ``g``;
    ``starts``/``stops`` give the half-open row range of each block.
    """

    sizes: np.ndarray

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.int64)
        if sizes.ndim != 1 or sizes.size == 0:
            raise InvalidInput("cluster sizes must be a non-empty 1-d sequence")
        if np.any(sizes < 1):
            raise InvalidInput("every cluster must contain at least one observation")
        object.__setattr__(self, "sizes", sizes)
        offsets = np.concatenate(([0], np.cumsum(sizes)))
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(
            self,
            "_slices",
            tuple(slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:])),
        )

    @property
    def n(self) -> int:
        return int(self._offsets[-1])

    @property
    def n_clusters(self) -> int:
        return int(self.sizes.size)

    @property
    def starts(self) -> np.ndarray:
        return self._offsets[:-1]

    @property
    def stops(self) -> np.ndarray:
        return self._offsets[1:]

    def slices(self) -> tuple[slice, ...]:
        return self._slices

    def labels(self) -> np.ndarray:
        """Row-to-cluster index map of length ``n``."""
        return np.repeat(np.arange(self.n_clusters), self.sizes)

    def cluster_sums(self, values: np.ndarray) -> np.ndarray:
        """Per-cluster sums of an ``(n,)`` or ``(n, m)`` array."""
        return np.add.reduceat(np.asarray(values, dtype=float), self.starts, axis=0)

    def block_sums(self, m: np.ndarray) -> np.ndarray:
        """``G x G`` matrix of block sums of an ``n x n`` matrix."""
        rows = np.add.reduceat(np.asarray(m, dtype=float), self.starts, axis=0)
        return np.add.reduceat(rows, self.starts, axis=1)

    def block_diagonal_of(self, m: np.ndarray) -> np.ndarray:
        """Copy of the diagonal cluster blocks of ``m``, zero elsewhere."""
        out = np.zeros_like(np.asarray(m, dtype=float))
        for sl in self.slices():
            out[sl, sl] = m[sl, sl]
        return out

    def demean_within(self, values: np.ndarray) -> np.ndarray:
        """Subtract the within-cluster mean from each row block."""
        values = np.asarray(values, dtype=float)
        means = self.cluster_sums(values) / self.sizes.reshape(-1, *([1] * (values.ndim - 1)))
        return values - np.repeat(means, self.sizes, axis=0)


@dataclass(frozen=True)
class ClusteredIVData:
    """Raw (un-partialled) clustered IV observations.

    ``y`` outcome, ``x`` scalar endogenous regressor, ``w`` controls
    (possibly zero columns), ``z_many`` the K-dimensional instrument block,
    ``z_low`` the low-dimensional instruments.  Rows are grouped by cluster
    according to ``partition``.
    """

    y: np.ndarray
    x: np.ndarray
    w: np.ndarray
    z_many: np.ndarray
    z_low: np.ndarray
    partition: ClusterPartition

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float).reshape(-1)
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        zm = np.atleast_2d(np.asarray(self.z_many, dtype=float))
        zl = np.atleast_2d(np.asarray(self.z_low, dtype=float))
        n = self.partition.n
        if w.shape[0] != n and w.shape[0] == 0:
            w = np.empty((n, 0))
        for name, arr in (("y", y), ("x", x), ("w", w), ("z_many", zm), ("z_low", zl)):
            if arr.shape[0] != n:
                raise InvalidInput(
                    f"{name} has {arr.shape[0]} rows but the partition covers {n}"
                )
            if not np.all(np.isfinite(arr)):
                raise InvalidInput(f"{name} contains NaN or Inf")
        if w.shape[1] > MAX_FIXED_DIM:
            raise InvalidInput(f"too many control columns ({w.shape[1]} > {MAX_FIXED_DIM})")
        if zl.shape[1] > MAX_FIXED_DIM:
            raise InvalidInput(
                f"too many low-dimensional IV columns ({zl.shape[1]} > {MAX_FIXED_DIM})"
            )
        if zl.shape[1] == 0:
            raise InvalidInput("at least one low-dimensional IV column is required")
        if zm.shape[1] == 0:
            raise InvalidInput("at least one many-IV column is required")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "z_many", zm)
        object.__setattr__(self, "z_low", zl)

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def n_controls(self) -> int:
        return self.w.shape[1]

    @property
    def n_many(self) -> int:
        return self.z_many.shape[1]

    @property
    def n_low(self) -> int:
        return self.z_low.shape[1]


@dataclass(frozen=True)
class ColumnSchema:
    """Expected column counts for CSV ingestion; ``None`` means infer from header."""

    n_controls: int | None = None
    n_low: int | None = None
    n_many: int | None = None


def _expect_group(header: list[str], pos: int, prefix: str, count: int | None) -> int:
    """Count (and check) a consecutively numbered column group ``prefix_1..k``."""
    k = 0
    while pos + k < len(header) and header[pos + k] == f"{prefix}_{k + 1}":
        k += 1
    if count is not None and k != count:
        raise SchemaError(f"expected {count} '{prefix}_*' columns, found {k}")
    return k


def parse_csv(text: str, schema: ColumnSchema | None = None) -> ClusteredIVData:
    """Parse CSV text in the documented schema into :class:`ClusteredIVData`."""
    schema = schema or ColumnSchema()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty file: missing header row") from None
    header = [h.strip() for h in header]
    for fixed, pos in (("cluster_id", 0), ("y", 1), ("x", 2)):
        if len(header) <= pos or header[pos] != fixed:
            raise SchemaError(f"column {pos + 1} must be '{fixed}'")
    pos = 3
    d_w = _expect_group(header, pos, "w", schema.n_controls)
    pos += d_w
    d_z = _expect_group(header, pos, "zl", schema.n_low)
    pos += d_z
    k = _expect_group(header, pos, "z", schema.n_many)
    pos += k
    if pos != len(header):
        raise SchemaError(f"unrecognized trailing columns: {header[pos:]}")
    if d_z == 0:
        raise SchemaError("at least one 'zl_*' low-dimensional IV column is required")
    if k == 0:
        raise SchemaError("at least one 'z_*' instrument column is required")

    rows_by_cluster: dict[str, list[list[float]]] = {}
    for row_no, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue  # ignore blank lines
        if len(row) != len(header):
            raise ParseError(
                f"row {row_no} has {len(row)} fields, expected {len(header)}",
                row=row_no,
                col="",
            )
        values = []
        for name, cell in zip(header[1:], row[1:]):
            try:
                values.append(float(cell))
            except ValueError:
                raise ParseError(
                    f"row {row_no}, column '{name}': cannot parse {cell!r} as a number",
                    row=row_no,
                    col=name,
                ) from None
        rows_by_cluster.setdefault(row[0], []).append(values)

    if not rows_by_cluster:
        raise SchemaError("file contains a header but no data rows")
    # dict preserves first-appearance order, which fixes the cluster ordering
    blocks = [np.asarray(rows, dtype=float) for rows in rows_by_cluster.values()]
    table = np.vstack(blocks)
    partition = ClusterPartition(np.array([b.shape[0] for b in blocks]))
    return ClusteredIVData(
        y=table[:, 0],
        x=table[:, 1],
        w=table[:, 2 : 2 + d_w],
        z_many=table[:, 2 + d_w + d_z :],
        z_low=table[:, 2 + d_w : 2 + d_w + d_z],
        partition=partition,
    )


def load_csv(path, schema: ColumnSchema | None = None) -> ClusteredIVData:
    """Load a dataset from a CSV file (see module docstring for the schema)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_csv(fh.read(), schema)


def write_csv(data: ClusteredIVData, path, cluster_ids: list[str] | None = None) -> None:
    """Write a dataset back out in the ingestion schema (full float precision)."""
    header = (
        ["cluster_id", "y", "x"]
        + [f"w_{j + 1}" for j in range(data.n_controls)]
        + [f"zl_{j + 1}" for j in range(data.n_low)]
        + [f"z_{j + 1}" for j in range(data.n_many)]
    )
    labels = data.partition.labels()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            cid = cluster_ids[labels[i]] if cluster_ids else f"c{labels[i] + 1}"
            row = [cid] + [
                repr(float(v))
                for v in (
                    data.y[i],
                    data.x[i],
                    *data.w[i],
                    *data.z_low[i],
                    *data.z_many[i],
                )
            ]
            writer.writerow(row)


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    """Pass/fail results of the pre-estimation diagnostics."""

    checks: list[ValidationCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        lines = [
            f"[{'ok' if c.passed else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks
        ]
        lines.append(f"overall: {'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _cond_check(name: str, gram: np.ndarray) -> ValidationCheck:
    if gram.shape[0] == 0:
        return ValidationCheck(name, True, "no columns (vacuous)")
    eigs = np.linalg.eigvalsh(symmetrize(gram))
    lo, hi = float(eigs[0]), float(eigs[-1])
    cond = np.inf if lo <= 0 else hi / lo
    return ValidationCheck(name, cond <= CONDITION_LIMIT, f"condition number {cond:.3e}")


def _max_block_projection_eigenvalue(
    basis: np.ndarray, partition: ClusterPartition
) -> float:
    """Largest eigenvalue over clusters of the diagonal projection blocks.

    ``basis`` holds orthonormal columns spanning the projection; block ``g`` of
    the projection is ``U_g U_g'`` for the row block ``U_g``, whose eigenvalues
    come from one batched solve per distinct cluster size.
    """
    sizes = partition.sizes
    starts = partition.starts
    worst = 0.0
    for size in np.unique(sizes):
        s = int(size)
        rows = starts[sizes == size][:, None] + np.arange(s)[None, :]
        blocks_rows = basis[rows]  # (m, s, r)
        grams = np.einsum("bik,bjk->bij", blocks_rows, blocks_rows)
        grams = (grams + grams.transpose(0, 2, 1)) / 2.0
        worst = max(worst, float(np.linalg.eigvalsh(grams)[:, -1].max()))
    return worst


def validate(data: ClusteredIVData, annihilator_matrix: np.ndarray | None = None) -> ValidationReport:
    """Run the diagnostic checks that downstream estimation relies on.

    Checks: cluster sizes are not degenerate, the second-moment matrices of
    the (partialled) low-dim IVs and the controls are well conditioned, the
    many-IV projection has full rank K, no cluster's diagonal projection block
    reaches eigenvalue one, and the Gram matrices of W, Z, z are invertible.
    The report never raises; downstream operations refuse failed reports.

    ``annihilator_matrix`` lets callers that already built the control
    residual-maker avoid rebuilding it.
    """
    checks: list[ValidationCheck] = []
    part = data.partition
    n = data.n

    max_size = int(part.sizes.max())
    checks.append(
        ValidationCheck(
            "bounded_cluster_sizes",
            max_size <= max(1, n // 2),
            f"G={part.n_clusters}, largest cluster {max_size} of n={n}",
        )
    )

    checks.append(_cond_check("controls_gram_condition", data.w.T @ data.w))
    checks.append(_cond_check("many_iv_gram_condition", data.z_many.T @ data.z_many))
    checks.append(_cond_check("lowdim_iv_gram_condition", data.z_low.T @ data.z_low))

    controls_ok = checks[1].passed
    if not controls_ok:
        checks.append(
            ValidationCheck("second_moment_bounds", False, "skipped: controls singular")
        )
        checks.append(ValidationCheck("many_iv_full_rank", False, "skipped"))
        checks.append(ValidationCheck("cluster_projection_blocks", False, "skipped"))
        return ValidationReport(checks)

    mw = annihilator_matrix
    if mw is None:
        mw = annihilator(data.w if data.n_controls else None, n)
    z_low = mw @ data.z_low
    z_many = mw @ data.z_many

    mom_low = np.linalg.eigvalsh(symmetrize(z_low.T @ z_low / n))
    mom_w = (
        np.linalg.eigvalsh(symmetrize(data.w.T @ data.w / n))
        if data.n_controls
        else np.array([1.0])
    )
    lo = min(float(mom_low[0]), float(mom_w[0]))
    hi = max(float(mom_low[-1]), float(mom_w[-1]))
    checks.append(
        ValidationCheck(
            "second_moment_bounds",
            lo > 1e-10 and hi < 1e10,
            f"eigenvalue range of normalized moment matrices [{lo:.3e}, {hi:.3e}]",
        )
    )

    k = data.n_many
    u, svals, _ = np.linalg.svd(z_many, full_matrices=False)
    tol = max(z_many.shape) * np.finfo(float).eps * (svals[0] if svals.size else 0.0)
    rank = int(np.sum(svals > max(tol, 1e-10)))
    checks.append(
        ValidationCheck(
            "many_iv_full_rank",
            rank == k,
            f"rank {rank} of K={k} after partialling out controls",
        )
    )

    if rank == k:
        worst = _max_block_projection_eigenvalue(u[:, :rank], part)
        checks.append(
            ValidationCheck(
                "cluster_projection_blocks",
                worst < 1.0 - 1e-6,
                f"max within-cluster projection eigenvalue {worst:.6f}",
            )
        )
    else:
        checks.append(
            ValidationCheck("cluster_projection_blocks", False, "skipped: rank deficient")
        )

    return ValidationReport(checks)


@dataclass(frozen=True)
class TransformedDesign:
    """Dataset with controls partialled out plus cached projection matrices.

    ``y``, ``x``, ``z_many``, ``z_low`` are the annihilated versions
    (``mw @ raw``); ``x_raw`` keeps the original endogenous regressor, which
    one of the jackknife variance formulas uses directly.  ``p`` projects onto
    the span of the partialled many IVs, ``p_diag`` is its cluster-diagonal
    part, ``q = mw (p - p_diag) mw`` and ``q_diag`` its cluster-diagonal part.
    """

    y: np.ndarray
    x: np.ndarray
    x_raw: np.ndarray
    z_many: np.ndarray
    z_low: np.ndarray
    mw: np.ndarray
    p: np.ndarray
    p_diag: np.ndarray
    q: np.ndarray
    q_diag: np.ndarray
    partition: ClusterPartition
    validation: ValidationReport | None = None

    @property
    def n(self) -> int:
        return self.partition.n


def partial_out(
    data: ClusteredIVData, report: ValidationReport | None = None
) -> TransformedDesign:
    """Partial the controls out of everything and cache the projection matrices.

    Runs :func:`validate` first (or accepts a prior report) and refuses to
    proceed on a failed report.
    """
    if report is not None and not report.passed:
        raise ValidationFailed(report)
    n = data.n
    try:
        mw = annihilator(data.w if data.n_controls else None, n)
    except RankDeficient:
        raise ValidationFailed(validate(data)) from None
    if report is None:
        report = validate(data, annihilator_matrix=mw)
        if not report.passed:
            raise ValidationFailed(report)

    y = mw @ data.y
    x = mw @ data.x
    z_many = mw @ data.z_many
    z_low = mw @ data.z_low

    p = projection(z_many)
    p_diag = data.partition.block_diagonal_of(p)
    q = symmetrize(mw @ (p - p_diag) @ mw)
    q_diag = data.partition.block_diagonal_of(q)
    return TransformedDesign(
        y=y,
        x=x,
        x_raw=data.x,
        z_many=z_many,
        z_low=z_low,
        mw=mw,
        p=p,
        p_diag=p_diag,
        q=q,
        q_diag=q_diag,
        partition=data.partition,
        validation=report,
    )
