import os

import numpy as np
import pytest

from cciv.data import ClusteredIVData, ClusterPartition, partial_out, validate

FIXTURE_CSV = os.path.join(os.path.dirname(__file__), "data", "fixture.csv")


def random_clustered_data(
    rng: np.random.Generator,
    n_clusters: int | None = None,
    n_many: int | None = None,
    n_low: int | None = None,
    n_controls: int | None = None,
) -> ClusteredIVData:
    """A small random dataset that passes validation (resampled until it does)."""
    for _ in range(50):
        g = n_clusters if n_clusters is not None else int(rng.integers(2, 7))
        sizes = rng.integers(1, 6, size=g)
        n = int(sizes.sum())
        k = n_many if n_many is not None else int(rng.integers(1, min(9, max(2, n // 3))))
        d_z = n_low if n_low is not None else int(rng.integers(1, 3))
        d_w = n_controls if n_controls is not None else int(rng.integers(0, 4))
        if n <= k + d_w + d_z + 2:
            continue
        part = ClusterPartition(sizes)
        z_many = rng.standard_normal((n, k))
        data = ClusteredIVData(
            y=rng.standard_normal(n),
            x=z_many @ rng.standard_normal(k) + rng.standard_normal(n),
            w=rng.standard_normal((n, d_w)),
            z_many=z_many,
            z_low=z_many[:, :d_z] + 0.5 * rng.standard_normal((n, d_z)),
            partition=part,
        )
        if validate(data).passed:
            return data
    raise RuntimeError("could not draw a valid random fixture")


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


@pytest.fixture
def small_design(rng):
    return partial_out(random_clustered_data(rng))


@pytest.fixture
def fixture_csv_path():
    return FIXTURE_CSV
