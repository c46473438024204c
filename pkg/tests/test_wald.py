import numpy as np
import pytest

from cciv.data import ClusteredIVData, ClusterPartition, partial_out
from cciv.exceptions import VarianceError, WeakDesignError
from cciv.oracle import naive_cluster_meat
from cciv.wald import cluster_meat, gmm_beta1, wald_components, wald_stat
from tests.conftest import random_clustered_data


def _data_with_lowdim(rng, z_low, n_controls=0):
    n = z_low.shape[0]
    sizes = []
    while sum(sizes) < n:
        sizes.append(min(int(rng.integers(1, 5)), n - sum(sizes)))
    part = ClusterPartition(sizes)
    z_many = rng.standard_normal((n, 3))
    x = z_many @ np.array([1.0, 0.5, 0.2]) + z_low[:, 0] + rng.standard_normal(n)
    return ClusteredIVData(
        y=2.0 * x + rng.standard_normal(n),
        x=x,
        w=rng.standard_normal((n, n_controls)),
        z_many=z_many,
        z_low=z_low,
        partition=part,
    )


class TestGmmBeta1:
    def test_exogenous_limit_equals_ols(self, rng):
        # with z = x the GMM estimator collapses to the OLS slope
        n = 40
        x = rng.standard_normal(n)
        y = 0.7 * x + rng.standard_normal(n)
        data = ClusteredIVData(
            y=y,
            x=x,
            w=np.empty((n, 0)),
            z_many=rng.standard_normal((n, 2)),
            z_low=x[:, None],
            partition=ClusterPartition([5] * 8),
        )
        design = partial_out(data)
        beta1, _ = gmm_beta1(design)
        ols = float(x @ y) / float(x @ x)
        assert beta1 == pytest.approx(ols, abs=1e-12)

    def test_recovers_true_coefficient(self, rng):
        hits = 0
        for rep in range(20):
            data = random_clustered_data(rng, n_clusters=6, n_low=1)
            design = partial_out(data)
            comp = wald_components(design, design.y - design.x * 0.0)
            beta1 = comp.beta1_hat
            # y was pure noise, so beta = 0; count 3-sigma coverage
            hits += abs(beta1) <= 3 * np.sqrt(comp.phi1_hat)
        assert hits >= 17

    def test_tsls_invariant_to_lowdim_mixing(self, rng):
        data = random_clustered_data(rng, n_low=2)
        mixed = ClusteredIVData(
            y=data.y,
            x=data.x,
            w=data.w,
            z_many=data.z_many,
            z_low=data.z_low @ np.array([[2.0, 0.3], [-1.0, 1.5]]),
            partition=data.partition,
        )
        d1, d2 = partial_out(data), partial_out(mixed)
        resid = d1.y - d1.x * 0.1
        c1 = wald_components(d1, resid)
        c2 = wald_components(d2, resid)
        assert c1.beta1_hat == pytest.approx(c2.beta1_hat, rel=1e-9)
        assert c1.phi1_hat == pytest.approx(c2.phi1_hat, rel=1e-8)
        assert wald_stat(c1, 0.0) == pytest.approx(wald_stat(c2, 0.0), rel=1e-8)

    def test_weak_design_error(self, rng):
        # low-dim IV orthogonal to x by construction
        n = 30
        x = rng.standard_normal(n)
        z = rng.standard_normal(n)
        z -= x * (x @ z) / (x @ x)
        data = ClusteredIVData(
            y=rng.standard_normal(n),
            x=x,
            w=np.empty((n, 0)),
            z_many=rng.standard_normal((n, 2)),
            z_low=(1e-9 * z)[:, None],
            partition=ClusterPartition([3] * 10),
        )
        design = partial_out(data)
        with pytest.raises(WeakDesignError):
            gmm_beta1(design)

    def test_optimal_gmm_runs(self, rng):
        data = random_clustered_data(rng, n_low=2, n_clusters=6)
        design = partial_out(data)
        beta_gmm, a_hat = gmm_beta1(design, weighting="gmm")
        assert np.isfinite(beta_gmm)
        assert np.all(np.linalg.eigvalsh(a_hat) > 0)


class TestClusterMeat:
    def test_singleton_clusters_heteroskedastic_form(self, rng):
        n = 12
        z = rng.standard_normal((n, 2))
        resid = rng.standard_normal(n)
        part = ClusterPartition([1] * n)
        meat = cluster_meat(z, resid, part)
        expected = (z * resid[:, None] ** 2).T @ z
        assert np.abs(meat - expected).max() <= 1e-12

    def test_zero_residuals(self, rng):
        z = rng.standard_normal((9, 2))
        meat = cluster_meat(z, np.zeros(9), ClusterPartition([3, 3, 3]))
        assert np.all(meat == 0.0)

    def test_matches_naive_oracle(self, rng):
        data = random_clustered_data(rng, n_low=2)
        design = partial_out(data)
        resid = rng.standard_normal(data.n)
        fast = cluster_meat(design.z_low, resid, data.partition)
        naive = naive_cluster_meat(design.z_low, resid, data.partition)
        assert np.abs(fast - naive).max() <= 1e-12 * max(1.0, np.abs(naive).max())

    def test_psd(self, rng):
        data = random_clustered_data(rng)
        design = partial_out(data)
        meat = cluster_meat(design.z_low, rng.standard_normal(data.n), data.partition)
        assert np.linalg.eigvalsh(meat)[0] >= -1e-12


class TestWaldStat:
    def test_zero_at_estimate(self, rng):
        data = random_clustered_data(rng)
        design = partial_out(data)
        comp = wald_components(design, design.y)
        assert wald_stat(comp, comp.beta1_hat) == 0.0

    def test_residual_scaling(self, rng):
        data = random_clustered_data(rng)
        design = partial_out(data)
        resid = design.y - design.x * 0.2
        c1 = wald_components(design, resid)
        c2 = wald_components(design, 2.0 * resid)
        assert c2.phi1_hat == pytest.approx(4.0 * c1.phi1_hat, rel=1e-12)
        assert wald_stat(c2, 0.0) == pytest.approx(0.5 * wald_stat(c1, 0.0), rel=1e-12)

    def test_variance_error(self, rng):
        data = random_clustered_data(rng)
        design = partial_out(data)
        comp = wald_components(design, np.zeros(data.n))
        with pytest.raises(VarianceError):
            wald_stat(comp, 0.0)

    def test_dof_correction_scales_meat(self, rng):
        data = random_clustered_data(rng, n_clusters=5)
        design = partial_out(data)
        resid = design.y
        plain = wald_components(design, resid)
        corrected = wald_components(design, resid, dof_correction=True)
        g = data.partition.n_clusters
        assert corrected.phi1_hat == pytest.approx(
            plain.phi1_hat * g / (g - 1), rel=1e-12
        )


class TestVarianceCalibration:
    def test_homoskedastic_singletons_match_textbook_tsls(self, rng):
        # iid homoskedastic errors, singleton clusters: the sandwich should
        # average to the textbook TSLS variance sigma^2 / ||P_z x||^2
        n, reps = 250, 250
        ratio_num, ratio_den = 0.0, 0.0
        for _ in range(reps):
            z = rng.standard_normal(n)
            shared = rng.standard_normal(n)
            v = 0.8 * rng.standard_normal(n) + 0.6 * shared
            e = 0.8 * rng.standard_normal(n) + 0.6 * shared
            x = 0.8 * z + v
            y = 0.3 * x + e
            data = ClusteredIVData(
                y=y,
                x=x,
                w=np.empty((n, 0)),
                z_many=np.column_stack([z, rng.standard_normal(n)]),
                z_low=z[:, None],
                partition=ClusterPartition([1] * n),
            )
            design = partial_out(data)
            beta1, _ = gmm_beta1(design)
            comp = wald_components(design, design.y - design.x * beta1)
            zx = float(z @ x)
            textbook = 1.0 * float(z @ z) / zx**2  # sigma^2 = 1
            ratio_num += comp.phi1_hat
            ratio_den += textbook
        assert ratio_num / ratio_den == pytest.approx(1.0, abs=0.05)
