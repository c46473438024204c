import numpy as np
import pytest

from cciv.data import ClusterPartition
from cciv.exceptions import InvalidInput
from cciv.oracle import (
    ComparisonTable,
    LimitExperimentSpec,
    limit_experiment_table,
    mc_limit_experiment,
    naive_offdiag_bilinear,
)


class TestNaiveBilinear:
    def test_hand_computed_example(self):
        part = ClusterPartition([1, 1])
        b = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert naive_offdiag_bilinear(np.ones(2), b, np.ones(2), part) == 2.0

    def test_single_cluster_zero(self, rng):
        part = ClusterPartition([4])
        m = rng.standard_normal((4, 4))
        assert naive_offdiag_bilinear(np.ones(4), m, np.ones(4), part) == 0.0

    def test_guardrail(self):
        part = ClusterPartition([101, 100])
        m = np.zeros((201, 201))
        with pytest.raises(InvalidInput):
            naive_offdiag_bilinear(np.zeros(201), m, np.zeros(201), part)


class TestLimitExperimentSpec:
    def test_rejects_non_pd_correlations(self):
        with pytest.raises(InvalidInput):
            LimitExperimentSpec(rho1=0.8, rho2=0.7)
        with pytest.raises(InvalidInput):
            LimitExperimentSpec(rho1=1.0, rho2=0.0)

    def test_correlation_matrix_pattern(self):
        spec = LimitExperimentSpec(rho1=0.3, rho2=0.4)
        c = spec.correlation()
        assert c[0, 1] == 0.3 and c[1, 2] == 0.4 and c[0, 2] == 0.0
        assert np.all(np.linalg.eigvalsh(c) > 0)


class TestMcLimitExperiment:
    def test_null_calibration(self):
        row = mc_limit_experiment(
            LimitExperimentSpec(rho1=0.3, rho2=0.3, delta=0.0, replications=100_000)
        )
        for rate in (row.rate_combined, row.rate_wald_only, row.rate_lm_only):
            assert abs(rate - 0.05) <= 3 * row.mc_std_err

    def test_decoupled_case_collapses_to_wald(self):
        # a2 = 0 with zero correlations: the combination weight vector is
        # (a1, 0, 0), so the combined test IS the first-coordinate test
        row = mc_limit_experiment(
            LimitExperimentSpec(a1=1.0, a2=0.0, rho1=0.0, rho2=0.0, delta=1.0)
        )
        assert row.rate_combined == row.rate_wald_only

    def test_dominates_single_statistic_tests(self):
        for delta in (0.5, 1.0, 2.0):
            row = mc_limit_experiment(
                LimitExperimentSpec(
                    a1=1.0, a2=1.0, rho1=0.5, rho2=0.0, delta=delta, replications=100_000
                )
            )
            floor = max(row.rate_wald_only, row.rate_lm_only) - 2 * row.mc_std_err
            assert row.rate_combined >= floor

    def test_two_sided_symmetry(self):
        table = limit_experiment_table(
            1.0, 1.0, 0.5, 0.3, deltas=[-1.5, 1.5], replications=150_000
        )
        lo, hi = table.rows
        assert abs(lo.rate_combined - hi.rate_combined) <= 3 * np.hypot(
            lo.mc_std_err, hi.mc_std_err
        )

    def test_reproducible(self):
        spec = LimitExperimentSpec(rho1=0.2, rho2=0.2, delta=0.7, replications=20_000)
        assert mc_limit_experiment(spec) == mc_limit_experiment(spec)

    def test_table_csv_shape(self):
        table = limit_experiment_table(1.0, 1.0, 0.0, 0.0, deltas=[0.0, 1.0], replications=5_000)
        assert isinstance(table, ComparisonTable)
        lines = table.to_csv().strip().split("\n")
        assert lines[0] == "delta,reject_combined,reject_wald_only,reject_lm_only,mc_std_err"
        assert len(lines) == 3
