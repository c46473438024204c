import numpy as np
import pytest
import scipy.linalg

from cciv.combine import (
    CombinationWeights,
    InferenceConfig,
    InferencePipeline,
    alpha_hats,
    combine_weight,
    combined_test,
    correlation_pattern,
    rho_hats,
    run_inference,
    run_inference_grid,
)
from cciv.data import ClusteredIVData, partial_out
from cciv.exceptions import InvalidInput, VarianceError
from cciv.jackknife import jackknife_components
from cciv.linalg import chi2_quantile
from cciv.oracle import naive_rho
from cciv.wald import wald_components
from tests.conftest import random_clustered_data


class TestCombineWeight:
    def test_symmetric_case(self):
        assert combine_weight(1.0, 1.0, 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_weak_many_iv_limit(self):
        assert combine_weight(1.0, 1e12, 1.0) > 0.999

    def test_closed_form_third(self):
        # phi1 = 4, phi2/d^2 = 1 -> 1 / (2 + 1)
        assert combine_weight(4.0, 1.0, 1.0) == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_monotone_in_wald_variance(self):
        values = [combine_weight(p1, 1.0, 1.0) for p1 in (0.5, 1.0, 2.0, 4.0)]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert all(0.0 < v < 1.0 for v in values)

    def test_errors(self):
        with pytest.raises(VarianceError):
            combine_weight(0.0, 1.0, 1.0)
        with pytest.raises(VarianceError):
            combine_weight(1.0, 1.0, 0.0)


class TestAlphaHats:
    def test_equal_strength(self):
        a1, a2 = alpha_hats(1.0, 1.0, 1.0)
        assert (a1, a2) == pytest.approx((1 / np.sqrt(2), 1 / np.sqrt(2)), abs=1e-15)

    def test_uninformative_many_ivs(self):
        a1, a2 = alpha_hats(1e-12, 1.0, 1.0)
        assert a1 == pytest.approx(1.0, abs=1e-6)
        assert a2 == pytest.approx(0.0, abs=1e-6)

    def test_closed_form_r3(self):
        a1, a2 = alpha_hats(3.0, 1.0, 1.0)
        assert a1 == pytest.approx(0.5, abs=1e-15)
        assert a2 == pytest.approx(np.sqrt(3) / 2, abs=1e-15)

    def test_unit_norm_exact(self, rng):
        for _ in range(25):
            phi1 = float(rng.uniform(0.01, 10))
            phi2 = float(rng.uniform(0.01, 10))
            d = float(rng.uniform(0.1, 5))
            a1, a2 = alpha_hats(phi1, phi2, d)
            assert abs(a1**2 + a2**2 - 1.0) <= 1e-15
            assert a1 > 0 and a2 > 0


class TestRhoHats:
    def test_matches_naive_loops(self, rng):
        data = random_clustered_data(rng, n_controls=2)
        design = partial_out(data)
        resid = design.y - design.x * 0.2
        comp1 = wald_components(design, resid)
        comp2 = jackknife_components(design, resid)
        r1, r2, clamped = rho_hats(
            design,
            resid,
            comp1.x_instrumented,
            comp2.x_projected,
            comp1.psi_hat,
            comp2.phi2_hat,
            comp2.phi3_hat,
        )
        n1, n2 = naive_rho(design, resid)
        if not clamped:
            assert r1 == pytest.approx(n1, rel=1e-12)
            assert r2 == pytest.approx(n2, rel=1e-12)
        else:
            assert np.hypot(n1, n2) >= 1.0 - 1e-6

    def test_clamping_shrinks_radially(self, rng):
        data = random_clustered_data(rng)
        design = partial_out(data)
        resid = design.y
        comp1 = wald_components(design, resid)
        comp2 = jackknife_components(design, resid)
        # force the raw values outside the disk by shrinking the normalizers
        r1, r2, clamped = rho_hats(
            design,
            resid,
            comp1.x_instrumented,
            comp2.x_projected,
            comp1.psi_hat * 1e-4,
            comp2.phi2_hat * 1e-4,
            comp2.phi3_hat * 1e-4,
        )
        assert clamped
        assert r1**2 + r2**2 == pytest.approx(1.0 - 1e-6, rel=1e-12)

    def test_variance_error(self, rng):
        data = random_clustered_data(rng)
        design = partial_out(data)
        with pytest.raises(VarianceError):
            rho_hats(design, design.y, design.x, design.x, 0.0, 1.0, 1.0)


class TestCombinedTest:
    def test_pure_wald_when_decoupled(self):
        w = CombinationWeights(0.5, 1.0, 0.0, 0.0, 0.0, False)
        out = combined_test(2.5, 0.7, -0.3, w, 0.05)
        assert out.combined_stat == pytest.approx(2.5**2, rel=1e-12)
        assert out.reject == (2.5**2 >= chi2_quantile(0.95))

    def test_equal_weights_decoupled(self):
        w = CombinationWeights(0.5, 1 / np.sqrt(2), 1 / np.sqrt(2), 0.0, 0.0, False)
        out = combined_test(1.2, 0.4, 9.9, w, 0.05)
        assert out.combined_stat == pytest.approx(((1.2 + 0.4) / np.sqrt(2)) ** 2, rel=1e-12)

    def test_against_dense_matrix_oracle(self):
        # independent route: scipy fractional matrix power
        rho1, rho2 = 0.3, 0.4
        alpha = np.array([0.6, 0.8, 0.0])
        stats = np.array([2.0, 1.0, 0.5])
        corr = correlation_pattern(rho1, rho2)
        root = np.real(scipy.linalg.fractional_matrix_power(corr, -0.5))
        b = root @ alpha
        expected = float(b @ (root @ stats)) ** 2 / float(b @ b)

        w = CombinationWeights(0.5, 0.6, 0.8, rho1, rho2, False)
        out = combined_test(2.0, 1.0, 0.5, w, 0.05)
        assert out.combined_stat == pytest.approx(expected, rel=1e-10)

    def test_matches_wald_decision_exactly_when_identity(self, rng):
        w = CombinationWeights(0.5, 1.0, 0.0, 0.0, 0.0, False)
        crit = chi2_quantile(0.95)
        for t in rng.normal(scale=2.0, size=40):
            out = combined_test(float(t), 0.3, -0.2, w, 0.05)
            assert out.reject == (t**2 >= crit)
            assert out.combined_stat == pytest.approx(t**2, rel=1e-12)


class TestPipeline:
    def test_report_deterministic(self, rng):
        data = random_clustered_data(rng, n_controls=2)
        r1 = run_inference(data, 0.1)
        r2 = run_inference(data, 0.1)
        assert r1.to_text() == r2.to_text()
        assert r1.to_csv_row() == r2.to_csv_row()

    def test_grid_matches_single_calls(self, rng):
        data = random_clustered_data(rng, n_controls=1)
        grid = [-0.4, 0.0, 0.4]
        reports = run_inference_grid(data, grid, InferenceConfig())
        for b0, rep in zip(grid, reports):
            single = run_inference(data, b0)
            assert rep.to_csv_row() == single.to_csv_row()

    def test_far_null_rejects(self):
        from cciv.simulate import DGPConfig, gen_dataset

        cfg = DGPConfig(n=300, n_clusters=75, n_many=20, n_controls=3, psi=30.0)
        rejected = 0
        for rep_ix in range(10):
            data, _ = gen_dataset(cfg, rep_ix)
            rep = run_inference(data, 0.3 + 10.0)
            assert rep.valid
            rejected += rep.reject
        assert rejected == 10

    def test_omega_in_unit_interval(self, rng):
        for _ in range(5):
            data = random_clustered_data(rng, n_controls=1)
            rep = run_inference(data, 0.0)
            if rep.valid:
                assert 0.0 < rep.weights.omega_hat < 1.0
                assert rep.beta_hat == pytest.approx(
                    rep.weights.omega_hat * rep.beta1_hat
                    + (1 - rep.weights.omega_hat) * rep.beta2_hat,
                    rel=1e-12,
                )

    def test_sign_change_symmetry(self, rng):
        # negating the endogenous regressor and the null leaves the combined
        # decision (and statistic) unchanged
        data = random_clustered_data(rng, n_controls=2)
        flipped = ClusteredIVData(
            y=data.y,
            x=-data.x,
            w=data.w,
            z_many=data.z_many,
            z_low=data.z_low,
            partition=data.partition,
        )
        beta0 = 0.25
        rep = run_inference(data, beta0)
        rep_f = run_inference(flipped, -beta0)
        assert rep.valid and rep_f.valid
        assert rep_f.t_stat == pytest.approx(-rep.t_stat, rel=1e-9)
        assert rep_f.lm_stat == pytest.approx(-rep.lm_stat, rel=1e-9)
        assert rep_f.ar_stat == pytest.approx(rep.ar_stat, rel=1e-9)
        assert rep_f.combined_stat == pytest.approx(rep.combined_stat, rel=1e-8)
        assert rep_f.reject == rep.reject

    def test_validation_failure_marks_report(self, rng):
        data = random_clustered_data(rng, n_many=3)
        bad = ClusteredIVData(
            y=data.y,
            x=data.x,
            w=data.w,
            z_many=np.hstack([data.z_many, data.z_many[:, :1]]),
            z_low=data.z_low,
            partition=data.partition,
        )
        rep = run_inference(bad, 0.0)
        assert not rep.valid
        assert rep.error_kind == "validation"
        assert np.isnan(rep.beta1_hat)

    def test_invalid_config(self):
        with pytest.raises(InvalidInput):
            InferenceConfig(alpha_level=1.5)
        with pytest.raises(InvalidInput):
            InferenceConfig(weighting="ridge")

    def test_pipeline_exposes_variances(self, rng):
        data = random_clustered_data(rng, n_controls=1)
        pipe = InferencePipeline(data)
        v = pipe.variances
        assert v.phi1 > 0 and v.phi2 > 0 and v.phi3 > 0 and v.psi > 0
        assert v.phi1_pre > 0 and v.phi2_pre > 0
        rep = pipe.report_at(0.0)
        assert rep.critical_value == pytest.approx(chi2_quantile(0.95), abs=1e-12)
        assert rep.reject == (rep.combined_stat >= rep.critical_value)
