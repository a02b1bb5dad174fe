import numpy as np
import pytest

from colpred.criterion import (CriterionInputs, a_tilde_coefficients, algorithm0,
                               c_constants, evaluate, phi, psi, psi_calibrated,
                               sigma_trace_terms, solve_c0)
from colpred.data import Dataset, GaussianSpec, sample_synthetic
from colpred.moments import moments_from_spec
from colpred.ols import fit_combined, fit_ols, whitening_matrix_d
from colpred.oracle import theorem1_quantities

# frozen from a 50-digit evaluation of the displayed formulas
ORACLE_A1 = 0.053936505786066499
ORACLE_A2 = -0.0016362518454983153
ORACLE_C = dict(c1=122.78848624234385, c2=29.204965331258313,
                c3=-119.31962185369222, c4=-3.7430307413121786, c5=7.29)


def make_inputs(seed=0, p=6, n=60, d_shift=0.0, alpha=3.0, noise=1.0):
    beta = np.random.default_rng(seed).standard_normal(p)
    s1 = GaussianSpec.isotropic(beta, noise_var=noise)
    s2 = GaussianSpec.isotropic(beta + d_shift, noise_var=noise)
    m = moments_from_spec(s1, s2, n, n, mc_reps=500, seed=seed)
    d1 = sample_synthetic(s1, n, seed=seed + 1, id="a")
    d2 = sample_synthetic(s2, n, seed=seed + 2, id="b")
    f1, f2 = fit_ols(d1), fit_ols(d2)
    comb = fit_combined(d1, d2)
    q = theorem1_quantities(m)
    ci = CriterionInputs(fit1=f1, fit2=f2, combined=comb,
                         d_matrix=whitening_matrix_d(f1, f2),
                         b_factor=q.b0_factor, moment_set=m, alpha=alpha)
    return ci, q, (d1, d2)


class TestATilde:
    def test_alpha_zero_collapse(self):
        a1, a2 = a_tilde_coefficients(90, 0.5, 0.0)
        assert a1 == pytest.approx(0.5 / 3)
        assert a2 == pytest.approx(-2 * 0.5 / (3 * 90))

    def test_zero_a0(self):
        assert a_tilde_coefficients(90, 0.0, 3.0) == (0.0, 0.0)

    def test_against_symbolic_oracle(self):
        a1, a2 = a_tilde_coefficients(90, 0.28808, 3.0)
        assert a1 == pytest.approx(ORACLE_A1, rel=1e-14)
        assert a2 == pytest.approx(ORACLE_A2, rel=1e-14)


class TestCConstants:
    def test_against_symbolic_oracle(self):
        c1, c2, c3, c4, c5 = c_constants(90, 1.3, 2.7, 3.0)
        assert c1 == pytest.approx(ORACLE_C["c1"], rel=1e-14)
        assert c2 == pytest.approx(ORACLE_C["c2"], rel=1e-14)
        assert c3 == pytest.approx(ORACLE_C["c3"], rel=1e-14)
        assert c4 == pytest.approx(ORACLE_C["c4"], rel=1e-14)
        assert c5 == pytest.approx(ORACLE_C["c5"], rel=1e-14)

    def test_vacuous_quadratic_yields_no_root(self):
        # c3 < 0 in this regime, so no finite upper sigma bound exists
        assert solve_c0(*c_constants(90, 1.3, 2.7, 3.0)) is None


class TestPhi:
    def test_equal_fits_reduce_to_first_term(self):
        ci, q, _ = make_inputs(seed=1)
        ci_eq = CriterionInputs(fit1=ci.fit1, fit2=ci.fit1, combined=ci.combined,
                                d_matrix=ci.d_matrix, b_factor=ci.b_factor,
                                moment_set=ci.moment_set, alpha=ci.alpha)
        a1, _ = a_tilde_coefficients(ci.combined.n0, q.a0, ci.alpha)
        assert phi(ci_eq, q) == pytest.approx(a1 * ci.combined.sigma2_hat)

    def test_compositional_recomputation(self):
        ci, q, _ = make_inputs(seed=2, d_shift=0.2)
        a1, a2 = a_tilde_coefficients(ci.combined.n0, q.a0, ci.alpha)
        diff = ci.fit1.beta_hat - ci.fit2.beta_hat
        dd2 = float(np.sum((ci.d_matrix @ diff) ** 2))
        assert phi(ci, q) == pytest.approx(a1 * ci.combined.sigma2_hat + a2 * dd2,
                                           rel=1e-12)

    def test_monotone_decreasing_in_whitened_distance(self):
        ci, q, _ = make_inputs(seed=3)
        a1, a2 = a_tilde_coefficients(ci.combined.n0, q.a0, ci.alpha)
        assert a2 < 0 < a1
        values = [a1 * 1.0 + a2 * dd2 for dd2 in (0.0, 1.0, 5.0, 20.0)]
        assert values == sorted(values, reverse=True)


class TestSigmaTraceTerms:
    def test_against_materialized_matrix(self):
        # build the full sample-space matrix on a small instance and compare
        rng = np.random.default_rng(4)
        n1, n2, p = 12, 9, 3
        X1 = rng.standard_normal((n1, p))
        X2 = rng.standard_normal((n2, p))
        b0 = rng.standard_normal((p, p))
        b0 = b0 @ b0.T + 0.5 * np.eye(p)
        x0 = np.zeros((n1 + n2, 2 * p))
        x0[:n1, :p] = X1
        x0[n1:, p:] = X2
        c = np.hstack([np.eye(p), -np.eye(p)])
        g0_inv = np.linalg.inv(x0.T @ x0)
        big = x0 @ g0_inv @ c.T @ b0 @ c @ g0_inv @ x0.T
        ginv_sum = np.linalg.inv(X1.T @ X1) + np.linalg.inv(X2.T @ X2)
        tr1, tr2, spectral = sigma_trace_terms(b0, ginv_sum)
        assert tr1 == pytest.approx(np.trace(big), rel=1e-9)
        assert tr2 == pytest.approx(np.trace(big @ big), rel=1e-9)
        assert spectral == pytest.approx(np.linalg.eigvalsh(big)[-1], rel=1e-9)


class TestPsi:
    def test_dominates_g_hat(self):
        for seed in range(6):
            ci, q, _ = make_inputs(seed=seed, d_shift=0.1 * seed)
            val, _, _, _, g_hat = psi(ci, q)
            assert val >= g_hat

    def test_degenerate_zero_noise_zero_distance(self):
        # sigma_hat = 0 and equal fits: c1 = c2 = c4 = c5 = 0, g = 0, and the
        # sigma bound degenerates to 0, so psi = 0
        beta = np.array([1.0, -2.0, 0.5])
        s = GaussianSpec.isotropic(beta, noise_var=0.0)
        d1 = sample_synthetic(s, 30, seed=5, id="a")
        d2 = Dataset(d1.features, d1.targets, id="b")
        f1, f2 = fit_ols(d1), fit_ols(d2)
        comb = fit_combined(d1, d2)
        assert comb.sigma2_hat <= 1e-16
        m = moments_from_spec(s, s, 30, 30, mc_reps=200, seed=6)
        q = theorem1_quantities(m)
        ci = CriterionInputs(fit1=f1, fit2=f2, combined=comb,
                             d_matrix=whitening_matrix_d(f1, f2),
                             b_factor=q.b0_factor, moment_set=m, alpha=3.0)
        val, c0, _, _, g_hat = psi(ci, q)
        assert g_hat == pytest.approx(0.0, abs=1e-18)
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_approaches_g_as_sigma_hat_scales_to_zero(self):
        # numerical limit of the formula: shrinking the sigma2_hat input with
        # everything else held fixed drives psi down to g_hat
        from dataclasses import replace

        ci, q, _ = make_inputs(seed=7, d_shift=2.0)
        ratios = []
        for scale in (1.0, 1e-2, 1e-4, 1e-8):
            comb = replace(ci.combined, sigma2_hat=ci.combined.sigma2_hat * scale)
            ci_s = CriterionInputs(fit1=ci.fit1, fit2=ci.fit2, combined=comb,
                                   d_matrix=ci.d_matrix, b_factor=ci.b_factor,
                                   moment_set=ci.moment_set, alpha=ci.alpha)
            val, _, _, _, g_hat = psi(ci_s, q)
            ratios.append(val / g_hat)
        assert ratios == sorted(ratios, reverse=True)
        assert ratios[-1] < 1.05

    def test_square_root_choice_is_irrelevant(self):
        # replacing the Cholesky factors by symmetric square roots leaves
        # phi, psi and the suggestion unchanged
        ci, q, _ = make_inputs(seed=10, d_shift=0.3)
        s = ci.fit1.gram_inverse + ci.fit2.gram_inverse
        eigs, vecs = np.linalg.eigh(np.linalg.inv(s))
        d_sym = (vecs * np.sqrt(eigs)) @ vecs.T
        eigs_b, vecs_b = np.linalg.eigh(q.b0)
        b_sym = (vecs_b * np.sqrt(np.clip(eigs_b, 0, None))) @ vecs_b.T
        ci_sym = CriterionInputs(fit1=ci.fit1, fit2=ci.fit2, combined=ci.combined,
                                 d_matrix=d_sym, b_factor=b_sym,
                                 moment_set=ci.moment_set, alpha=ci.alpha)
        out_a = evaluate(ci, q)
        out_b = evaluate(ci_sym, q)
        assert out_a.phi == pytest.approx(out_b.phi, rel=1e-9)
        assert out_a.psi == pytest.approx(out_b.psi, rel=1e-9)
        assert out_a.merge_suggested == out_b.merge_suggested
        assert out_a.merge_suggested_calibrated == out_b.merge_suggested_calibrated


class TestCalibrated:
    def test_zero_for_coincident_fits(self):
        ci, q, _ = make_inputs(seed=11)
        ci_eq = CriterionInputs(fit1=ci.fit1, fit2=ci.fit1, combined=ci.combined,
                                d_matrix=ci.d_matrix, b_factor=ci.b_factor,
                                moment_set=ci.moment_set, alpha=ci.alpha)
        assert psi_calibrated(ci_eq, q) == 0.0

    def test_grows_with_separation(self):
        vals = []
        for shift in (0.0, 0.5, 1.5):
            ci, q, _ = make_inputs(seed=12, d_shift=shift, noise=0.2)
            vals.append(psi_calibrated(ci, q))
        assert vals[0] < vals[1] < vals[2]


class TestAlgorithm0:
    def test_identical_datasets_structure(self):
        s = GaussianSpec.isotropic(np.ones(4), noise_var=1.0)
        d1 = sample_synthetic(s, 40, seed=13, id="a")
        d2 = Dataset(d1.features, d1.targets, id="b")
        m = moments_from_spec(s, s, 40, 40, mc_reps=300, seed=14)
        out = algorithm0(d1, d2, alpha=3.0, m=m)
        assert out.g_hat == pytest.approx(0.0, abs=1e-18)
        a1, _ = a_tilde_coefficients(2 * 40 - 4, theorem1_quantities(m).a0, 3.0)
        # with g = 0, phi reduces to its first term and psi to the squared radius
        assert out.phi == pytest.approx(a1 * fit_combined(d1, d2).sigma2_hat, rel=1e-9)
        assert out.psi >= 0.0
        assert out.merge_suggested_calibrated  # calibrated target is exactly 0

    def test_output_consistency(self):
        ci, q, (d1, d2) = make_inputs(seed=15, d_shift=0.2)
        out = algorithm0(d1, d2, alpha=ci.alpha, m=ci.moment_set)
        assert out.merge_suggested == (out.phi > out.psi)
        assert out.merge_suggested_calibrated == (out.phi > out.psi_calibrated)
        tr1, tr2, spectral = out.sigma_trace_terms
        assert tr1 > 0 and tr2 > 0 and spectral > 0
