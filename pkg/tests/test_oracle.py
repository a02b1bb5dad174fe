import numpy as np
import pytest

from colpred.data import GaussianSpec
from colpred.moments import moments_from_spec
from colpred.oracle import (OracleConsistencyError, brute_force_ose_combined,
                            exact_ose_combined, exact_ose_single,
                            ground_truth_merge, theorem1_quantities)


def iso(beta, noise=1.0, mu=None):
    return GaussianSpec.isotropic(np.asarray(beta, dtype=float), noise_var=noise, mu=mu)


@pytest.fixture(scope="module")
def identical_pair_moments():
    spec = iso(np.ones(10))
    m = moments_from_spec(spec, spec, 50, 50, mc_reps=3000, seed=0)
    return spec, m


class TestTheoremQuantities:
    def test_a0_identical_isotropic(self, identical_pair_moments):
        _, m = identical_pair_moments
        q = theorem1_quantities(m)
        assert q.a0 == pytest.approx(2 * (10 / 39 - 10 / 89), abs=0.004)

    def test_g_of_equal_vectors_is_zero(self, identical_pair_moments):
        _, m = identical_pair_moments
        q = theorem1_quantities(m)
        v = np.random.default_rng(0).standard_normal(10)
        assert q.g(v, v) == 0.0

    def test_h_linear_through_zero(self, identical_pair_moments):
        _, m = identical_pair_moments
        q = theorem1_quantities(m)
        assert q.h(0.0) == 0.0
        assert q.h(2.0) == pytest.approx(2 * q.a0)

    def test_factor_squares_to_b0(self, identical_pair_moments):
        _, m = identical_pair_moments
        q = theorem1_quantities(m)
        np.testing.assert_allclose(q.b0_factor.T @ q.b0_factor, q.b0, atol=1e-8)

    def test_g_symmetric_nonnegative(self, identical_pair_moments):
        _, m = identical_pair_moments
        q = theorem1_quantities(m)
        rng = np.random.default_rng(1)
        for _ in range(20):
            u, v = rng.standard_normal((2, 10))
            assert q.g(u, v) == pytest.approx(q.g(v, u))
            assert q.g(u, v) >= 0.0


class TestExactOse:
    def test_single_closed_form(self, identical_pair_moments):
        spec, m = identical_pair_moments
        # sigma^2 (1 + p/(n-p-1)) = 1 + 10/39
        assert exact_ose_single(spec, m, 1) == pytest.approx(1 + 10 / 39, rel=1e-10)

    def test_single_zero_noise(self):
        spec = iso(np.ones(4), noise=1.0)
        m = moments_from_spec(spec, spec, 30, 30, mc_reps=10, seed=1)
        silent = iso(np.ones(4), noise=0.0)
        assert exact_ose_single(silent, m, 1) == 0.0

    def test_single_linear_in_noise(self, identical_pair_moments):
        spec, m = identical_pair_moments
        loud = iso(np.ones(10), noise=2.0)
        assert exact_ose_single(loud, m, 1) == pytest.approx(
            2 * exact_ose_single(spec, m, 1))

    def test_combined_shared_beta_below_single(self, identical_pair_moments):
        spec, m = identical_pair_moments
        combined = exact_ose_combined(spec, spec, m, 1)
        assert combined < exact_ose_single(spec, m, 1)
        # reduces to sigma^2 (1 + tr(W Omega_c))
        expected = 1.0 * (1 + np.trace(m.w1 @ m.omega_c))
        assert combined == pytest.approx(expected, rel=1e-10)

    def test_combined_pure_bias_when_noiseless(self):
        s1 = iso([1.0, 0.0, 0.0], noise=0.0)
        s2 = iso([0.0, 1.0, 0.0], noise=0.0)
        m = moments_from_spec(s1, s2, 30, 30, mc_reps=500, seed=2)
        val = exact_ose_combined(s1, s2, m, 1)
        delta = s1.beta - s2.beta
        assert val == pytest.approx(float(delta @ m.zwz_21 @ delta), rel=1e-12)
        assert val > 0

    def test_combined_matches_brute_force(self):
        s1 = iso([1.0, -0.5, 0.25, 0.0], noise=1.0)
        s2 = iso([0.7, -0.2, 0.45, 0.3], noise=1.0)
        m = moments_from_spec(s1, s2, 35, 45, mc_reps=4000, seed=3)
        exact = exact_ose_combined(s1, s2, m, 2)
        sim, se = brute_force_ose_combined(s1, s2, 35, 45, which=2,
                                           reps=600, oos_n=600, seed=4)
        assert abs(exact - sim) < 3 * max(se, 1e-3)


class TestGroundTruth:
    def test_identical_specs_merge(self):
        spec = iso(np.ones(10))
        gt = ground_truth_merge(spec, spec, 50, 50, mc_reps=1500, seed=5)
        assert gt.merge and not gt.indeterminate
        assert gt.margin == pytest.approx(2 * (10 / 39 - 10 / 89), abs=0.01)

    def test_d03_regime_keeps_separate(self):
        b1 = np.random.default_rng(6).standard_normal(10)
        s1, s2 = iso(b1), iso(b1 + 0.3)
        gt = ground_truth_merge(s1, s2, 50, 50, mc_reps=1500, seed=7)
        assert not gt.merge and not gt.indeterminate

    def test_noiseless_distinct_specs(self):
        s1 = iso([1.0, 0.0], noise=0.0)
        s2 = iso([0.0, 1.0], noise=0.0)
        gt = ground_truth_merge(s1, s2, 20, 20, mc_reps=800, seed=8)
        assert not gt.merge
        assert gt.check < 0  # h(0) = 0 < g

    def test_margin_and_check_agree(self):
        rng = np.random.default_rng(9)
        for trial in range(5):
            b1 = rng.standard_normal(5)
            b2 = b1 + rng.normal(scale=0.3, size=5)
            gt = ground_truth_merge(iso(b1), iso(b2), 40, 40,
                                    mc_reps=1200, seed=10 + trial)
            if not gt.indeterminate and abs(gt.check) > 3 * gt.check_se:
                assert np.sign(gt.margin) == np.sign(gt.check)

    def test_ose_monotone_in_n(self):
        spec = iso(np.ones(6))
        values = []
        for n in (20, 40, 80):
            m = moments_from_spec(spec, spec, n, n, mc_reps=10, seed=11)
            values.append(exact_ose_single(spec, m, 1))
        assert values[0] > values[1] > values[2] > 1.0
