import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colpred.data import Dataset, GaussianSpec, sample_synthetic
from colpred.ols import (SingularFitError, fit_combined, fit_ols, predict,
                         predict_batch, whitened_sqnorm, whitening_matrix_d)


def _random_dataset(n, p, seed, beta=None, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    if beta is None:
        beta = rng.standard_normal(p)
    y = X @ beta + noise * rng.standard_normal(n)
    return Dataset(X, y, id=f"rand{seed}"), beta


class TestFitOls:
    def test_orthonormal_recovery(self):
        # X with orthonormal columns and exact linear targets recovers beta
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((30, 4)))
        beta = np.array([2.0, -1.0, 0.5, 3.0])
        d = Dataset(q, q @ beta, id="ortho")
        fit = fit_ols(d)
        np.testing.assert_allclose(fit.beta_hat, beta, atol=1e-10)

    def test_duplicated_column_is_singular(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((20, 1))
        X = np.hstack([x, x])
        with pytest.raises(SingularFitError, match="dup"):
            fit_ols(Dataset(X, rng.standard_normal(20), id="dup"))

    def test_matches_qr_oracle(self):
        d, _ = _random_dataset(50, 10, seed=2)
        fit = fit_ols(d)
        q, r = np.linalg.qr(d.features)
        beta_qr = np.linalg.solve(r, q.T @ d.targets)
        np.testing.assert_allclose(fit.beta_hat, beta_qr, atol=1e-8)

    def test_gram_inverse_is_inverse(self):
        d, _ = _random_dataset(40, 6, seed=3)
        fit = fit_ols(d)
        gram = d.features.T @ d.features
        err = np.linalg.norm(fit.gram_inverse @ gram - np.eye(6)) / np.sqrt(6)
        assert err < 1e-8

    def test_needs_more_rows_than_columns(self):
        d, _ = _random_dataset(5, 5, seed=4)
        with pytest.raises(SingularFitError):
            fit_ols(d)

    @settings(max_examples=20, deadline=None)
    @given(scale=st.floats(min_value=0.1, max_value=100.0),
           seed=st.integers(min_value=0, max_value=2**16))
    def test_scale_equivariance(self, scale, seed):
        d, _ = _random_dataset(30, 3, seed=seed)
        scaled = Dataset(d.features, d.targets * scale, id="scaled")
        f1 = fit_ols(d)
        f2 = fit_ols(scaled)
        np.testing.assert_allclose(f2.beta_hat, scale * f1.beta_hat,
                                   rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(f2.rss, scale ** 2 * f1.rss, rtol=1e-9)

    def test_permutation_invariance(self):
        d, _ = _random_dataset(25, 4, seed=6)
        perm = np.random.default_rng(7).permutation(25)
        shuffled = Dataset(d.features[perm], d.targets[perm], id="shuf")
        np.testing.assert_allclose(fit_ols(d).beta_hat, fit_ols(shuffled).beta_hat,
                                   atol=1e-12)


class TestFitCombined:
    def test_duplicate_dataset_matches_single(self):
        d, _ = _random_dataset(30, 5, seed=8)
        comb = fit_combined(d, Dataset(d.features, d.targets, id="copy"))
        np.testing.assert_allclose(comb.fit.beta_hat, fit_ols(d).beta_hat, atol=1e-10)

    def test_noiseless_shared_beta_zero_variance(self):
        beta = np.array([1.0, 2.0])
        s = GaussianSpec.isotropic(beta, noise_var=0.0)
        d1 = sample_synthetic(s, 20, seed=1, id="a")
        d2 = sample_synthetic(s, 25, seed=2, id="b")
        comb = fit_combined(d1, d2)
        assert comb.sigma2_hat <= 1e-16

    def test_sigma2_matches_direct_recomputation(self):
        d1, _ = _random_dataset(30, 4, seed=9)
        d2, _ = _random_dataset(20, 4, seed=10)
        comb = fit_combined(d1, d2)
        X = np.vstack([d1.features, d2.features])
        y = np.concatenate([d1.targets, d2.targets])
        resid = y - X @ comb.fit.beta_hat
        expected = resid @ resid / (30 + 20 - 4)
        assert comb.sigma2_hat == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch(self):
        d1, _ = _random_dataset(30, 4, seed=11)
        d2, _ = _random_dataset(30, 5, seed=12)
        with pytest.raises(SingularFitError, match="widths differ"):
            fit_combined(d1, d2)

    def test_combined_residual_never_beats_individual(self):
        # why the in-sample baseline always prefers separate fits
        for seed in range(5):
            d1, _ = _random_dataset(30, 4, seed=100 + seed)
            d2, _ = _random_dataset(25, 4, seed=200 + seed)
            comb = fit_combined(d1, d2)
            for d in (d1, d2):
                r = d.targets - d.features @ comb.fit.beta_hat
                assert r @ r >= fit_ols(d).rss - 1e-10


class TestWhitening:
    def test_identity_grams(self):
        # both Grams n*I: D'D = (n/2) I
        n, p = 16, 4
        X = np.linalg.qr(np.random.default_rng(0).standard_normal((n, p)))[0] * np.sqrt(n)
        d = Dataset(X, X @ np.ones(p), id="iso")
        f = fit_ols(d)
        dmat = whitening_matrix_d(f, f)
        np.testing.assert_allclose(dmat.T @ dmat, (n / 2) * np.eye(p), atol=1e-8)

    def test_scalar_case(self):
        # p = 1 with gram inverses a and b: D = 1/sqrt(a + b)
        rng = np.random.default_rng(5)
        d1 = Dataset(rng.standard_normal((10, 1)), rng.standard_normal(10), id="a")
        d2 = Dataset(rng.standard_normal((12, 1)), rng.standard_normal(12), id="b")
        f1, f2 = fit_ols(d1), fit_ols(d2)
        a = f1.gram_inverse[0, 0]
        b = f2.gram_inverse[0, 0]
        dmat = whitening_matrix_d(f1, f2)
        assert dmat[0, 0] == pytest.approx(1 / np.sqrt(a + b))

    def test_definitional_identity(self):
        d1, _ = _random_dataset(40, 6, seed=13)
        d2, _ = _random_dataset(35, 6, seed=14)
        f1, f2 = fit_ols(d1), fit_ols(d2)
        dmat = whitening_matrix_d(f1, f2)
        s = f1.gram_inverse + f2.gram_inverse
        np.testing.assert_allclose(dmat.T @ dmat @ s, np.eye(6), atol=1e-8)

    def test_norm_matches_solve_path(self):
        d1, _ = _random_dataset(40, 6, seed=15)
        d2, _ = _random_dataset(35, 6, seed=16)
        f1, f2 = fit_ols(d1), fit_ols(d2)
        v = np.random.default_rng(17).standard_normal(6)
        dmat = whitening_matrix_d(f1, f2)
        direct = float(np.sum((dmat @ v) ** 2))
        assert whitened_sqnorm(f1, f2, v) == pytest.approx(direct, rel=1e-10)


class TestPredict:
    def test_zero_and_basis_vectors(self):
        d, _ = _random_dataset(30, 4, seed=18)
        fit = fit_ols(d)
        assert predict(fit, np.zeros(4)) == 0.0
        for i in range(4):
            e = np.zeros(4)
            e[i] = 1.0
            assert predict(fit, e) == pytest.approx(fit.beta_hat[i])

    def test_batch_matches_loop(self):
        d, _ = _random_dataset(30, 4, seed=19)
        fit = fit_ols(d)
        X = np.random.default_rng(20).standard_normal((7, 4))
        batch = predict_batch(fit, X)
        loop = np.array([predict(fit, x) for x in X])
        np.testing.assert_allclose(batch, loop, atol=1e-12)

    def test_length_mismatch(self):
        d, _ = _random_dataset(30, 4, seed=21)
        with pytest.raises(ValueError):
            predict(fit_ols(d), np.zeros(5))
