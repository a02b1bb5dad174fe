"""Ordinary least squares on single and stacked datasets, and the whitening factor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset

RCOND_LIMIT = 1e-12
QR_FALLBACK_COND = 1e10


class SingularFitError(np.linalg.LinAlgError):
    """Gram matrix too ill-conditioned to fit."""


@dataclass(frozen=True)
class OlsFit:
    beta_hat: np.ndarray
    gram_inverse: np.ndarray
    n: int
    p: int
    rss: float  # residual sum of squares on the fitting data


@dataclass(frozen=True)
class CombinedFit:
    fit: OlsFit
    sigma2_hat: float
    n1: int
    n2: int

    @property
    def n0(self) -> int:
        return self.n1 + self.n2 - self.fit.p


def _solve_gram(X: np.ndarray, y: np.ndarray, label: str):
    """(beta_hat, gram_inverse) via Cholesky, QR fallback on bad conditioning."""
    gram = X.T @ X
    # reciprocal condition number of the Gram matrix
    eigs = np.linalg.eigvalsh(gram)
    if eigs[-1] <= 0 or eigs[0] / eigs[-1] < RCOND_LIMIT:
        raise SingularFitError(
            f"{label}: Gram matrix is numerically singular "
            f"(rcond ~ {max(eigs[0], 0.0) / max(eigs[-1], np.finfo(float).tiny):.2e})"
        )
    cond = eigs[-1] / eigs[0]
    if cond <= QR_FALLBACK_COND:
        L = np.linalg.cholesky(gram)
        beta = _chol_solve(L, X.T @ y)
        gram_inv = _chol_solve(L, np.eye(X.shape[1]))
    else:
        q, r = np.linalg.qr(X)
        beta = np.linalg.solve(r, q.T @ y)
        r_inv = np.linalg.solve(r, np.eye(X.shape[1]))
        gram_inv = r_inv @ r_inv.T
    gram_inv = 0.5 * (gram_inv + gram_inv.T)
    return beta, gram_inv


def _chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    z = solve_triangular(L, b, lower=True)
    return solve_triangular(L.T, z, lower=False)


def fit_ols(d: Dataset) -> OlsFit:
    """OLS fit of targets on features; requires n > p and a well-posed Gram."""
    if d.n <= d.p:
        raise SingularFitError(f"{d.id}: n = {d.n} rows cannot identify p = {d.p} coefficients")
    beta, gram_inv = _solve_gram(d.features, d.targets, d.id)
    resid = d.targets - d.features @ beta
    return OlsFit(beta_hat=beta, gram_inverse=gram_inv, n=d.n, p=d.p,
                  rss=float(resid @ resid))


def fit_arrays(X: np.ndarray, y: np.ndarray, label: str = "data") -> OlsFit:
    """fit_ols on raw arrays, skipping Dataset construction (hot path)."""
    n, p = X.shape
    if n <= p:
        raise SingularFitError(f"{label}: n = {n} rows cannot identify p = {p} coefficients")
    beta, gram_inv = _solve_gram(X, y, label)
    resid = y - X @ beta
    return OlsFit(beta_hat=beta, gram_inverse=gram_inv, n=n, p=p, rss=float(resid @ resid))


def fit_combined(d1: Dataset, d2: Dataset) -> CombinedFit:
    """OLS on the row-stacked pair plus the pooled noise-variance estimate."""
    if d1.p != d2.p:
        raise SingularFitError(
            f"feature widths differ: {d1.id} has p = {d1.p}, {d2.id} has p = {d2.p}"
        )
    return combine_arrays(d1.features, d1.targets, d2.features, d2.targets,
                          label=f"{d1.id}+{d2.id}")


def combine_arrays(X1, y1, X2, y2, label: str = "combined") -> CombinedFit:
    n1, n2, p = X1.shape[0], X2.shape[0], X1.shape[1]
    if n1 + n2 <= p:
        raise SingularFitError(f"{label}: stacked rows do not exceed p")
    X = np.vstack([X1, X2])
    y = np.concatenate([y1, y2])
    fit = fit_arrays(X, y, label)
    sigma2 = fit.rss / (n1 + n2 - p)
    return CombinedFit(fit=fit, sigma2_hat=float(sigma2), n1=n1, n2=n2)


def whitening_matrix_d(f1: OlsFit, f2: OlsFit) -> np.ndarray:
    """Upper-triangular D with D'D = (gram_inv_1 + gram_inv_2)^{-1}.

    Downstream formulas use only ||D v||, so any square root would do; the
    Cholesky factor is the canonical choice.
    """
    s = f1.gram_inverse + f2.gram_inverse
    try:
        L = np.linalg.cholesky(np.linalg.inv(s))
    except np.linalg.LinAlgError:
        raise SingularFitError("sum of Gram inverses is not positive definite") from None
    return L.T


def whitened_sqnorm(f1: OlsFit, f2: OlsFit, v: np.ndarray) -> float:
    """||D v||^2 without forming D: v' (gram_inv_1 + gram_inv_2)^{-1} v."""
    s = f1.gram_inverse + f2.gram_inverse
    return float(v @ np.linalg.solve(s, v))


def predict(f: OlsFit, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (f.p,):
        raise ValueError(f"x has shape {x.shape}, expected ({f.p},)")
    return float(x @ f.beta_hat)


def predict_batch(f: OlsFit, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != f.p:
        raise ValueError(f"X has shape {X.shape}, expected (*, {f.p})")
    return X @ f.beta_hat
