"""Exact out-of-sample error, the h/g decision quantities, and the ground-truth oracle.

For a fitted OLS model under a known generating distribution the expected
squared prediction error has a closed expression in the moment matrices:

    single:    sigma^2 (1 + tr(W_k Omega_k))
    combined:  sigma^2 (1 + tr(W_k Omega_c)) + (b1-b2)' E[Z'W_k Z] (b1-b2)

Merging the pair lowers total error exactly when h(sigma^2) = A0 sigma^2
exceeds g(b1, b2) = ||b1-b2||^2_{B0}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GaussianSpec
from .moments import MomentSet, a0_from, b0_from, moments_from_spec
from .rng import derive_seed


class OracleConsistencyError(RuntimeError):
    """The OSE comparison and the h/g comparison disagree beyond noise."""


@dataclass(frozen=True)
class TheoremOneQuantities:
    a0: float
    b0: np.ndarray
    b0_factor: np.ndarray  # B with B'B = b0 (after PSD projection)
    clipped_eigs: int = 0

    def h(self, x: float) -> float:
        return self.a0 * x

    def g(self, u, v) -> float:
        d = np.asarray(u, dtype=float) - np.asarray(v, dtype=float)
        return float(d @ self.b0 @ d)


def theorem1_quantities(m: MomentSet, indefinite_tol: float = 1e-6) -> TheoremOneQuantities:
    """A0, B0 and a factor B with B'B = B0.

    B0 is PSD in theory; Monte Carlo noise can leave slightly negative
    eigenvalues, which are clipped at zero before factoring. A genuinely
    indefinite estimate (eigenvalue below -tol * ||B0||) is an error: the
    Monte Carlo budget was too small.
    """
    a0 = a0_from(m)
    b0 = b0_from(m)
    eigs, vecs = np.linalg.eigh(b0)
    spectral = max(abs(eigs[0]), abs(eigs[-1]))
    if eigs[0] < -indefinite_tol * spectral:
        raise OracleConsistencyError(
            f"B0 estimate is indefinite (min eig {eigs[0]:.3e}); increase mc_reps"
        )
    clipped = int((eigs < 0).sum())
    lam = np.clip(eigs, 0.0, None)
    if lam[0] > 0:
        factor = np.linalg.cholesky((vecs * lam) @ vecs.T).T
    else:
        factor = (vecs * np.sqrt(lam)) @ vecs.T  # PSD projection left it singular
    return TheoremOneQuantities(a0=a0, b0=b0, b0_factor=factor, clipped_eigs=clipped)


def exact_ose_single(spec: GaussianSpec, m: MomentSet, which: int) -> float:
    w, omega = (m.w1, m.omega1) if which == 1 else (m.w2, m.omega2)
    return float(spec.noise_var * (1.0 + np.trace(w @ omega)))


def exact_ose_combined(spec1: GaussianSpec, spec2: GaussianSpec, m: MomentSet,
                       which: int) -> float:
    if spec1.p != spec2.p:
        raise ValueError("spec dimensions differ")
    sigma2 = spec1.noise_var  # one shared noise scale across sources
    delta = spec1.beta - spec2.beta
    w = m.w1 if which == 1 else m.w2
    zwz = m.zwz_21 if which == 1 else m.zwz_12  # E[Z_{3-k}' W_k Z_{3-k}]
    return float(sigma2 * (1.0 + np.trace(w @ m.omega_c)) + delta @ zwz @ delta)


@dataclass(frozen=True)
class GroundTruth:
    merge: bool
    margin: float            # sum of individual OSEs minus sum of combined OSEs
    margin_se: float
    check: float             # h(sigma^2) - g(beta1, beta2), independent draws
    check_se: float
    indeterminate: bool      # margin within 3 standard errors of zero


def _margin_stats(m: MomentSet, sigma2: float, delta: np.ndarray):
    margins = sigma2 * m.a0_reps - np.einsum("i,rij,j->r", delta, m.b0_reps, delta)
    se = float(margins.std(ddof=1) / np.sqrt(len(margins))) if len(margins) > 1 else np.inf
    return se


def ground_truth_merge(spec1: GaussianSpec, spec2: GaussianSpec, n1: int, n2: int,
                       mc_reps: int = 2000, seed: int = 0,
                       se_band: float = 3.0) -> GroundTruth:
    """Oracle decision: does merging lower the total exact OSE?

    The OSE-sum difference and the h - g margin are estimated from two
    independent Monte Carlo moment sets and must agree in sign whenever the
    difference clears `se_band` standard errors; disagreement raises, since
    the two are algebraically equal in exact arithmetic.
    """
    m_a = moments_from_spec(spec1, spec2, n1, n2, mc_reps,
                            seed=derive_seed(seed, "ground-truth", 0))
    m_b = moments_from_spec(spec1, spec2, n1, n2, mc_reps,
                            seed=derive_seed(seed, "ground-truth", 1))
    sigma2 = spec1.noise_var
    delta = spec1.beta - spec2.beta

    margin = (exact_ose_single(spec1, m_a, 1) + exact_ose_single(spec2, m_a, 2)
              - exact_ose_combined(spec1, spec2, m_a, 1)
              - exact_ose_combined(spec1, spec2, m_a, 2))
    margin_se = _margin_stats(m_a, sigma2, delta)

    q = theorem1_quantities(m_b)
    check = q.h(sigma2) - q.g(spec1.beta, spec2.beta)
    check_se = _margin_stats(m_b, sigma2, delta)

    indeterminate = abs(margin) <= se_band * margin_se
    if not indeterminate and abs(check) > se_band * check_se:
        if np.sign(margin) != np.sign(check):
            raise OracleConsistencyError(
                f"OSE comparison ({margin:.4g} +- {margin_se:.2g}) and h-g "
                f"comparison ({check:.4g} +- {check_se:.2g}) disagree in sign"
            )
    return GroundTruth(merge=bool(margin > 0), margin=float(margin),
                       margin_se=margin_se, check=float(check),
                       check_se=check_se, indeterminate=bool(indeterminate))


def brute_force_ose_combined(spec1: GaussianSpec, spec2: GaussianSpec, n1: int, n2: int,
                             which: int, reps: int = 400, oos_n: int = 400,
                             seed: int = 0):
    """Direct simulation oracle for the combined-fit OSE (tests only).

    Draws design pairs, fits the stacked OLS, measures squared error on
    fresh out-of-samples. Returns (mean, standard error).
    """
    from .data import sample_synthetic
    from .ols import combine_arrays

    target = spec1 if which == 1 else spec2
    vals = np.empty(reps)
    for r in range(reps):
        d1 = sample_synthetic(spec1, n1, derive_seed(seed, "bf", r, 1))
        d2 = sample_synthetic(spec2, n2, derive_seed(seed, "bf", r, 2))
        cf = combine_arrays(d1.features, d1.targets, d2.features, d2.targets)
        fresh = sample_synthetic(target, oos_n, derive_seed(seed, "bf", r, 3))
        resid = fresh.targets - fresh.features @ cf.fit.beta_hat
        vals[r] = float(resid @ resid / oos_n)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(reps))
