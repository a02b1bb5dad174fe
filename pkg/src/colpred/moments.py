"""Distributional expectations behind the merge criterion.

Second moments W_k are available in closed form (spec mode) or as sample
moments (data mode). Expected inverse Gram matrices and the E[Z' W Z] terms
have no closed form in general and are estimated by seeded Monte Carlo over
fresh design draws (spec mode) or by bootstrap resampling of rows (data mode).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, GaussianSpec
from .rng import derive

DEFAULT_MC_REPS = 2000
DEFAULT_BOOT_REPS = 500
_CHUNK_FLOATS = 8_000_000  # cap on draw-buffer size per chunk


class MomentEstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MomentSet:
    """Estimated moments for a dataset pair at given design sizes.

    zwz_12 is E[Z_1' W_2 Z_1] and zwz_21 is E[Z_2' W_1 Z_2], with
    Z_k = (Xc'Xc)^{-1} Xk'Xk. a0_reps/b0_reps hold per-replicate values of
    the criterion ingredients so callers can form Monte Carlo standard
    errors of derived scalars.
    """

    w1: np.ndarray
    w2: np.ndarray
    omega1: np.ndarray
    omega2: np.ndarray
    omega_c: np.ndarray
    zwz_12: np.ndarray
    zwz_21: np.ndarray
    n1: int
    n2: int
    mc_reps: int
    mc_std_err: float
    a0_reps: np.ndarray = field(repr=False, default=None)
    b0_reps: np.ndarray = field(repr=False, default=None)

    @property
    def p(self) -> int:
        return self.w1.shape[0]

    def swapped(self) -> "MomentSet":
        # a0 and b0 are symmetric in the pair, so their replicates carry over
        return MomentSet(
            w1=self.w2, w2=self.w1, omega1=self.omega2, omega2=self.omega1,
            omega_c=self.omega_c, zwz_12=self.zwz_21, zwz_21=self.zwz_12,
            n1=self.n2, n2=self.n1, mc_reps=self.mc_reps,
            mc_std_err=self.mc_std_err, a0_reps=self.a0_reps, b0_reps=self.b0_reps,
        )


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def second_moment(spec: GaussianSpec) -> np.ndarray:
    """E[x x'] = Sigma + mu mu'."""
    return spec.sigma_x + np.outer(spec.mu, spec.mu)


def moments_from_spec(spec1: GaussianSpec, spec2: GaussianSpec, n1: int, n2: int,
                      mc_reps: int = DEFAULT_MC_REPS, seed: int = 0) -> MomentSet:
    """Moments under known generating distributions.

    W_k is exact. Omega_k uses the inverse-Wishart mean Sigma^{-1}/(n-p-1)
    when mu_k = 0, Monte Carlo otherwise. Omega_c and both Z'WZ terms are
    always Monte Carlo (mc_reps fresh design draws).
    """
    if spec1.p != spec2.p:
        raise MomentEstimationError("spec dimensions differ")
    p = spec1.p
    if mc_reps < 1:
        raise MomentEstimationError("mc_reps must be at least 1")
    w1 = second_moment(spec1)
    w2 = second_moment(spec2)

    closed1 = _closed_form_omega(spec1, n1)
    closed2 = _closed_form_omega(spec2, n2)

    g = derive(seed, "spec-moments")
    sums = _MomentAccumulator(p, mc_reps, w1, w2, track_omegas=(closed1 is None, closed2 is None))
    chunk = max(1, int(_CHUNK_FLOATS // ((n1 + n2) * p)))
    done = 0
    while done < mc_reps:
        c = min(chunk, mc_reps - done)
        X1 = spec1.mu + g.standard_normal((c, n1, p)) @ spec1.chol.T
        X2 = spec2.mu + g.standard_normal((c, n2, p)) @ spec2.chol.T
        g1 = _sym(np.einsum("rij,rik->rjk", X1, X1))
        g2 = _sym(np.einsum("rij,rik->rjk", X2, X2))
        sums.add(g1, g2)
        done += c

    return sums.finish(closed1, closed2, n1, n2, spec1, spec2)


def moments_from_data(d1: Dataset, d2: Dataset, boot_reps: int = DEFAULT_BOOT_REPS,
                      seed: int = 0, resample_n: int | None = None) -> MomentSet:
    """Plug-in moments from the data alone.

    W_k is the sample second moment X'X/n. The Omega and Z'WZ terms are
    averaged over bootstrap row-resamples of size resample_n (default: each
    dataset's own size), which sets the design size the moments refer to.
    """
    if d1.p != d2.p:
        raise MomentEstimationError("datasets have different feature widths")
    p = d1.p
    if boot_reps < 1:
        raise MomentEstimationError("boot_reps must be at least 1")
    m1 = resample_n or d1.n
    m2 = resample_n or d2.n
    if min(m1, m2) <= p:
        raise MomentEstimationError("resample size must exceed p")
    w1 = _sym(d1.features.T @ d1.features / d1.n)
    w2 = _sym(d2.features.T @ d2.features / d2.n)

    g = derive(seed, "data-moments")
    sums = _MomentAccumulator(p, boot_reps, w1, w2, track_omegas=(True, True))
    attempts = 0
    accepted = 0
    max_attempts = 10 * boot_reps
    chunk = max(1, int(_CHUNK_FLOATS // ((m1 + m2) * p)))
    while accepted < boot_reps:
        if attempts >= max_attempts:
            raise MomentEstimationError(
                f"bootstrap produced singular resamples in most of {max_attempts} attempts"
            )
        c = min(chunk, boot_reps - accepted, max_attempts - attempts)
        i1 = g.integers(0, d1.n, size=(c, m1))
        i2 = g.integers(0, d2.n, size=(c, m2))
        X1 = d1.features[i1]
        X2 = d2.features[i2]
        g1 = _sym(np.einsum("rij,rik->rjk", X1, X1))
        g2 = _sym(np.einsum("rij,rik->rjk", X2, X2))
        ok = _well_conditioned(g1) & _well_conditioned(g2) & _well_conditioned(_sym(g1 + g2))
        attempts += c
        if not ok.any():
            continue
        sums.add(g1[ok], g2[ok])
        accepted += int(ok.sum())

    return sums.finish(None, None, m1, m2, None, None)


def _closed_form_omega(spec: GaussianSpec, n: int):
    """Inverse-Wishart mean for a centered Gaussian design, else None."""
    if not np.allclose(spec.mu, 0.0):
        return None
    if n <= spec.p + 2:
        raise MomentEstimationError(
            f"closed-form E[(X'X)^-1] needs n > p + 2 (got n = {n}, p = {spec.p})"
        )
    return np.linalg.inv(spec.sigma_x) / (n - spec.p - 1)


def _well_conditioned(grams: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    eigs = np.linalg.eigvalsh(grams)
    return (eigs[..., 0] > 0) & (eigs[..., 0] > rcond * eigs[..., -1])


class _MomentAccumulator:
    """Streaming mean/variance of the Monte Carlo moment matrices."""

    def __init__(self, p, reps, w1, w2, track_omegas):
        self.p = p
        self.w1, self.w2 = w1, w2
        z = lambda: np.zeros((p, p))
        self.o1_s, self.o1_q = z(), z()
        self.o2_s, self.o2_q = z(), z()
        self.oc_s, self.oc_q = z(), z()
        self.z12_s, self.z12_q = z(), z()
        self.z21_s, self.z21_q = z(), z()
        # per-replicate traces tr(W1 O1), tr(W2 O2), tr((W1+W2) Oc)
        self.t1, self.t2, self.tc = [], [], []
        self.b0_reps = []
        self.count = 0

    def add(self, g1, g2):
        gc = _sym(g1 + g2)
        o1 = _sym(np.linalg.inv(g1))
        o2 = _sym(np.linalg.inv(g2))
        oc = _sym(np.linalg.inv(gc))
        # Z_1 = oc g1, Z_2 = oc g2
        z1 = oc @ g1
        z2 = oc @ g2
        z12 = _sym(np.einsum("rji,jk,rkl->ril", z1, self.w2, z1))
        z21 = _sym(np.einsum("rji,jk,rkl->ril", z2, self.w1, z2))
        for total, sq, vals in ((self.o1_s, self.o1_q, o1), (self.o2_s, self.o2_q, o2),
                                (self.oc_s, self.oc_q, oc), (self.z12_s, self.z12_q, z12),
                                (self.z21_s, self.z21_q, z21)):
            total += vals.sum(axis=0)
            sq += (vals ** 2).sum(axis=0)
        self.t1.append(np.einsum("ij,rji->r", self.w1, o1))
        self.t2.append(np.einsum("ij,rji->r", self.w2, o2))
        self.tc.append(np.einsum("ij,rji->r", self.w1 + self.w2, oc))
        self.b0_reps.append(z12 + z21)
        self.count += g1.shape[0]

    def finish(self, closed1, closed2, n1, n2, spec1, spec2) -> MomentSet:
        r = self.count
        means, errs = {}, []
        for name, total, sq in (("omega1", self.o1_s, self.o1_q),
                                ("omega2", self.o2_s, self.o2_q),
                                ("omega_c", self.oc_s, self.oc_q),
                                ("zwz_12", self.z12_s, self.z12_q),
                                ("zwz_21", self.z21_s, self.z21_q)):
            mean = total / r
            var = np.maximum(sq / r - mean ** 2, 0.0)
            means[name] = _sym(mean)
            errs.append(np.sqrt(var / r).max() if r > 1 else np.inf)
        omega1 = closed1 if closed1 is not None else means["omega1"]
        omega2 = closed2 if closed2 is not None else means["omega2"]
        # per-rep a0, with closed-form single-design traces substituted where
        # available so only the genuinely Monte Carlo parts carry noise
        t1 = (np.full(r, np.trace(self.w1 @ closed1)) if closed1 is not None
              else np.concatenate(self.t1))
        t2 = (np.full(r, np.trace(self.w2 @ closed2)) if closed2 is not None
              else np.concatenate(self.t2))
        a0_reps = t1 + t2 - np.concatenate(self.tc)
        b0_reps = np.concatenate(self.b0_reps)
        return MomentSet(
            w1=self.w1, w2=self.w2, omega1=omega1, omega2=omega2,
            omega_c=means["omega_c"], zwz_12=means["zwz_12"], zwz_21=means["zwz_21"],
            n1=n1, n2=n2, mc_reps=r, mc_std_err=float(max(errs)),
            a0_reps=a0_reps, b0_reps=b0_reps,
        )


def a0_from(m: MomentSet) -> float:
    return float(np.trace(m.w1 @ (m.omega1 - m.omega_c))
                 + np.trace(m.w2 @ (m.omega2 - m.omega_c)))


def b0_from(m: MomentSet) -> np.ndarray:
    return _sym(m.zwz_12 + m.zwz_21)
