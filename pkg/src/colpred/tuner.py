"""Confidence-level tuning and the pairwise merge decision.

Part 1 sweeps alpha over a grid, replaying randomized trials and counting
how often the criterion's suggestion matches the sign of the estimated
out-of-sample-error difference. Part 2 reruns fresh trials at the winning
alpha; the fraction of matches is the proxy accuracy and, against the
threshold lambda, yields the merge decision.

Each trial re-partitions every dataset: subsample_n rows drawn without
replacement train that trial's fits, and the remaining rows form the pool
from which bootstrap out-of-samples are generated. Trials within a batch
are vectorized; results depend only on (seed, labels), never on batch size
or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .criterion import CALIBRATED, CERTIFIED, a_tilde_coefficients, c_constants
from .data import Dataset, SplitDataset
from .moments import MomentSet, b0_from, moments_from_data
from .ols import OlsFit, combine_arrays, fit_ols
from .oracle import theorem1_quantities
from .rng import derive, derive_seed

PAPER_LITERAL = "paper-literal"
MAJORITY_DIRECTION = "majority-direction"

_BATCH = 128
_RCOND = 1e-10


class TunerError(RuntimeError):
    pass


@dataclass(frozen=True)
class TunerConfig:
    alpha_min: float = 2.0
    alpha_max: float = 10.0
    eta: float = 0.01
    max_iterations: int = 1000
    lambda_threshold: float = 0.9
    subsample_n: Optional[int] = None   # default: 50 for p <= 10, else 100
    oos_count: int = 1000
    boot_reps_m: int = 100
    split_fraction: float = 0.5
    seed: int = 0
    mode: str = MAJORITY_DIRECTION
    criterion: str = CALIBRATED
    moment_boot_reps: int = 200
    threads: int = 1

    def __post_init__(self):
        # alpha_min == alpha_max is the legal degenerate single-point grid
        if self.alpha_min > self.alpha_max:
            raise TunerError("alpha_min must not exceed alpha_max")
        if self.eta <= 0:
            raise TunerError("eta must be positive")
        for name in ("max_iterations", "oos_count", "boot_reps_m", "moment_boot_reps"):
            if getattr(self, name) < 1:
                raise TunerError(f"{name} must be at least 1")
        if not 0.0 < self.lambda_threshold <= 1.0:
            raise TunerError("lambda_threshold must lie in (0, 1]")
        if not 0.0 < self.split_fraction < 1.0:
            raise TunerError("split_fraction must lie in (0, 1)")
        if self.mode not in (PAPER_LITERAL, MAJORITY_DIRECTION):
            raise TunerError(f"unknown mode {self.mode!r}")
        if self.criterion not in (CALIBRATED, CERTIFIED):
            raise TunerError(f"unknown criterion {self.criterion!r}")

    def resolved_subsample(self, p: int) -> int:
        if self.subsample_n is not None:
            return self.subsample_n
        return 50 if p <= 10 else 100

    def with_seed(self, seed: int) -> "TunerConfig":
        return replace(self, seed=seed)

    @classmethod
    def desk(cls, **overrides) -> "TunerConfig":
        """Coarse settings for laptop-scale experiment grids."""
        base = dict(eta=1.0, max_iterations=200, boot_reps_m=1, moment_boot_reps=100)
        base.update(overrides)
        return cls(**base)


def alpha_grid(cfg: TunerConfig) -> np.ndarray:
    """alpha_min, alpha_min + eta, ... with floor((max-min)/eta) + 1 points."""
    count = int(np.floor((cfg.alpha_max - cfg.alpha_min) / cfg.eta + 1e-9)) + 1
    return cfg.alpha_min + cfg.eta * np.arange(count)


@dataclass(frozen=True)
class MergeDecision:
    merge: bool
    proxy_acc: float
    alpha_opt: float
    per_alpha_acc: dict
    suggestion_rate: float
    direct_success_rate: float = float("nan")
    iterations: int = 0
    failed_iterations: int = 0
    mode: str = MAJORITY_DIRECTION


def bootstrap_ose(fit: OlsFit, held_out: Dataset, m: int, oos_n: int, seed: int,
                  identity: bool = False) -> float:
    """Average squared prediction error over m bootstrap resamples.

    Each resample draws oos_n rows with replacement from the held-out set;
    the estimate is the grand mean of the squared errors. identity=True is
    a test hook that scores every held-out row exactly once, reducing the
    estimator to the plain held-out mean squared error.
    """
    if held_out.n < 1:
        raise TunerError("held-out set is empty")
    errs = (held_out.targets - held_out.features @ fit.beta_hat) ** 2
    if identity:
        return float(errs.mean())
    g = derive(seed, "bootstrap-ose")
    counts = g.multinomial(oos_n, np.full(held_out.n, 1.0 / held_out.n), size=m)
    return float((counts @ errs).mean() / oos_n)


def ose_dif_hat(pair: tuple[SplitDataset, SplitDataset], cfg: TunerConfig,
                seed: int) -> float:
    """Estimated total OSE of the individual fits minus the combined fit.

    Positive values favor merging. Fits use the train sides; all four
    bootstrap terms are evaluated on the respective held-out sides, with the
    same resamples scoring the individual and combined model of a dataset.
    """
    s1, s2 = pair
    f1 = fit_ols(s1.train)
    f2 = fit_ols(s2.train)
    comb = combine_arrays(s1.train.features, s1.train.targets,
                          s2.train.features, s2.train.targets)
    total = 0.0
    for k, (fit_k, split_k) in enumerate(((f1, s1), (f2, s2)), start=1):
        held = split_k.held_out
        g = derive(seed, "ose-dif", k)
        counts = g.multinomial(cfg.oos_count, np.full(held.n, 1.0 / held.n),
                               size=cfg.boot_reps_m)
        e_ind = (held.targets - held.features @ fit_k.beta_hat) ** 2
        e_com = (held.targets - held.features @ comb.fit.beta_hat) ** 2
        total += float((counts @ (e_ind - e_com)).mean() / cfg.oos_count)
    return total


class _PairEngine:
    """Vectorized randomized trials for one dataset pair."""

    def __init__(self, d1: Dataset, d2: Dataset, cfg: TunerConfig,
                 moment_set: Optional[MomentSet] = None):
        if d1.p != d2.p:
            raise TunerError(f"feature widths differ: {d1.p} vs {d2.p}")
        self.d1, self.d2, self.cfg = d1, d2, cfg
        self.p = d1.p
        self.sub_n = cfg.resolved_subsample(self.p)
        if self.sub_n < self.p + 2:
            raise TunerError(f"subsample_n = {self.sub_n} below p + 2 = {self.p + 2}")
        for d in (d1, d2):
            if d.n <= self.sub_n:
                raise TunerError(
                    f"{d.id}: n = {d.n} leaves no out-of-sample rows beside a "
                    f"training subsample of {self.sub_n}"
                )
        self.m = moment_set if moment_set is not None else moments_from_data(
            d1, d2, cfg.moment_boot_reps,
            seed=derive_seed(cfg.seed, "pair-moments"), resample_n=self.sub_n)
        self.q = theorem1_quantities(self.m)
        self.b0 = b0_from(self.m)
        self.alphas = alpha_grid(cfg)
        self.n0 = 2 * self.sub_n - self.p
        coeffs = np.array([a_tilde_coefficients(self.n0, self.q.a0, a)
                           for a in self.alphas])
        self.a1, self.a2 = coeffs[:, 0], coeffs[:, 1]

    def run(self, rng, iterations: int):
        """(suggestions (iters, n_alpha), dif (iters,), failed count)."""
        sugg_parts, dif_parts = [], []
        failed = 0
        remaining = iterations
        while remaining > 0:
            b = min(_BATCH, remaining)
            s, d, bad = self._batch(rng, b)
            sugg_parts.append(s)
            dif_parts.append(d)
            failed += bad
            remaining -= b
        return np.vstack(sugg_parts), np.concatenate(dif_parts), failed

    def _batch(self, rng, b: int):
        cfg = self.cfg
        stats1 = self._fit_side(rng, self.d1, b)
        stats2 = self._fit_side(rng, self.d2, b)
        g1, rhs1, ginv1 = stats1["gram"], stats1["rhs"], stats1["ginv"]
        g2, rhs2, ginv2 = stats2["gram"], stats2["rhs"], stats2["ginv"]
        ok = stats1["ok"] & stats2["ok"]

        gc = g1 + g2
        okc = _well_posed(gc)
        ok &= okc
        gc_safe = np.where(ok[:, None, None], gc, np.eye(self.p))
        b1 = _solve_vec(np.where(stats1["ok"][:, None, None], g1, np.eye(self.p)), rhs1)
        b2 = _solve_vec(np.where(stats2["ok"][:, None, None], g2, np.eye(self.p)), rhs2)
        bc = _solve_vec(gc_safe, rhs1 + rhs2)

        rss_c = (_sq_resid(stats1, bc) + _sq_resid(stats2, bc))
        sigma2 = rss_c / self.n0
        diff = b1 - b2
        s_mat = ginv1 + ginv2
        dd2 = np.einsum("bi,bi->b", diff, _solve_vec(s_mat, diff))
        g_hat = np.einsum("bi,ij,bj->b", diff, self.b0, diff)
        tr1 = np.einsum("ij,bji->b", self.b0, s_mat)

        phi = self.a1[None, :] * sigma2[:, None] + self.a2[None, :] * dd2[:, None]
        if cfg.criterion == CALIBRATED:
            debiased = np.maximum(g_hat - sigma2 * tr1, 0.0)
            psi = np.exp(-self.alphas)[None, :] * debiased[:, None]
        else:
            psi = self._certified_psi(sigma2, dd2, g_hat, s_mat, tr1)
        sugg = phi > psi

        dif = self._ose_dif(rng, stats1, b1, bc) + self._ose_dif(rng, stats2, b2, bc)
        return sugg[ok], dif[ok], int((~ok).sum())

    def _fit_side(self, rng, d: Dataset, b: int):
        n = d.n
        perms = rng.permuted(np.broadcast_to(np.arange(n), (b, n)), axis=1)
        tr_idx = perms[:, :self.sub_n]
        out_idx = perms[:, self.sub_n:]
        X = d.features[tr_idx]
        y = d.targets[tr_idx]
        gram = np.einsum("bij,bik->bjk", X, X)
        rhs = np.einsum("bij,bi->bj", X, y)
        ok = _well_posed(gram)
        ginv = np.linalg.inv(np.where(ok[:, None, None], gram, np.eye(self.p)))
        return dict(gram=gram, rhs=rhs, ginv=ginv, ok=ok, X=X, y=y,
                    Xo=d.features[out_idx], yo=d.targets[out_idx])

    def _ose_dif(self, rng, stats, b_ind, bc):
        cfg = self.cfg
        Xo, yo = stats["Xo"], stats["yo"]
        b, n_out = yo.shape
        e_ind = (yo - np.einsum("boj,bj->bo", Xo, b_ind)) ** 2
        e_com = (yo - np.einsum("boj,bj->bo", Xo, bc)) ** 2
        counts = rng.multinomial(cfg.oos_count, np.full(n_out, 1.0 / n_out),
                                 size=(b, cfg.boot_reps_m))
        return np.einsum("bmo,bo->b", counts, e_ind - e_com) / (
            cfg.oos_count * cfg.boot_reps_m)

    def _certified_psi(self, sigma2, dd2, g_hat, s_mat, tr1):
        """Full concentration bound, vectorized over (batch, alpha)."""
        b = sigma2.shape[0]
        m = self.b0[None] @ s_mat
        tr2 = np.einsum("bij,bji->b", m, m)
        chol = np.linalg.cholesky(0.5 * (s_mat + np.swapaxes(s_mat, 1, 2)))
        inner = np.swapaxes(chol, 1, 2) @ self.b0[None] @ chol
        spectral = np.linalg.eigvalsh(inner)[:, -1]
        dd = np.sqrt(np.maximum(dd2, 0.0))
        psi = np.empty((b, self.alphas.size))
        for j, alpha in enumerate(self.alphas):
            c1, c2, c3, c4, c5 = c_constants(self.n0, sigma2, dd, alpha)
            disc = np.maximum((c1 - c4) ** 2 - 4.0 * c3 * (c5 - c2), 0.0)
            root = (c1 - c4 + np.sqrt(disc)) / (2.0 * c3)
            denom = self.n0 - 2.0 * np.sqrt(self.n0 * alpha)
            fallback = (np.sqrt(self.n0 * sigma2 / denom) if denom > 0
                        else np.full(b, np.inf))
            c0 = np.where((c3 < 0) | (root < 0), fallback, root)
            rad = c0 * np.sqrt(np.maximum(
                tr1 + 2.0 * np.sqrt(np.maximum(tr2 * alpha, 0.0))
                + 2.0 * spectral * alpha, 0.0))
            psi[:, j] = (np.sqrt(np.maximum(g_hat, 0.0)) + rad) ** 2
        return psi


def _solve_vec(mats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    return np.linalg.solve(mats, vecs[..., None])[..., 0]


def _sq_resid(stats, beta):
    r = stats["y"] - np.einsum("bij,bj->bi", stats["X"], beta)
    return np.einsum("bi,bi->b", r, r)


def _well_posed(grams: np.ndarray) -> np.ndarray:
    eigs = np.linalg.eigvalsh(grams)
    return (eigs[:, 0] > 0) & (eigs[:, 0] > _RCOND * eigs[:, -1])


def tune_alpha(d1: Dataset, d2: Dataset, cfg: TunerConfig,
               engine: Optional[_PairEngine] = None):
    """Pick the grid alpha whose suggestions best track the OSE difference.

    Returns (alpha_opt, per_alpha_acc). Ties break toward the smallest
    alpha. Trials are shared across the grid: one trial's fits and OSE
    difference score every alpha at once, which leaves each alpha's success
    count with the same distribution as fully independent sweeps at a small
    fraction of the cost.
    """
    eng = engine or _PairEngine(d1, d2, cfg)
    rng = derive(cfg.seed, "tune-part1")
    sugg, dif, failed = eng.run(rng, cfg.max_iterations)
    if sugg.shape[0] == 0:
        raise TunerError("all tuning trials failed (singular subsamples)")
    hits = np.where(sugg, (dif > 0)[:, None], (dif < 0)[:, None]).sum(axis=0)
    i_opt = int(np.argmax(hits))
    per_alpha = {float(a): int(h) for a, h in zip(eng.alphas, hits)}
    return float(eng.alphas[i_opt]), per_alpha


def decide_pair(d1: Dataset, d2: Dataset, cfg: TunerConfig,
                moment_set: Optional[MomentSet] = None) -> MergeDecision:
    """Full two-part pipeline: tune alpha, rerun, threshold the proxy accuracy.

    paper-literal mode returns merge = (proxy_acc > lambda) exactly as the
    algorithm states; majority-direction mode (default) additionally
    requires the criterion to have actually suggested merging in most
    rerun trials, so that high agreement on "keep separate" is not itself
    read as a merge instruction.
    """
    eng = _PairEngine(d1, d2, cfg, moment_set=moment_set)
    alpha_opt, per_alpha = tune_alpha(d1, d2, cfg, engine=eng)
    i_opt = int(np.argwhere(np.isclose(eng.alphas, alpha_opt))[0][0])

    rng = derive(cfg.seed, "tune-part2")
    sugg, dif, failed = eng.run(rng, cfg.max_iterations)
    if sugg.shape[0] == 0:
        raise TunerError("all rerun trials failed (singular subsamples)")
    chosen = sugg[:, i_opt]
    hits = np.where(chosen, dif > 0, dif < 0)
    proxy_acc = float(hits.mean())
    suggestion_rate = float(chosen.mean())
    direct_sr = float((dif < 0).mean())

    if cfg.mode == PAPER_LITERAL:
        merge = proxy_acc > cfg.lambda_threshold
    else:
        merge = (proxy_acc > cfg.lambda_threshold) and (suggestion_rate > 0.5)
    return MergeDecision(
        merge=bool(merge), proxy_acc=proxy_acc, alpha_opt=alpha_opt,
        per_alpha_acc=per_alpha, suggestion_rate=suggestion_rate,
        direct_success_rate=direct_sr, iterations=int(hits.shape[0]),
        failed_iterations=int(failed), mode=cfg.mode,
    )
