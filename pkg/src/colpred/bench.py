"""Synthetic experiment grid: tuned pipeline vs the direct baseline vs oracle truth.

For every grid cell a fixed pair of generating distributions is drawn per
trial, the oracle settles whether merging truly lowers total error, and two
competitors are scored per trial by their success rate against the
bootstrap-estimated error difference across the decision pipeline's rerun
trials:

* the tuned pipeline scores a rerun trial when its criterion suggestion
  matches the sign of the estimated difference;
* the direct baseline always prefers separate fits (the combined model's
  in-sample loss can never beat the individual fits), so it scores exactly
  the trials whose estimated difference favors separation.

Cell accuracy is the mean per-trial success rate, which is what the
reference experiments report; per-trial merge-flag agreement with the
oracle is also recorded.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, GaussianSpec, sample_synthetic
from .ols import SingularFitError, fit_combined, fit_ols
from .oracle import ground_truth_merge
from .rng import derive_seed
from .tuner import TunerConfig, decide_pair

HELD_OUT_ROWS = 50  # out-of-sample pool alongside each training block


@dataclass(frozen=True)
class ExperimentGrid:
    p_values: tuple = (10, 20)
    d_values: tuple = (0.0, 0.1, 0.3)
    mu_shift: bool = False          # second source's covariate mean at 1_p
    n_train: int | None = None      # None: 50 for p <= 10 else 100
    trials: int = 1000
    seed: int = 0
    oracle_reps: int = 2000

    def resolved_n_train(self, p: int) -> int:
        if self.n_train is not None:
            return self.n_train
        return 50 if p <= 10 else 100


@dataclass(frozen=True)
class CellResult:
    p: int
    d: float
    mu_shift: bool
    truth_merge: bool
    alg_acc: float
    direct_acc: float
    alg_flag_acc: float
    direct_flag_acc: float
    suggestion_rate: float
    trials: int
    failed_trials: int


def direct_comparison(d1: Dataset, d2: Dataset) -> bool:
    """Merge if the combined model's normalized in-sample loss is lower.

    Each dataset's loss is normalized by its own row count. Because the
    individual OLS fit minimizes its own in-sample loss, this baseline
    returns False except on ties.
    """
    f1 = fit_ols(d1)
    f2 = fit_ols(d2)
    comb = fit_combined(d1, d2)
    loss_sep = f1.rss / d1.n + f2.rss / d2.n
    r1 = d1.targets - d1.features @ comb.fit.beta_hat
    r2 = d2.targets - d2.features @ comb.fit.beta_hat
    loss_comb = float(r1 @ r1) / d1.n + float(r2 @ r2) / d2.n
    return loss_comb < loss_sep


def _cell_specs(p: int, d: float, mu_shift: bool, seed: int):
    """The two generating distributions of a cell (identity covariance)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xCE11)))
    beta1 = rng.standard_normal(p)
    beta2 = beta1 + d * np.ones(p)
    mu2 = np.ones(p) if mu_shift else np.zeros(p)
    s1 = GaussianSpec.isotropic(beta1, noise_var=1.0)
    s2 = GaussianSpec.isotropic(beta2, noise_var=1.0, mu=mu2)
    return s1, s2


def _run_trial(args):
    """One (cell, trial): draw the pair, run both deciders."""
    (p, d, mu_shift, n_train, cfg, trial_seed) = args
    s1, s2 = _cell_specs(p, d, mu_shift, trial_seed)
    n = n_train + HELD_OUT_ROWS
    d1 = sample_synthetic(s1, n, derive_seed(trial_seed, "bench-d1"), id="src1")
    d2 = sample_synthetic(s2, n, derive_seed(trial_seed, "bench-d2"), id="src2")
    try:
        dec = decide_pair(d1, d2, cfg.with_seed(derive_seed(trial_seed, "bench-dec")))
        direct_flag = direct_comparison(d1, d2)
    except SingularFitError as exc:
        return dict(ok=False, err=str(exc))
    return dict(ok=True, proxy=dec.proxy_acc, direct_sr=dec.direct_success_rate,
                merge_flag=dec.merge, direct_flag=direct_flag,
                suggestion_rate=dec.suggestion_rate)


def run_grid(grid: ExperimentGrid, cfg: TunerConfig, threads: int = 1,
             progress=None) -> list[CellResult]:
    """Evaluate every (p, d) cell of the grid; deterministic given grid.seed."""
    results = []
    for ci, p in enumerate(grid.p_values):
        for di, d in enumerate(grid.d_values):
            n_train = grid.resolved_n_train(p)
            cell_seed = derive_seed(grid.seed, "bench-cell", ci, di, int(grid.mu_shift))
            s1, s2 = _cell_specs(p, d, grid.mu_shift, derive_seed(cell_seed, "trial", 0))
            truth = ground_truth_merge(s1, s2, n_train, n_train,
                                       mc_reps=grid.oracle_reps,
                                       seed=derive_seed(cell_seed, "oracle"))
            tasks = [(p, d, grid.mu_shift, n_train, cfg,
                      derive_seed(cell_seed, "trial", t)) for t in range(grid.trials)]
            if threads > 1:
                with ProcessPoolExecutor(max_workers=threads) as pool:
                    outs = list(pool.map(_run_trial, tasks, chunksize=4))
            else:
                outs = [_run_trial(t) for t in tasks]
            good = [o for o in outs if o["ok"]]
            failed = len(outs) - len(good)
            if not good:
                raise RuntimeError(f"every trial failed in cell p={p}, d={d}")
            alg_acc = float(np.mean([o["proxy"] for o in good]))
            direct_acc = float(np.mean([o["direct_sr"] for o in good]))
            alg_flag = float(np.mean([o["merge_flag"] == truth.merge for o in good]))
            direct_flag = float(np.mean([o["direct_flag"] == truth.merge for o in good]))
            sugg = float(np.mean([o["suggestion_rate"] for o in good]))
            res = CellResult(p=p, d=d, mu_shift=grid.mu_shift,
                             truth_merge=truth.merge, alg_acc=alg_acc,
                             direct_acc=direct_acc, alg_flag_acc=alg_flag,
                             direct_flag_acc=direct_flag, suggestion_rate=sugg,
                             trials=len(good), failed_trials=failed)
            results.append(res)
            if progress is not None:
                progress(res)
    return results


def write_results_csv(results: list[CellResult], path, header_lines=()):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["p", "d", "mu_shift", "merge_truth", "alg_accuracy",
                    "direct_accuracy", "alg_flag_accuracy", "direct_flag_accuracy",
                    "suggestion_rate", "trials", "failed_trials"])
        for r in results:
            w.writerow([r.p, r.d, int(r.mu_shift), "yes" if r.truth_merge else "no",
                        f"{r.alg_acc:.4f}", f"{r.direct_acc:.4f}",
                        f"{r.alg_flag_acc:.4f}", f"{r.direct_flag_acc:.4f}",
                        f"{r.suggestion_rate:.4f}", r.trials, r.failed_trials])


def format_results_table(results: list[CellResult]) -> str:
    lines = [f"{'p':>4} {'d':>5} {'shift':>5} {'Merge?':>6} "
             f"{'tuned':>7} {'direct':>7} {'sugg':>6}"]
    for r in results:
        lines.append(
            f"{r.p:>4} {r.d:>5.2f} {('yes' if r.mu_shift else 'no'):>5} "
            f"{('Yes' if r.truth_merge else 'No'):>6} "
            f"{100 * r.alg_acc:>6.1f}% {100 * r.direct_acc:>6.1f}% "
            f"{r.suggestion_rate:>6.2f}")
    return "\n".join(lines)
