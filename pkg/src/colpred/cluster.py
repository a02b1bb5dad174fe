"""Greedy clustering of many datasets by iterated pairwise merge decisions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, split
from .ols import combine_arrays
from .rng import derive_seed
from .tuner import MAJORITY_DIRECTION, MergeDecision, TunerConfig, bootstrap_ose, decide_pair


@dataclass(frozen=True)
class Partition:
    assignments: list           # cluster id per dataset, length K
    clusters: list              # list of lists of dataset indices
    per_cluster_ose: list       # bootstrap OSE summed over each cluster's members
    total_ose: float
    comparisons_made: int
    skipped_pairs: list = field(default_factory=list)   # (i, j, reason)

    def __post_init__(self):
        k = len(self.assignments)
        seen = sorted(i for cl in self.clusters for i in cl)
        if seen != list(range(k)):
            raise ValueError("clusters must partition the dataset indices")
        for cid, members in enumerate(self.clusters):
            for i in members:
                if self.assignments[i] != cid:
                    raise ValueError("assignments inconsistent with clusters")


def _concat(datasets) -> Dataset:
    X = np.vstack([d.features for d in datasets])
    y = np.concatenate([d.targets for d in datasets])
    return Dataset(X, y, id="+".join(d.id for d in datasets))


def greedy_cluster(datasets: list[Dataset], cfg: TunerConfig) -> Partition:
    """Grow clusters one dataset at a time while the pair decision approves.

    Each unclustered dataset seeds a cluster; the best-scoring unclustered
    candidate (by proxy accuracy, ties toward the smaller index) is absorbed
    while its decision clears the accuracy threshold. The growing cluster's
    concatenated rows play the role of the first dataset in each comparison.
    In majority-direction mode (default) a candidate also needs the
    criterion's majority suggestion to actually be "merge"; agreement on
    keeping the pair separate does not absorb. A candidate whose comparison
    fails outright (for example a singular fit) is skipped, not fatal.
    """
    k = len(datasets)
    if k < 1:
        raise ValueError("need at least one dataset")
    p = datasets[0].p
    if any(d.p != p for d in datasets):
        raise ValueError("all datasets must share the feature width")

    assignments = [-1] * k
    clusters: list[list[int]] = []
    skipped: list[tuple] = []
    comparisons = 0

    while True:
        seeds = [i for i in range(k) if assignments[i] == -1]
        if not seeds:
            break
        anchor = seeds[0]
        cid = len(clusters)
        members = [anchor]
        assignments[anchor] = cid
        while True:
            candidates = [j for j in range(k) if assignments[j] == -1]
            if not candidates:
                break
            current = _concat([datasets[i] for i in members]) if len(members) > 1 \
                else datasets[members[0]]
            scored: list[tuple[float, int, MergeDecision]] = []
            for j in candidates:
                pair_seed = derive_seed(cfg.seed, "cluster-pair", comparisons, j)
                try:
                    dec = decide_pair(current, datasets[j], cfg.with_seed(pair_seed))
                except Exception as exc:  # singular candidate, thin data, ...
                    skipped.append((members[0], j, str(exc)))
                    continue
                finally:
                    comparisons += 1
                scored.append((dec.proxy_acc, j, dec))
            if not scored:
                break
            eligible = scored
            if cfg.mode == MAJORITY_DIRECTION:
                eligible = [s for s in scored if s[2].suggestion_rate > 0.5]
                if not eligible:
                    break
            best_acc, best_j, best_dec = max(eligible, key=lambda s: (s[0], -s[1]))
            if best_dec.proxy_acc <= cfg.lambda_threshold:
                break
            assignments[best_j] = cid
            members.append(best_j)
        clusters.append(sorted(members))

    total, per_dataset = evaluate_partition(
        datasets, assignments=assignments, clusters=clusters, cfg=cfg)
    per_cluster = [float(sum(per_dataset[i] for i in cl)) for cl in clusters]
    return Partition(assignments=assignments, clusters=clusters,
                     per_cluster_ose=per_cluster, total_ose=float(total),
                     comparisons_made=comparisons, skipped_pairs=skipped)


def evaluate_partition(datasets: list[Dataset], cfg: TunerConfig,
                       part: Partition | None = None,
                       assignments=None, clusters=None):
    """Total and per-dataset bootstrap OSE of a partition's cluster models.

    Every dataset is split once (seeded); each cluster's model is fitted on
    the union of its members' train sides and scored on each member's
    held-out side by bootstrap.
    """
    if part is not None:
        assignments, clusters = part.assignments, part.clusters
    if assignments is None or clusters is None:
        raise ValueError("pass either part or (assignments, clusters)")
    splits = [split(d, cfg.split_fraction, derive_seed(cfg.seed, "eval-split", i))
              for i, d in enumerate(datasets)]
    per_dataset = np.zeros(len(datasets))
    for members in clusters:
        trains = [splits[i].train for i in members]
        try:
            if len(trains) == 1:
                from .ols import fit_ols
                fit = fit_ols(trains[0])
            else:
                pooled = _concat(trains)
                first = trains[0]
                rest = _concat(trains[1:]) if len(trains) > 2 else trains[1]
                fit = combine_arrays(first.features, first.targets,
                                     rest.features, rest.targets, label=pooled.id).fit
        except Exception:
            # a cluster whose pooled design cannot be fitted scores NaN
            # instead of aborting the whole evaluation
            per_dataset[list(members)] = np.nan
            continue
        for i in members:
            per_dataset[i] = bootstrap_ose(
                fit, splits[i].held_out, cfg.boot_reps_m, cfg.oos_count,
                seed=derive_seed(cfg.seed, "eval-ose", i))
    total = float(np.nansum(per_dataset)) if np.isnan(per_dataset).any() \
        else float(per_dataset.sum())
    return total, per_dataset


def singleton_partition(datasets: list[Dataset]) -> tuple[list, list]:
    k = len(datasets)
    return list(range(k)), [[i] for i in range(k)]
