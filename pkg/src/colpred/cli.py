"""Command-line frontend.

Subcommands: decide-pair, cluster, bench, class-bound, synth. Configuration
precedence is defaults < config file < flags; every run prints the resolved
configuration and seed before any result. Exit codes are the machine
contract: decide-pair exits 0 for merge, 1 for keep-separate, 2 on error;
everything else exits 0 on success, 2 on error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import bench as bench_mod
from . import classify
from .cluster import evaluate_partition, greedy_cluster, singleton_partition
from .data import DataError, GaussianSpec, ingest_csv, load_spec_config, read_kv_file, \
    sample_synthetic, write_csv
from .rng import derive_seed
from .tuner import MAJORITY_DIRECTION, PAPER_LITERAL, TunerConfig, TunerError

_TUNER_FIELDS = {f.name: f.type for f in dataclasses.fields(TunerConfig)}
_INT_FIELDS = {"max_iterations", "subsample_n", "oos_count", "boot_reps_m",
               "moment_boot_reps", "seed", "threads", "trials", "n_train",
               "oracle_reps"}


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="colpred",
                                  description="dataset-merge decisions for linear models")
    top.add_argument("--config", help="flat key=value config file")
    top.add_argument("--seed", type=int, default=None)
    top.add_argument("--threads", type=int, default=None)
    top.add_argument("--out", default=None, help="output path or prefix")
    top.add_argument("--mode", choices=[PAPER_LITERAL, MAJORITY_DIRECTION], default=None)
    top.add_argument("--criterion", choices=["certified", "calibrated"], default=None)
    top.add_argument("--desk", action="store_true",
                     help="coarse laptop-scale preset for tuning and the grid")
    sub = top.add_subparsers(dest="command", required=True)

    dp = sub.add_parser("decide-pair", help="should two CSV datasets be merged?")
    dp.add_argument("csv1")
    dp.add_argument("csv2")
    dp.add_argument("--target", required=True, help="target column name")

    cl = sub.add_parser("cluster", help="greedy clustering of many CSV datasets")
    cl.add_argument("csvs", nargs="+")
    cl.add_argument("--target", required=True)
    cl.add_argument("--shuffle-seed", type=int, default=None,
                    help="permute dataset order before clustering")

    be = sub.add_parser("bench", help="synthetic accuracy grid")
    be.add_argument("--trials", type=int, default=None)
    be.add_argument("--mu-shift", action="store_true")

    cb = sub.add_parser("class-bound", help="classification bound comparison")
    cb.add_argument("--classes", type=int, default=3)
    cb.add_argument("--dim", type=int, default=5)
    cb.add_argument("--n1", type=int, default=1000)
    cb.add_argument("--n2", type=int, default=1000)
    cb.add_argument("--feature-bound", type=float, default=1.0)
    cb.add_argument("--reg-lambda", type=float, default=0.1)
    cb.add_argument("--delta", type=float, default=0.05)
    cb.add_argument("--steps", type=int, default=500)
    cb.add_argument("--distance", type=float, default=0.5,
                    help="scale of the between-source parameter difference")

    sy = sub.add_parser("synth", help="export synthetic CSVs from a spec config")
    sy.add_argument("--spec", required=True, help="GaussianSpec key=value file")
    sy.add_argument("--n", type=int, default=100)
    sy.add_argument("--count", type=int, default=1)
    return top


def _tuner_from(args, file_kv: dict) -> TunerConfig:
    base = TunerConfig.desk() if args.desk else TunerConfig()
    values = dataclasses.asdict(base)
    for key, raw in file_kv.items():
        if key in values:
            values[key] = _coerce(key, raw)
    if args.seed is not None:
        values["seed"] = args.seed
    if args.threads is not None:
        values["threads"] = args.threads
    if args.mode is not None:
        values["mode"] = args.mode
    if args.criterion is not None:
        values["criterion"] = args.criterion
    return TunerConfig(**values)


def _coerce(key: str, raw: str):
    if raw.lower() in ("none", ""):
        return None
    if key in _INT_FIELDS:
        return int(raw)
    if key in ("mode", "criterion"):
        return raw
    return float(raw)


def _print_config(cfg: TunerConfig, extra: dict | None = None):
    print("resolved config:")
    for key, val in sorted(dataclasses.asdict(cfg).items()):
        print(f"  {key} = {val}")
    for key, val in sorted((extra or {}).items()):
        print(f"  {key} = {val}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    file_kv = {}
    if args.config:
        try:
            file_kv = read_kv_file(args.config)
        except DataError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    try:
        cfg = _tuner_from(args, file_kv)
        handler = {
            "decide-pair": _cmd_decide_pair,
            "cluster": _cmd_cluster,
            "bench": _cmd_bench,
            "class-bound": _cmd_class_bound,
            "synth": _cmd_synth,
        }[args.command]
        return handler(args, cfg, file_kv)
    except (DataError, TunerError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _cmd_decide_pair(args, cfg: TunerConfig, file_kv) -> int:
    from .tuner import decide_pair

    d1 = ingest_csv(args.csv1, args.target)
    d2 = ingest_csv(args.csv2, args.target)
    if d1.p != d2.p:
        print(f"error: feature columns differ ({d1.p} vs {d2.p})", file=sys.stderr)
        return 2
    _print_config(cfg, dict(csv1=args.csv1, csv2=args.csv2, target=args.target))
    dec = decide_pair(d1, d2, cfg)
    print(f"alpha_opt = {dec.alpha_opt}")
    print(f"proxy_acc = {dec.proxy_acc:.4f}")
    print(f"suggestion_rate = {dec.suggestion_rate:.4f}")
    print(f"mode = {dec.mode}")
    print(f"merge = {'yes' if dec.merge else 'no'}")
    return 0 if dec.merge else 1


def _cmd_cluster(args, cfg: TunerConfig, file_kv) -> int:
    datasets = [ingest_csv(path, args.target) for path in args.csvs]
    if args.shuffle_seed is not None:
        order = np.random.Generator(np.random.Philox(args.shuffle_seed)) \
            .permutation(len(datasets))
        datasets = [datasets[i] for i in order]
    _print_config(cfg, {"files": len(datasets)})
    part = greedy_cluster(datasets, cfg)
    assign_s, clusters_s = singleton_partition(datasets)
    singles_total, _ = evaluate_partition(datasets, cfg, assignments=assign_s,
                                          clusters=clusters_s)
    out = args.out or "partition.csv"
    import csv as _csv

    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["dataset_id", "cluster_id"])
        for i, d in enumerate(datasets):
            w.writerow([d.id, part.assignments[i]])
    print(f"partition written to {out}")
    for cid, members in enumerate(part.clusters):
        names = ", ".join(datasets[i].id for i in members)
        print(f"cluster {cid}: [{names}] bootstrap OSE = {part.per_cluster_ose[cid]:.6g}")
    print(f"total bootstrap OSE = {part.total_ose:.6g} "
          f"(singleton partition: {singles_total:.6g})")
    print(f"comparisons made = {part.comparisons_made}")
    for i, j, reason in part.skipped_pairs:
        print(f"note: comparison ({i}, {j}) skipped: {reason}")
    return 0


def _cmd_bench(args, cfg: TunerConfig, file_kv) -> int:
    grid_vals = dict(trials=200 if args.desk else 1000,
                     seed=cfg.seed, mu_shift=bool(args.mu_shift))
    for key in ("trials", "n_train", "oracle_reps"):
        if key in file_kv:
            grid_vals[key] = _coerce(key, file_kv[key])
    if args.trials is not None:
        grid_vals["trials"] = args.trials
    grid = bench_mod.ExperimentGrid(**grid_vals)
    _print_config(cfg, dict(trials=grid.trials, mu_shift=grid.mu_shift))
    results = bench_mod.run_grid(grid, cfg, threads=cfg.threads,
                                 progress=lambda r: print(
                                     f"cell p={r.p} d={r.d}: tuned={100 * r.alg_acc:.1f}% "
                                     f"direct={100 * r.direct_acc:.1f}%"))
    print(bench_mod.format_results_table(results))
    out = args.out or "bench_results.csv"
    header = [f"{k} = {v}" for k, v in sorted(dataclasses.asdict(cfg).items())]
    header.append(f"trials = {grid.trials}")
    header.append(f"mu_shift = {grid.mu_shift}")
    bench_mod.write_results_csv(results, out, header_lines=header)
    print(f"results written to {out}")
    return 0


def _cmd_class_bound(args, cfg: TunerConfig, file_kv) -> int:
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    base = rng.standard_normal((args.classes, args.dim))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    delta = rng.standard_normal((args.classes, args.dim))
    delta /= np.linalg.norm(delta, axis=1, keepdims=True)
    b1 = base - 0.5 * args.distance * delta
    b2 = base + 0.5 * args.distance * delta
    _print_config(cfg, dict(classes=args.classes, dim=args.dim, n1=args.n1,
                            n2=args.n2, distance=args.distance))
    phi1 = classify.phi_bound(args.n1, b1, args.feature_bound, args.reg_lambda,
                              args.delta, args.steps)
    phi2 = classify.phi_bound(args.n2, b2, args.feature_bound, args.reg_lambda,
                              args.delta, args.steps)
    psi = classify.psi_bound(args.n1, args.n2, b1, b2, args.feature_bound,
                             args.reg_lambda, args.delta, args.steps)
    merge, lhs, rhs = classify.decide_merge_classification(
        args.n1, args.n2, b1, b2, args.feature_bound, args.reg_lambda,
        args.delta, args.steps)
    print(f"phi_1 = {phi1.total:.6g} (parts {phi1.parts})")
    print(f"phi_2 = {phi2.total:.6g} (parts {phi2.parts})")
    print(f"psi   = {psi.total:.6g} (parts {psi.parts})")
    print(f"decision lhs = {lhs:.6g}, rhs = {rhs:.6g}, merge = {'yes' if merge else 'no'}")
    if args.out:
        import csv as _csv

        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["quantity", "total", "sampling", "complexity", "subgradient"])
            w.writerow(["phi_1", phi1.total, *phi1.parts])
            w.writerow(["phi_2", phi2.total, *phi2.parts])
            w.writerow(["psi", psi.total, *psi.parts])
            w.writerow(["merge", int(merge), lhs, rhs, ""])
        print(f"bound report written to {args.out}")
    return 0


def _cmd_synth(args, cfg: TunerConfig, file_kv) -> int:
    spec = load_spec_config(args.spec)
    _print_config(cfg, dict(spec=args.spec, n=args.n, count=args.count))
    prefix = args.out or "synthetic"
    for i in range(args.count):
        d = sample_synthetic(spec, args.n, derive_seed(cfg.seed, "synth-export", i),
                             id=f"{prefix}_{i}")
        path = f"{prefix}_{i}.csv"
        write_csv(d, path)
        print(f"wrote {path} ({d.n} rows, {d.p} features)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
