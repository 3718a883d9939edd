"""Command-line entry points: simulate, estimate, diagnose, report."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import io
from .data import stack
from .dgp import simulate
from .errors import RctgenError, SpecError
from .estimators import ENGINES, ESTIMATORS, HANDLERS, MethodSpec, estimate
from .harness import (
    PRESETS,
    GridConfig,
    load_grid_config,
    method_key,
    overlap_diagnostics,
    preset_grid,
    run_grid,
    summarize_bias,
)
from .imputation import multi_impute

FMT = io.FLOAT_FMT


def _fmt(x) -> str:
    if x is None:
        return io.NA_TOKEN
    return FMT % x


def _write_replications(path, grid: GridConfig, results) -> None:
    truths = {sc.name: sc.config.ground_truth() for sc in grid.scenarios}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["scenario", "replication", "method", "handler", "engine", "estimate", "flag", "truth"]
        )
        for r in results:
            truth = truths[r.scenario]
            for spec in grid.methods:
                key = method_key(spec)
                est = r.estimates.get(key)
                flag = r.flags.get(key, r.flags.get("*", ""))
                w.writerow(
                    [
                        r.scenario,
                        r.replication,
                        spec.estimator,
                        spec.missing_handler,
                        spec.engine,
                        _fmt(est),
                        flag,
                        _fmt(truth),
                    ]
                )


def _write_bias_summary(path, summaries) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["scenario", "method", "handler", "bias", "mc_se", "ci_low", "ci_high", "n_converged"]
        )
        for s in summaries:
            w.writerow(
                [
                    s.scenario,
                    s.method,
                    s.handler,
                    _fmt(s.bias),
                    _fmt(s.mc_se),
                    _fmt(s.ci_low),
                    _fmt(s.ci_high),
                    s.n_converged,
                ]
            )


def _dump_data(out_dir, grid: GridConfig) -> None:
    root = np.random.SeedSequence(grid.master_seed)
    for scenario, sseq in zip(grid.scenarios, root.spawn(len(grid.scenarios))):
        rep_seeds = sseq.spawn(grid.reps)
        sub = os.path.join(out_dir, "data", scenario.name)
        os.makedirs(sub, exist_ok=True)
        for rep, rseq in enumerate(rep_seeds):
            rng = np.random.default_rng(rseq)
            trial, target, _ = simulate(scenario.config, rng)
            io.dump_trial_csv(os.path.join(sub, f"rep{rep}_trial.csv"), trial)
            io.dump_target_csv(os.path.join(sub, f"rep{rep}_target.csv"), target)


def _dump_imputations(out_dir, grid: GridConfig) -> None:
    """Completed datasets for the MI handlers, first replication per scenario."""
    mi_handlers = sorted(
        {m.missing_handler for m in grid.methods if m.missing_handler.endswith("-mi")}
    )
    if not mi_handlers:
        return
    root = np.random.SeedSequence(grid.master_seed)
    for scenario, sseq in zip(grid.scenarios, root.spawn(len(grid.scenarios))):
        rng = np.random.default_rng(sseq.spawn(grid.reps)[0])
        trial, target, _ = simulate(scenario.config, rng)
        s = stack(trial, target)
        for handler in mi_handlers:
            spec = next(m for m in grid.methods if m.missing_handler == handler)
            strategy = handler[:2].upper()
            imputed = multi_impute(
                s, strategy, spec.m_imputations, spec.chain_iters, rng
            )
            sub = os.path.join(out_dir, "imputations", scenario.name, handler)
            os.makedirs(sub, exist_ok=True)
            for k, completed in enumerate(imputed):
                io.dump_stacked_csv(
                    os.path.join(sub, f"m{k}_trial.csv"),
                    os.path.join(sub, f"m{k}_target.csv"),
                    completed,
                )


def cmd_simulate(args) -> int:
    if (args.config is None) == (args.preset is None):
        raise SpecError("simulate needs exactly one of --config or --preset")
    if args.preset is not None:
        grid = preset_grid(args.preset, args.reps, args.seed or 0)
    else:
        grid = load_grid_config(args.config)
        if args.reps is not None:
            grid = dataclasses.replace(grid, reps=args.reps)
        if args.seed is not None:
            grid = dataclasses.replace(grid, master_seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    results = run_grid(grid)
    _write_replications(os.path.join(args.out, "replications.csv"), grid, results)
    truths = {sc.name: sc.config.ground_truth() for sc in grid.scenarios}
    summaries = []
    for name, truth in truths.items():
        subset = [r for r in results if r.scenario == name]
        summaries.extend(summarize_bias(subset, truth))
    _write_bias_summary(os.path.join(args.out, "bias_summary.csv"), summaries)
    if args.dump_data:
        _dump_data(args.out, grid)
    if args.dump_imputations:
        _dump_imputations(args.out, grid)
    print(f"wrote {len(results)} replications to {args.out}")
    return 0


def _report_to_json(report) -> dict:
    d = dataclasses.asdict(report)
    d["diagnostics"] = {k: v for k, v in report.diagnostics.items()}
    return d


def cmd_estimate(args) -> int:
    trial = io.load_trial_csv(args.trial)
    target = io.load_target_csv(args.target, expect_columns=trial.covariates.column_names)
    s = stack(trial, target)
    engine = args.engine
    if engine is None:
        engine = "forest" if args.handler == "mia" else "parametric"
    spec = MethodSpec(
        estimator=args.method,
        engine=engine,
        missing_handler=args.handler,
        m_imputations=args.m_imputations,
    )
    rng = np.random.default_rng(args.seed)
    report = estimate(s, spec, rng, with_variance=args.bootstrap is not None, bootstrap_b=args.bootstrap or 0)
    print(json.dumps(_report_to_json(report), indent=2, default=float))
    return 0


def cmd_diagnose(args) -> int:
    trial = io.load_trial_csv(args.trial)
    target = io.load_target_csv(args.target, expect_columns=trial.covariates.column_names)
    s = stack(trial, target)
    rep = overlap_diagnostics(s, engine=args.engine, handler=args.handler)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "scores.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["source", "score"])
        for src, score in zip(rep.source, rep.scores):
            w.writerow([int(src), FMT % score])
    with open(os.path.join(args.out, "overlap.json"), "w") as f:
        json.dump(
            {
                "overlap_coefficient": rep.overlap_coefficient,
                "bin_edges": [float(e) for e in rep.bin_edges],
                "trial_hist": [float(v) for v in rep.trial_hist],
                "target_hist": [float(v) for v in rep.target_hist],
            },
            f,
            indent=2,
        )
    print(f"overlap coefficient: {rep.overlap_coefficient:.4f}")
    return 0


def cmd_report(args) -> int:
    path = os.path.join(args.infile, "replications.csv")
    cells: dict[tuple[str, str, str], list[float]] = {}
    truths: dict[str, float] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            truths[row["scenario"]] = float(row["truth"])
            if row["estimate"] == io.NA_TOKEN or row["flag"]:
                continue
            key = (row["scenario"], row["method"], row["handler"])
            cells.setdefault(key, []).append(float(row["estimate"]))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "bias_summary.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["scenario", "method", "handler", "bias", "mc_se", "ci_low", "ci_high", "n_converged"]
        )
        long_rows = []
        for (scenario, method, handler), values in sorted(cells.items()):
            arr = np.asarray(values)
            nsim = len(arr)
            bias = arr.mean() - truths[scenario]
            if nsim >= 2:
                mc_se = float(np.sqrt(np.sum((arr - arr.mean()) ** 2) / (nsim * (nsim - 1))))
                lo, hi = bias - 1.96 * mc_se, bias + 1.96 * mc_se
                w.writerow(
                    [scenario, method, handler, FMT % bias, FMT % mc_se, FMT % lo, FMT % hi, nsim]
                )
            else:
                print(
                    f"warning: single replication for {scenario}/{method}/{handler}; "
                    "no Monte-Carlo SE",
                    file=sys.stderr,
                )
                w.writerow(
                    [scenario, method, handler, FMT % bias, io.NA_TOKEN, io.NA_TOKEN, io.NA_TOKEN, nsim]
                )
            for v in values:
                long_rows.append([scenario, method, handler, FMT % (v - truths[scenario])])
    with open(os.path.join(args.out, "bias_long.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scenario", "method", "handler", "error"])
        w.writerows(long_rows)
    print(f"wrote bias_summary.csv and bias_long.csv to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rctgen",
        description="Generalize a randomized trial's treatment effect to a target "
        "population described by incomplete covariates.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="run a simulation grid")
    ps.add_argument("--config", help="structured config file ([dgp], [missingness], [methods], [run])")
    ps.add_argument("--out", required=True, help="output directory")
    ps.add_argument("--reps", type=int, default=None)
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--preset", choices=PRESETS)
    ps.add_argument("--dump-data", action="store_true")
    ps.add_argument("--dump-imputations", action="store_true")
    ps.set_defaults(func=cmd_simulate)

    pe = sub.add_parser("estimate", help="estimate the target-population ATE from two CSVs")
    pe.add_argument("--trial", required=True)
    pe.add_argument("--target", required=True)
    pe.add_argument("--method", required=True, choices=ESTIMATORS)
    pe.add_argument("--handler", required=True, choices=HANDLERS)
    pe.add_argument("--engine", choices=ENGINES, default=None)
    pe.add_argument("--m-imputations", type=int, default=10)
    pe.add_argument("--bootstrap", type=int, default=None, metavar="B")
    pe.add_argument("--seed", type=int, default=0)
    pe.set_defaults(func=cmd_estimate)

    pd = sub.add_parser("diagnose", help="selection-score overlap diagnostics")
    pd.add_argument("--trial", required=True)
    pd.add_argument("--target", required=True)
    pd.add_argument("--engine", choices=ENGINES, default="parametric")
    pd.add_argument("--handler", choices=HANDLERS, default="none")
    pd.add_argument("--out", required=True)
    pd.set_defaults(func=cmd_diagnose)

    pr = sub.add_parser("report", help="summarize a replications.csv into bias tables")
    pr.add_argument("--in", dest="infile", required=True, metavar="DIR")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (RctgenError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
