"""Command-line driver.

    ast run <config>                run the configured experiment end to end
    ast replay <trajectory-file>    re-run persisted trajectories and verify
    ast eval <checkpoint> ...       evaluate a policy checkpoint over a grid
    ast report <results-dir>        print the aggregate table for a run
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .crosswalk import CrosswalkSim
from .harness import (
    AggregateReport,
    BinGrid,
    BinResult,
    derive_bin_seeds,
    emit_results,
    evaluate_bin,
    evaluate_policy,
    integrity_errors,
    load_report,
    report_text,
    run_experiment,
    solver_for_policy,
    summarize,
)
from .policy import load_policy
from .records import (
    format_aligned,
    read_records,
    trajectory_record,
    verify_record,
    write_csv,
    write_records,
)
from .simulation import AstProblem


def _problem(config_path: str | None) -> AstProblem:
    if config_path:
        cfg = load_config(config_path)
        return AstProblem(sim=CrosswalkSim(cfg.scenario), model=cfg.model, reward=cfg.reward)
    return AstProblem(sim=CrosswalkSim())


def cmd_run(args) -> int:
    config = load_config(args.config)
    base = Path(config.output_dir)
    base.mkdir(parents=True, exist_ok=True)  # unwritable output fails before any work
    for seed in config.seeds:
        out = base / f"seed{seed}"
        result = run_experiment(config, seed, checkpoint_dir=out / "checkpoints")
        written = emit_results(result, out)
        print(f"seed {seed}: wrote {len(written)} files under {out}")
        print(report_text(result.report), end="")
    return 0


def cmd_replay(args) -> int:
    problem = _problem(args.config)
    records = read_records(args.trajectory_file)
    if not records:
        print(f"no records in {args.trajectory_file}", file=sys.stderr)
        return 1
    failures = 0
    for i, record in enumerate(records):
        ok, trajectory = verify_record(problem, record)
        label = record.get("solver", "?")
        status = "ok" if ok else "MISMATCH"
        print(
            f"{i:4d}  {label:>12}  event={str(trajectory.found_event):5}  "
            f"total={trajectory.total_reward:.6f}  {status}"
        )
        failures += 0 if ok else 1
    print(f"{len(records) - failures}/{len(records)} records verified")
    return 1 if failures else 0


def cmd_eval(args) -> int:
    checkpoint = load_policy(args.checkpoint)
    solver = checkpoint.extra.get("solver") or solver_for_policy(checkpoint.policy)
    problem = _problem(args.config)
    grid = BinGrid(args.grid)
    bin_seeds = derive_bin_seeds(args.seed, grid.bin_count)

    results = []
    for bin_ in grid.bins:
        if args.mode == "point":
            trajectory = evaluate_policy(
                problem, checkpoint.policy, checkpoint.theta, solver, bin_.center, mode="mean"
            )
        else:
            rng = np.random.default_rng(np.random.SeedSequence(bin_seeds[bin_.index]))
            trajectory = evaluate_bin(
                problem,
                checkpoint.policy,
                checkpoint.theta,
                solver,
                bin_,
                samples=args.samples,
                rng=rng,
            )
        results.append(BinResult(solver, bin_.index, bin_seeds[bin_.index], trajectory))

    header = ("bin", "found_event", "total_reward", "steps")
    rows = [(r.bin_index, r.found_event, r.total_reward, r.trajectory.steps) for r in results]
    print(format_aligned(header, rows), end="")
    row_name = f"{solver}_{args.mode}"
    report = AggregateReport((summarize(row_name, results, grid.bin_count),))
    print(report_text(report), end="")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / f"eval_{row_name}.csv", header, rows)
        records = [
            trajectory_record(r.trajectory, solver=row_name, bin=r.bin_index, seed=r.seed)
            for r in results
        ]
        write_records(out / f"trajectories_{row_name}.jsonl", records)
        print(f"wrote evaluation artifacts under {out}")
    return 0


def cmd_report(args) -> int:
    report = load_report(args.results_dir)
    print(report_text(report), end="")
    problems = integrity_errors(report)
    if problems:
        print("integrity problems:", file=sys.stderr)
        for p in problems:
            print(f"  - {p}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ast", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the experiment described by a config file")
    p.add_argument("config", help="plain-text config file path")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("replay", help="re-run persisted trajectories and verify them")
    p.add_argument("trajectory_file", help="line-delimited trajectory record file")
    p.add_argument("--config", default=None, help="config file for the scenario (default: built-in)")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("eval", help="evaluate a policy checkpoint over a bin grid")
    p.add_argument("checkpoint", help="policy checkpoint path")
    p.add_argument("--grid", type=int, default=2, help="bins per dimension (default 2)")
    p.add_argument("--mode", choices=("point", "bin"), default="point")
    p.add_argument("--samples", type=int, default=100, help="rollouts per bin in bin mode")
    p.add_argument("--seed", type=int, default=0, help="evaluation seed")
    p.add_argument("--config", default=None, help="config file for the scenario (default: built-in)")
    p.add_argument("--out", default=None, help="directory to write evaluation artifacts")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="print the aggregate table for a results directory")
    p.add_argument("results_dir")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
