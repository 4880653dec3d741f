"""Experiment driver: bin grid, solver protocol, reports, artifact files.

The evaluation protocol discretizes the initial-condition space into
b^5 uniform bins. Per-bin solvers (mcts, drdrl, mlpdrl) each attack
every bin's center point. The generalized solver (grdrl) trains once
over the whole space and is then scored two ways: point evaluation
(deterministic mean rollout from each center) and bin evaluation
(best of n seeded stochastic rollouts from points sampled in the bin).

Seeding protocol: each bin gets one seed derived from the experiment
seed and the bin index. Every solver uses that same seed for whatever
randomness it needs in that bin, so solvers are compared on identical
footing. Bins are independent jobs over a thread pool; one solver
failing in one bin marks that cell failed without aborting the rest.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .crosswalk import IC_FIELDS, IC_HIGH, IC_LOW, CrosswalkSim, InitialCondition
from .mcts import search
from .records import (
    format_aligned,
    read_csv,
    trajectory_record,
    write_aligned,
    write_csv,
    write_records,
)
from .simulation import AstProblem, Trajectory
from .training import SOLVERS, expected_input_dim, run_episode, train

PER_BIN_SOLVERS = ("mcts", "drdrl", "mlpdrl")


# ---------------------------------------------------------------------------
# Bin grid.


@dataclass(frozen=True)
class Bin:
    """One cell of the initial-condition grid."""

    index: int
    low: np.ndarray
    high: np.ndarray

    @property
    def center(self) -> InitialCondition:
        return InitialCondition.from_vector((self.low + self.high) / 2.0)

    def sample(self, rng: np.random.Generator) -> InitialCondition:
        return InitialCondition.from_vector(rng.uniform(self.low, self.high))


class BinGrid:
    """Uniform discretization of the initial-condition support, b^5 bins."""

    def __init__(self, bins_per_dim: int = 2):
        if bins_per_dim < 1:
            raise ValueError("bins_per_dim must be at least 1")
        self.bins_per_dim = int(bins_per_dim)
        b = self.bins_per_dim
        edges = [np.linspace(lo, hi, b + 1) for lo, hi in zip(IC_LOW, IC_HIGH)]
        bins = []
        for index, multi in enumerate(np.ndindex(*(b,) * len(IC_FIELDS))):
            low = np.array([edges[d][i] for d, i in enumerate(multi)])
            high = np.array([edges[d][i + 1] for d, i in enumerate(multi)])
            bins.append(Bin(index, low, high))
        self.bins: tuple[Bin, ...] = tuple(bins)

    @property
    def bin_count(self) -> int:
        return self.bins_per_dim ** len(IC_FIELDS)

    def centers(self) -> list[InitialCondition]:
        return [b.center for b in self.bins]


def derive_bin_seeds(seed: int, count: int) -> tuple[int, ...]:
    """One deterministic seed per bin, shared by every solver (parity)."""
    return tuple(
        int(np.random.SeedSequence((int(seed), i)).generate_state(1)[0]) for i in range(count)
    )


# ---------------------------------------------------------------------------
# Policy evaluation.


def _rank(trajectory: Trajectory) -> tuple[bool, float]:
    # Any event-bearing trajectory outranks every non-event one.
    return (bool(trajectory.found_event), trajectory.total_reward)


def evaluate_policy(
    problem: AstProblem,
    policy,
    theta: np.ndarray,
    solver: str,
    ic: InitialCondition,
    *,
    mode: str = "mean",
    samples: int = 100,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Score a trained policy from one start state.

    "mean" runs a single deterministic rollout at the policy mean.
    "sample" runs `samples` stochastic rollouts and keeps the best,
    ranking collision trajectories above all non-collision ones.
    """
    if mode == "mean":
        return run_episode(problem, policy, theta, solver, ic, None).to_trajectory(problem.model)
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}; expected 'mean' or 'sample'")
    if rng is None:
        raise ValueError("sample mode requires an rng")
    if samples < 1:
        raise ValueError("samples must be at least 1")
    best: Trajectory | None = None
    for _ in range(samples):
        candidate = run_episode(problem, policy, theta, solver, ic, rng).to_trajectory(problem.model)
        if best is None or _rank(candidate) > _rank(best):
            best = candidate
    return best


def evaluate_bin(
    problem: AstProblem,
    policy,
    theta: np.ndarray,
    solver: str,
    bin_: Bin,
    *,
    samples: int = 100,
    rng: np.random.Generator,
) -> Trajectory:
    """Best of `samples` stochastic rollouts from points sampled in the bin."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    best: Trajectory | None = None
    for _ in range(samples):
        ic = bin_.sample(rng)
        candidate = run_episode(problem, policy, theta, solver, ic, rng).to_trajectory(problem.model)
        if best is None or _rank(candidate) > _rank(best):
            best = candidate
    return best


def solver_for_policy(policy) -> str:
    """Infer which solver a checkpointed policy belongs to."""
    for solver in SOLVERS:
        if expected_input_dim(solver) != policy.input_dim:
            continue
        if (policy.kind == "mlp") == (solver == "mlpdrl"):
            return solver
    raise ValueError(
        f"no solver matches a {policy.kind} policy with input dim {policy.input_dim}"
    )


# ---------------------------------------------------------------------------
# Report structures.


@dataclass(frozen=True)
class BinResult:
    """Outcome of one solver on one bin."""

    solver: str
    bin_index: int
    seed: int
    trajectory: Trajectory | None
    failed: bool = False
    error: str = ""

    @property
    def found_event(self) -> bool:
        return self.trajectory is not None and bool(self.trajectory.found_event)

    @property
    def total_reward(self) -> float:
        return float("nan") if self.trajectory is None else self.trajectory.total_reward


@dataclass(frozen=True)
class SolverSummary:
    solver: str
    bin_count: int
    collisions_found: int
    collision_percentage: float
    average_collision_reward: float
    max_collision_reward: float


@dataclass(frozen=True)
class AggregateReport:
    summaries: tuple[SolverSummary, ...]

    def summary(self, solver: str) -> SolverSummary:
        for s in self.summaries:
            if s.solver == solver:
                return s
        raise KeyError(solver)


def summarize(solver: str, results, bin_count: int) -> SolverSummary:
    """Collision statistics over bins; averages cover collision bins only."""
    rewards = [r.total_reward for r in results if r.found_event]
    n = len(rewards)
    return SolverSummary(
        solver=solver,
        bin_count=bin_count,
        collisions_found=n,
        collision_percentage=100.0 * n / bin_count,
        average_collision_reward=float(np.mean(rewards)) if n else float("nan"),
        max_collision_reward=float(np.max(rewards)) if n else float("nan"),
    )


def integrity_errors(report: AggregateReport) -> list[str]:
    """Violations of report invariants, empty when clean."""
    problems = []
    for s in report.summaries:
        if s.collisions_found > 0 and not (
            s.max_collision_reward >= s.average_collision_reward
        ):
            problems.append(
                f"{s.solver}: max collision reward {s.max_collision_reward} "
                f"< average {s.average_collision_reward}"
            )
        expected = 100.0 * s.collisions_found / s.bin_count
        if abs(s.collision_percentage - expected) > 1e-9:
            problems.append(f"{s.solver}: collision percentage inconsistent with counts")
    return problems


@dataclass
class ExperimentResult:
    """Everything one seeded experiment produced, pre-serialization."""

    seed: int
    grid: BinGrid
    config: ExperimentConfig
    bin_results: dict[str, tuple[BinResult, ...]] = field(default_factory=dict)
    traces: dict[str, tuple] = field(default_factory=dict)
    histories: dict[str, list[dict]] = field(default_factory=dict)

    @property
    def report(self) -> AggregateReport:
        summaries = tuple(
            summarize(name, results, self.grid.bin_count)
            for name, results in self.bin_results.items()
        )
        return AggregateReport(summaries)


# ---------------------------------------------------------------------------
# Best-so-far trace bookkeeping for per-bin solvers.


def sequential_view(traces) -> list[tuple[int, float]]:
    """Concatenate per-bin traces in bin order under a running maximum.

    Each row charges one solver iteration, modeling bins attacked one
    after another. Empty traces (failed bins) are skipped.
    """
    out: list[tuple[int, float]] = []
    best = -np.inf
    step = 0
    for trace in traces:
        for value in trace or ():
            step += 1
            best = max(best, float(value))
            out.append((step, best))
    return out


def batch_view(traces) -> list[tuple[int, float]]:
    """Per-iteration maximum across bins under a running maximum.

    Models all bins attacked in parallel: each row charges as many
    iterations as there are participating bins.
    """
    live = [t for t in traces if t]
    if not live:
        return []
    n = max(len(t) for t in live)
    cost_per_row = len(live)
    out: list[tuple[int, float]] = []
    best = -np.inf
    for i in range(n):
        values = [t[i] for t in live if len(t) > i]
        best = max(best, float(max(values)))
        out.append(((i + 1) * cost_per_row, best))
    return out


# ---------------------------------------------------------------------------
# The experiment itself.


def _mcts_bin_job(problem, mcts_config, bin_, bin_seed):
    rng = np.random.default_rng(np.random.SeedSequence(bin_seed))
    out = search(problem, bin_.center, mcts_config, rng)
    return out.best, out.trace, None


def _train_bin_job(problem, solver, train_config, bin_, bin_seed):
    config = replace(train_config, seed=bin_seed)
    result = train(problem, solver, config, ic=bin_.center)
    trace = tuple(row["best_so_far"] for row in result.history)
    return result.best, trace, result.history


def _grdrl_point_job(problem, policy, theta, bin_):
    return evaluate_policy(problem, policy, theta, "grdrl", bin_.center, mode="mean"), None, None


def _grdrl_bin_job(problem, policy, theta, bin_, samples, bin_seed):
    rng = np.random.default_rng(np.random.SeedSequence(bin_seed))
    traj = evaluate_bin(problem, policy, theta, "grdrl", bin_, samples=samples, rng=rng)
    return traj, None, None


def _pool_size(config: ExperimentConfig) -> int:
    if config.workers > 0:
        return config.workers
    return max(1, int(os.environ.get("AST_WORKERS", "1")))


def run_experiment(
    config: ExperimentConfig,
    seed: int,
    *,
    checkpoint_dir=None,
) -> ExperimentResult:
    """Run every requested solver over the bin grid for one seed.

    grdrl trains once on the full space (checkpointed when a directory
    is given), then is evaluated per bin in both point and bin modes.
    Per-bin solver failures mark their cells failed; a grdrl training
    failure marks every grdrl cell failed. Other solvers always proceed.
    """
    problem = AstProblem(
        sim=CrosswalkSim(config.scenario), model=config.model, reward=config.reward
    )
    grid = BinGrid(config.bins_per_dim)
    bin_seeds = derive_bin_seeds(seed, grid.bin_count)
    result = ExperimentResult(seed=seed, grid=grid, config=config)

    jobs = []  # (report row, bin, callable)
    for solver in config.solvers:
        if solver == "grdrl":
            continue
        for bin_ in grid.bins:
            bin_seed = bin_seeds[bin_.index]
            if solver == "mcts":
                jobs.append(
                    (solver, bin_, lambda b=bin_, s=bin_seed: _mcts_bin_job(problem, config.mcts, b, s))
                )
            else:
                tc = config.train_config(solver)
                jobs.append(
                    (
                        solver,
                        bin_,
                        lambda sv=solver, b=bin_, s=bin_seed, t=tc: _train_bin_job(problem, sv, t, b, s),
                    )
                )

    if "grdrl" in config.solvers:
        grdrl_config = replace(config.grdrl, seed=seed)
        try:
            trained = train(problem, "grdrl", grdrl_config, checkpoint_dir=checkpoint_dir)
        except Exception as exc:  # noqa: BLE001 - solver failure must not abort the run
            trained = None
            grdrl_error = f"{type(exc).__name__}: {exc}"
        if trained is not None:
            result.traces["grdrl"] = tuple(row["best_so_far"] for row in trained.history)
            result.histories["grdrl"] = trained.history
            for bin_ in grid.bins:
                bin_seed = bin_seeds[bin_.index]
                jobs.append(
                    (
                        "grdrl_point",
                        bin_,
                        lambda b=bin_: _grdrl_point_job(problem, trained.policy, trained.theta, b),
                    )
                )
                jobs.append(
                    (
                        "grdrl_bin",
                        bin_,
                        lambda b=bin_, s=bin_seed: _grdrl_bin_job(
                            problem, trained.policy, trained.theta, b, config.eval_samples, s
                        ),
                    )
                )
        else:
            for row in ("grdrl_point", "grdrl_bin"):
                result.bin_results[row] = tuple(
                    BinResult(row, b.index, bin_seeds[b.index], None, True, grdrl_error)
                    for b in grid.bins
                )

    # Independent jobs over a pool; assembly is indexed, so order is fixed.
    outcomes: dict[tuple[str, int], tuple] = {}
    with ThreadPoolExecutor(max_workers=_pool_size(config)) as pool:
        futures = {pool.submit(fn): (row, bin_.index) for row, bin_, fn in jobs}
        for future, key in futures.items():
            try:
                outcomes[key] = (future.result(), None)
            except Exception as exc:  # noqa: BLE001
                outcomes[key] = (None, f"{type(exc).__name__}: {exc}")

    rows: list[str] = []
    for solver in config.solvers:
        rows.extend(("grdrl_point", "grdrl_bin") if solver == "grdrl" else (solver,))
    for row in rows:
        if row in result.bin_results:  # grdrl training failure already recorded
            continue
        per_bin: list[BinResult] = []
        traces: list[tuple] = []
        history: list[dict] = []
        for bin_ in grid.bins:
            bin_seed = bin_seeds[bin_.index]
            payload, error = outcomes.get((row, bin_.index), (None, "job missing"))
            if payload is None:
                per_bin.append(BinResult(row, bin_.index, bin_seed, None, True, error))
                traces.append(())
                continue
            trajectory, trace, hist = payload
            per_bin.append(BinResult(row, bin_.index, bin_seed, trajectory))
            traces.append(tuple(trace) if trace else ())
            if hist:
                history.extend({"bin": bin_.index, **h} for h in hist)
        result.bin_results[row] = tuple(per_bin)
        if row in PER_BIN_SOLVERS:
            result.traces[row] = tuple(traces)
            if history:
                result.histories[row] = history
    return result


# ---------------------------------------------------------------------------
# Artifact files.

AGGREGATE_HEADER = (
    "solver",
    "bin_count",
    "collisions_found",
    "collision_percentage",
    "average_collision_reward",
    "max_collision_reward",
)

BIN_TABLE_HEADER = (
    "bin",
    "seed",
    *IC_FIELDS,
    "found_event",
    "total_reward",
    "steps",
    "failed",
    "error",
)


def aggregate_rows(report: AggregateReport) -> list[tuple]:
    return [
        (
            s.solver,
            s.bin_count,
            s.collisions_found,
            s.collision_percentage,
            s.average_collision_reward,
            s.max_collision_reward,
        )
        for s in report.summaries
    ]


def emit_results(result: ExperimentResult, out_dir) -> list[Path]:
    """Write every artifact for one experiment; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(path: Path):
        written.append(path)
        return path

    report = result.report
    write_csv(emit(out / "aggregate.csv"), AGGREGATE_HEADER, aggregate_rows(report))
    write_aligned(emit(out / "aggregate.txt"), AGGREGATE_HEADER, aggregate_rows(report))

    for row_name, bin_results in result.bin_results.items():
        rows = []
        records = []
        for r in bin_results:
            center = result.grid.bins[r.bin_index].center
            steps = 0 if r.trajectory is None else r.trajectory.steps
            rows.append(
                (
                    r.bin_index,
                    r.seed,
                    *center.to_vector(),
                    r.found_event,
                    r.total_reward,
                    steps,
                    r.failed,
                    r.error,
                )
            )
            if r.trajectory is not None:
                records.append(
                    trajectory_record(
                        r.trajectory, solver=row_name, bin=r.bin_index, seed=r.seed
                    )
                )
        write_csv(emit(out / f"bins_{row_name}.csv"), BIN_TABLE_HEADER, rows)
        write_records(emit(out / f"trajectories_{row_name}.jsonl"), records)

    for solver in PER_BIN_SOLVERS:
        traces = result.traces.get(solver)
        if traces is None:
            continue
        rows = [
            (bin_index, i + 1, value)
            for bin_index, trace in enumerate(traces)
            for i, value in enumerate(trace)
        ]
        write_csv(emit(out / f"traces_{solver}.csv"), ("bin", "iteration", "best_so_far"), rows)

    if "drdrl" in result.traces:
        seq = sequential_view(result.traces["drdrl"])
        bat = batch_view(result.traces["drdrl"])
        write_csv(emit(out / "trace_drdrl_sequential.csv"), ("iterations", "cumulative_best"), seq)
        write_csv(emit(out / "trace_drdrl_batch.csv"), ("iterations", "cumulative_best"), bat)

    if "grdrl" in result.traces:
        rows = [(i + 1, v) for i, v in enumerate(result.traces["grdrl"])]
        write_csv(emit(out / "trace_grdrl.csv"), ("iteration", "best_so_far"), rows)

    for name, history in result.histories.items():
        if not history:
            continue
        header = tuple(history[0].keys())
        rows = [tuple(row.get(k, "") for k in header) for row in history]
        write_csv(emit(out / f"train_log_{name}.csv"), header, rows)

    return written


def load_report(results_dir) -> AggregateReport:
    """Rebuild the aggregate report from a results directory's bin tables."""
    paths = sorted(Path(results_dir).glob("bins_*.csv"))
    if not paths:
        raise FileNotFoundError(f"no bins_*.csv files under {results_dir}")
    summaries = []
    for path in paths:
        solver = path.stem[len("bins_") :]
        header, rows = read_csv(path)
        col = {name: i for i, name in enumerate(header)}
        rewards = [
            float(row[col["total_reward"]]) for row in rows if row[col["found_event"]] == "True"
        ]
        n = len(rewards)
        summaries.append(
            SolverSummary(
                solver=solver,
                bin_count=len(rows),
                collisions_found=n,
                collision_percentage=100.0 * n / len(rows) if rows else 0.0,
                average_collision_reward=float(np.mean(rewards)) if n else float("nan"),
                max_collision_reward=float(np.max(rewards)) if n else float("nan"),
            )
        )
    return AggregateReport(tuple(summaries))


def report_text(report: AggregateReport) -> str:
    return format_aligned(AGGREGATE_HEADER, aggregate_rows(report))
