"""Plain-text experiment configuration.

INI-style sections map onto the library's config dataclasses:

    [experiment]    solvers, seeds, output_dir, eval_samples, workers
    [scenario]      CrosswalkSim geometry, timing, and driver parameters
    [reward]        event penalty and miss-distance scale
    [action_model]  disturbance mean and covariance diagonal
    [grid]          bins_per_dim for the evaluation grid
    [mcts]          tree-search budget and widening constants
    [drdrl] [grdrl] [mlpdrl]   per-solver training parameters

Every key is optional; omitted keys keep the library defaults. Unknown
sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

import numpy as np

from .actions import ACTION_DIM, ActionModel
from .crosswalk import ScenarioConfig
from .mcts import MctsConfig
from .reward import RewardSpec
from .training import TrainConfig

EVAL_SOLVERS = ("mcts", "drdrl", "mlpdrl", "grdrl")

_SECTIONS = (
    "experiment",
    "scenario",
    "reward",
    "action_model",
    "grid",
    "mcts",
    "drdrl",
    "grdrl",
    "mlpdrl",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything `run_experiment` needs, resolved to concrete values."""

    solvers: tuple[str, ...] = EVAL_SOLVERS
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "results"
    eval_samples: int = 100
    workers: int = 0
    bins_per_dim: int = 2
    scenario: ScenarioConfig = ScenarioConfig()
    reward: RewardSpec = RewardSpec()
    model: ActionModel = ActionModel()
    mcts: MctsConfig = MctsConfig()
    drdrl: TrainConfig = TrainConfig()
    grdrl: TrainConfig = TrainConfig()
    mlpdrl: TrainConfig = TrainConfig()

    def __post_init__(self):
        if not self.solvers:
            raise ValueError("at least one solver must be requested")
        unknown = [s for s in self.solvers if s not in EVAL_SOLVERS]
        if unknown:
            raise ValueError(f"unknown solvers {unknown}; expected among {EVAL_SOLVERS}")
        if len(set(self.solvers)) != len(self.solvers):
            raise ValueError("duplicate solver names")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if any(int(s) < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        if self.eval_samples < 1:
            raise ValueError("eval_samples must be at least 1")
        if self.workers < 0:
            raise ValueError("workers must be non-negative")
        if self.bins_per_dim < 1:
            raise ValueError("bins_per_dim must be at least 1")

    def train_config(self, solver: str) -> TrainConfig:
        if solver not in ("drdrl", "grdrl", "mlpdrl"):
            raise ValueError(f"no training section for {solver!r}")
        return getattr(self, solver)


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{key}: expected a boolean, got {raw!r}")


def _coerce(default, raw: str, key: str):
    if isinstance(default, bool):
        return _parse_bool(raw, key)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, str):
        return raw.strip()
    raise ValueError(f"{key}: unsupported option type {type(default).__name__}")


def _override(instance, parser: configparser.ConfigParser, section: str):
    """Return a copy of a config dataclass with the section's keys applied."""
    if not parser.has_section(section):
        return instance
    valid = {f.name for f in dataclasses.fields(instance)}
    updates = {}
    for key, raw in parser[section].items():
        if key not in valid:
            raise ValueError(f"[{section}] unknown key {key!r}")
        updates[key] = _coerce(getattr(instance, key), raw, f"[{section}] {key}")
    return dataclasses.replace(instance, **updates) if updates else instance


def _vector(raw: str, n: int, key: str) -> np.ndarray:
    values = [float(tok) for tok in raw.split()]
    if len(values) != n:
        raise ValueError(f"{key}: expected {n} numbers, got {len(values)}")
    return np.array(values)


def _parse_action_model(parser: configparser.ConfigParser) -> ActionModel:
    if not parser.has_section("action_model"):
        return ActionModel()
    kwargs = {}
    for key, raw in parser["action_model"].items():
        if key in ("mean", "covariance_diag"):
            kwargs[key] = _vector(raw, ACTION_DIM, f"[action_model] {key}")
        else:
            raise ValueError(f"[action_model] unknown key {key!r}")
    return ActionModel(**kwargs)


def parse_config(text: str) -> ExperimentConfig:
    """Parse configuration text; see `load_config` for the file form."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.read_string(text)
    unknown = set(parser.sections()) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections {sorted(unknown)}; expected among {_SECTIONS}")

    solvers = ExperimentConfig.solvers
    seeds = ExperimentConfig.seeds
    output_dir = ExperimentConfig.output_dir
    eval_samples = ExperimentConfig.eval_samples
    workers = ExperimentConfig.workers
    if parser.has_section("experiment"):
        for key, raw in parser["experiment"].items():
            if key == "solvers":
                solvers = tuple(raw.split())
            elif key == "seeds":
                seeds = tuple(int(tok) for tok in raw.split())
            elif key == "output_dir":
                output_dir = raw.strip()
            elif key == "eval_samples":
                eval_samples = int(raw)
            elif key == "workers":
                workers = int(raw)
            else:
                raise ValueError(f"[experiment] unknown key {key!r}")

    bins_per_dim = ExperimentConfig.bins_per_dim
    if parser.has_section("grid"):
        for key, raw in parser["grid"].items():
            if key == "bins_per_dim":
                bins_per_dim = int(raw)
            else:
                raise ValueError(f"[grid] unknown key {key!r}")

    return ExperimentConfig(
        solvers=solvers,
        seeds=seeds,
        output_dir=output_dir,
        eval_samples=eval_samples,
        workers=workers,
        bins_per_dim=bins_per_dim,
        scenario=_override(ScenarioConfig(), parser, "scenario"),
        reward=_override(RewardSpec(), parser, "reward"),
        model=_parse_action_model(parser),
        mcts=_override(MctsConfig(), parser, "mcts"),
        drdrl=_override(TrainConfig(), parser, "drdrl"),
        grdrl=_override(TrainConfig(), parser, "grdrl"),
        mlpdrl=_override(TrainConfig(), parser, "mlpdrl"),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def default_config_text() -> str:
    """A commented template covering every section."""
    return """\
# Adaptive stress testing experiment configuration.
# Omitted keys keep library defaults.

[experiment]
solvers = mcts drdrl mlpdrl grdrl
seeds = 0
output_dir = results
eval_samples = 100   # rollouts per bin in bin evaluation
workers = 0          # 0: use AST_WORKERS env var, else 1

[grid]
bins_per_dim = 2     # 2 -> 32 bins, 3 -> 243 bins

[scenario]
dt = 0.1
horizon = 50

[reward]
event_penalty = 1e5
miss_scale = 1e4

[action_model]
mean = 0 0 0 0 0 0
covariance_diag = 1 1 0.01 0.01 0.01 0.01

[mcts]
iterations = 2000
exploration = 100
k_action = 1.0
alpha_action = 0.5

[drdrl]
iterations = 100
batch_steps = 10000
hidden_dim = 64

[mlpdrl]
iterations = 100
batch_steps = 10000
hidden_dim = 64

[grdrl]
iterations = 100
batch_steps = 10000
hidden_dim = 64
"""
