"""Policy-gradient training for disturbance policies.

Each iteration collects a fixed budget of simulation steps with the current
stochastic policy, fits a linear value baseline, computes generalized
advantage estimates, and applies one trust-region natural-gradient update:
conjugate gradient on exact Fisher-vector products gives the step direction,
scaled to the KL budget and backtracked until the surrogate objective
improves within the KL bound. Rejected updates leave parameters untouched.

Three solver input modes share the machinery, differing in what the policy
sees each step:

- "drdrl":  recurrent policy, fixed start state, input = previous action
- "grdrl":  recurrent policy, start state sampled each episode, input =
            previous action plus the normalized start condition
- "mlpdrl": feedforward policy, input = normalized simulator state features

Policies act in model sigma units; actions are rescaled through the
disturbance model before reaching the simulator.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .actions import ACTION_DIM
from .crosswalk import STATE_SCALES, InitialCondition
from .policy import (
    LstmPolicy,
    MlpPolicy,
    fisher_vector_product,
    gaussian_kl,
    gaussian_log_prob,
    load_policy,
    save_policy,
)
from .simulation import AstProblem, Trajectory

SOLVERS = ("drdrl", "grdrl", "mlpdrl")


@dataclass(frozen=True)
class TrainConfig:
    """Budget and update hyperparameters.

    batch_steps is a per-iteration simulation-step budget: episodes are
    collected until the budget is met, the final episode included whole.
    """

    iterations: int = 100
    batch_steps: int = 10_000
    hidden_dim: int = 64
    gamma: float = 0.99
    lam: float = 0.97
    kl_step: float = 0.1
    cg_iters: int = 10
    cg_damping: float = 1e-5
    backtrack_ratio: float = 0.8
    backtrack_steps: int = 15
    seed: int = 0
    checkpoint_every: int = 10
    workers: int = 0  # 0: take AST_WORKERS from the environment, else 1

    def __post_init__(self):
        if self.iterations < 1 or self.batch_steps < 1:
            raise ValueError("iterations and batch_steps must be positive")
        if not 0 < self.backtrack_ratio < 1:
            raise ValueError("backtrack_ratio must be in (0, 1)")
        if self.kl_step <= 0:
            raise ValueError("kl_step must be positive")
        if not (0 <= self.gamma <= 1 and 0 <= self.lam <= 1):
            raise ValueError("gamma and lam must be in [0, 1]")


def expected_input_dim(solver: str, sim=None) -> int:
    if solver == "drdrl":
        return ACTION_DIM
    if solver == "grdrl":
        return ACTION_DIM + 5
    if solver == "mlpdrl":
        return len(STATE_SCALES)
    raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")


def make_solver_policy(solver: str, hidden_dim: int = 64, sim=None):
    """Construct the policy architecture a solver requires."""
    dim = expected_input_dim(solver, sim)
    if solver == "mlpdrl":
        return MlpPolicy(dim, hidden_dim, ACTION_DIM)
    return LstmPolicy(dim, hidden_dim, ACTION_DIM)


@dataclass(frozen=True)
class Episode:
    """One policy rollout, in both policy units and environment records."""

    ic: InitialCondition
    inputs: np.ndarray  # (T, input_dim) what the policy saw
    units: np.ndarray  # (T, ACTION_DIM) actions in sigma units
    rewards: np.ndarray  # (T,)
    states: tuple
    found_event: bool
    miss_distance: float

    @property
    def steps(self) -> int:
        return len(self.units)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    def to_trajectory(self, model) -> Trajectory:
        return Trajectory(
            ic=self.ic,
            actions=model.mean + model.std * self.units,
            rewards=self.rewards,
            states=self.states,
            found_event=self.found_event,
            miss_distance=self.miss_distance,
        )


def _policy_input(solver: str, problem: AstProblem, ic_norm, prev_u, state) -> np.ndarray:
    if solver == "drdrl":
        return prev_u
    if solver == "grdrl":
        return np.concatenate([prev_u, ic_norm])
    return problem.sim.expose_state(state) / STATE_SCALES


def run_episode(
    problem: AstProblem,
    policy,
    theta: np.ndarray,
    solver: str,
    ic: InitialCondition,
    rng: np.random.Generator | None,
) -> Episode:
    """Roll the policy once from `ic`; `rng=None` means act at the mean."""
    sim = problem.sim
    model = problem.model
    log_std = policy.log_std(theta)
    sigma = np.exp(log_std)
    ic_norm = ic.normalized() if solver == "grdrl" else None
    state = sim.initialize(ic)
    pol_state = policy.initial_state()
    prev_u = np.zeros(ACTION_DIM)

    inputs, units, rewards, states = [], [], [], [state]
    found = False
    miss = np.inf
    while not sim.is_terminal(state):
        x = _policy_input(solver, problem, ic_norm, prev_u, state)
        mean, pol_state = policy.step(theta, x, pol_state)
        u = mean if rng is None else mean + sigma * rng.standard_normal(ACTION_DIM)
        env_action = model.mean + model.std * u
        state, result = sim.step(state, env_action)
        inputs.append(x)
        units.append(u)
        rewards.append(problem.step_reward(env_action, result))
        states.append(state)
        found = result.collision
        miss = result.miss_distance
        prev_u = u
    n = len(units)
    return Episode(
        ic=ic,
        inputs=np.array(inputs).reshape(n, -1),
        units=np.array(units).reshape(n, -1),
        rewards=np.array(rewards),
        states=tuple(states),
        found_event=bool(found),
        miss_distance=float(miss),
    )


@dataclass(frozen=True)
class Batch:
    """Episodes padded onto a common time axis."""

    inputs: np.ndarray  # (B, T, input_dim)
    units: np.ndarray  # (B, T, ACTION_DIM)
    rewards: np.ndarray  # (B, T), zero past each length
    lengths: np.ndarray  # (B,)
    mask: np.ndarray  # (B, T) floats
    episodes: tuple[Episode, ...]

    @property
    def total_steps(self) -> int:
        return int(self.lengths.sum())

    @property
    def collisions(self) -> int:
        return sum(e.found_event for e in self.episodes)


def _pack(episodes: list[Episode]) -> Batch:
    B = len(episodes)
    T = max(e.steps for e in episodes)
    d = episodes[0].inputs.shape[1]
    inputs = np.zeros((B, T, d))
    units = np.zeros((B, T, ACTION_DIM))
    rewards = np.zeros((B, T))
    lengths = np.zeros(B, dtype=int)
    for i, e in enumerate(episodes):
        n = e.steps
        inputs[i, :n] = e.inputs
        units[i, :n] = e.units
        rewards[i, :n] = e.rewards
        lengths[i] = n
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(float)
    return Batch(inputs, units, rewards, lengths, mask, tuple(episodes))


def _worker_count(config: TrainConfig) -> int:
    if config.workers > 0:
        return config.workers
    return max(1, int(os.environ.get("AST_WORKERS", "1")))


def collect_batch(
    problem: AstProblem,
    policy,
    theta: np.ndarray,
    solver: str,
    config: TrainConfig,
    iteration: int,
    ic: InitialCondition | None,
) -> Batch:
    """Gather at least `batch_steps` simulation steps of on-policy episodes.

    Episode RNG streams derive from (seed, iteration) and the episode index,
    so batches are reproducible and independent of the worker count.
    """
    root = np.random.SeedSequence((config.seed, iteration))
    episodes: list[Episode] = []
    steps = 0
    workers = _worker_count(config)

    def run_one(child):
        rng = np.random.default_rng(child)
        start = problem.sim.sample_initial_condition(rng) if solver == "grdrl" else ic
        return run_episode(problem, policy, theta, solver, start, rng)

    if solver != "grdrl" and ic is None:
        raise ValueError(f"solver {solver!r} trains from a fixed initial condition; pass ic")

    if workers == 1:
        while steps < config.batch_steps:
            ep = run_one(root.spawn(1)[0])
            episodes.append(ep)
            steps += ep.steps
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            while steps < config.batch_steps:
                wave = root.spawn(workers)
                for ep in pool.map(run_one, wave):
                    if steps < config.batch_steps:
                        episodes.append(ep)
                        steps += ep.steps
    return _pack(episodes)


# ---------------------------------------------------------------------------
# Advantage estimation.


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def gae_advantages(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimation over one episode.

    `values` must hold one entry per step plus the terminal bootstrap, so
    len(values) == len(rewards) + 1.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(values) != len(rewards) + 1:
        raise ValueError(
            f"need len(rewards)+1 values, got {len(rewards)} rewards and {len(values)} values"
        )
    adv = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv


class LinearBaseline:
    """Least-squares value function on simple step features.

    Features: bias, the policy input, normalized time, and its square.
    Refit on every batch before advantages are computed; rank-deficient
    batches fall back to a ridge-regularized solve.
    """

    def __init__(self, horizon: int, ridge: float = 1e-6):
        self.horizon = horizon
        self.ridge = ridge
        self.weights: np.ndarray | None = None

    def _features(self, inputs: np.ndarray) -> np.ndarray:
        T = len(inputs)
        tau = np.arange(T) / self.horizon
        return np.hstack([np.ones((T, 1)), inputs, tau[:, None], tau[:, None] ** 2])

    def fit(self, batch: Batch, gamma: float) -> None:
        rows, targets = [], []
        for i, ep in enumerate(batch.episodes):
            rows.append(self._features(ep.inputs))
            targets.append(discounted_returns(ep.rewards, gamma))
        a = np.vstack(rows)
        y = np.concatenate(targets)
        self.weights, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
        if rank < a.shape[1]:
            gram = a.T @ a + self.ridge * np.eye(a.shape[1])
            self.weights = np.linalg.solve(gram, a.T @ y)

    def values(self, ep: Episode) -> np.ndarray:
        """Per-step values plus a zero terminal bootstrap."""
        if self.weights is None:
            v = np.zeros(ep.steps)
        else:
            v = self._features(ep.inputs) @ self.weights
        return np.append(v, 0.0)


def batch_advantages(batch: Batch, baseline: LinearBaseline, gamma: float, lam: float):
    """Padded advantage array plus explained variance of the baseline."""
    B, T = batch.mask.shape
    adv = np.zeros((B, T))
    err, tot = [], []
    for i, ep in enumerate(batch.episodes):
        values = baseline.values(ep)
        adv[i, : ep.steps] = gae_advantages(ep.rewards, values, gamma, lam)
        ret = discounted_returns(ep.rewards, gamma)
        err.append(ret - values[:-1])
        tot.append(ret)
    err = np.concatenate(err)
    tot = np.concatenate(tot)
    var = tot.var()
    explained = float(1.0 - err.var() / var) if var > 0 else 0.0
    return adv, explained


def normalize_advantages(advantages: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Scale batch advantages to zero mean and unit variance over valid steps."""
    valid = advantages[mask > 0]
    std = valid.std()
    if std < 1e-12:
        return np.zeros_like(advantages)
    return (advantages - valid.mean()) / std * mask


# ---------------------------------------------------------------------------
# Trust-region update.


def conjugate_gradient(apply_a: Callable, b: np.ndarray, iters: int, tol: float = 1e-10):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    for _ in range(iters):
        if rs < tol:
            break
        ap = apply_a(p)
        alpha = rs / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


@dataclass(frozen=True)
class UpdateResult:
    theta: np.ndarray
    accepted: bool
    kl: float
    improvement: float
    step_norm: float
    backtracks: int


def policy_gradient(policy, theta: np.ndarray, batch: Batch, advantages: np.ndarray):
    """Gradient of the importance surrogate at its expansion point.

    At theta the likelihood ratios are 1, so the gradient reduces to the
    advantage-weighted score function, averaged over valid steps. Returns
    the flat gradient along with the forward artifacts the update reuses.
    """
    a_dim = policy.action_dim
    n = batch.total_steps
    log_std = policy.log_std(theta).copy()
    sigma = np.exp(log_std)
    means, cache = policy.forward(theta, batch.inputs, batch.lengths)
    adv = advantages * batch.mask

    z = (batch.units - means) / sigma
    dmeans = adv[:, :, None] * z / sigma
    grad = policy.vjp(cache, dmeans / n)
    grad[-a_dim:] = ((z * z - 1.0) * adv[:, :, None] * batch.mask[:, :, None]).sum(
        axis=(0, 1)
    ) / n
    return grad, means, cache, log_std


def trust_region_update(
    policy, theta: np.ndarray, batch: Batch, advantages: np.ndarray, config: TrainConfig
) -> UpdateResult:
    """One natural-gradient step with KL-constrained backtracking.

    Maximizes the importance-weighted surrogate mean(adv * ratio) subject to
    mean KL(old || new) <= kl_step (with headroom 1.5x on acceptance). If no
    backtracked candidate improves the surrogate within the bound, the
    parameters are returned unchanged.
    """
    n = batch.total_steps
    grad, means, cache, log_std = policy_gradient(policy, theta, batch, advantages)
    logp_old = gaussian_log_prob(means, log_std, batch.units) * batch.mask
    adv = advantages * batch.mask

    gnorm = float(np.linalg.norm(grad))
    if not np.isfinite(gnorm) or gnorm < 1e-12:
        return UpdateResult(theta, False, 0.0, 0.0, 0.0, 0)

    def fvp(v):
        return fisher_vector_product(policy, cache, log_std, v, n, damping=config.cg_damping)

    direction = conjugate_gradient(fvp, grad, config.cg_iters)
    quad = float(direction @ fvp(direction))
    if quad <= 0:
        return UpdateResult(theta, False, 0.0, 0.0, 0.0, 0)
    full_step = float(np.sqrt(2.0 * config.kl_step / quad)) * direction
    full_norm = float(np.linalg.norm(full_step))

    surrogate_old = float((adv * batch.mask).sum() / n)

    def evaluate(candidate):
        new_means, _ = policy.forward(candidate, batch.inputs, batch.lengths)
        new_log_std = policy.log_std(candidate)
        logp_new = gaussian_log_prob(new_means, new_log_std, batch.units) * batch.mask
        ratio = np.exp(logp_new - logp_old) * batch.mask
        surrogate = float((adv * ratio).sum() / n)
        kl = float((gaussian_kl(means, log_std, new_means, new_log_std) * batch.mask).sum() / n)
        return surrogate, kl

    scale = 1.0
    for attempt in range(config.backtrack_steps):
        candidate = theta + scale * full_step
        surrogate, kl = evaluate(candidate)
        if np.isfinite(surrogate) and np.isfinite(kl):
            if surrogate - surrogate_old > 0 and kl <= 1.5 * config.kl_step:
                return UpdateResult(
                    candidate, True, kl, surrogate - surrogate_old, full_norm * scale, attempt
                )
        scale *= config.backtrack_ratio
    return UpdateResult(theta, False, 0.0, 0.0, 0.0, config.backtrack_steps)


# ---------------------------------------------------------------------------
# The training loop.


@dataclass
class TrainResult:
    solver: str
    policy: object
    theta: np.ndarray
    history: list[dict] = field(default_factory=list)
    best: Trajectory | None = None

    @property
    def best_return(self) -> float:
        return -np.inf if self.best is None else self.best.total_reward


HISTORY_FIELDS = (
    "iteration",
    "episodes",
    "steps",
    "collisions",
    "mean_return",
    "best_return",
    "best_so_far",
    "accepted",
    "kl",
    "improvement",
    "explained_variance",
)


def train(
    problem: AstProblem,
    solver: str,
    config: TrainConfig,
    ic: InitialCondition | None = None,
    theta: np.ndarray | None = None,
    start_iteration: int = 0,
    checkpoint_dir=None,
    on_iteration: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run the full training loop for one solver.

    Restarting from a checkpoint's parameters and iteration index replays
    the identical remaining batch stream, because episode randomness is
    keyed by (seed, iteration), never by wall clock or worker count.
    """
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
    policy = make_solver_policy(solver, config.hidden_dim, problem.sim)
    if theta is None:
        theta = policy.init_params(np.random.default_rng(np.random.SeedSequence((config.seed, 0x1A17))))
    else:
        theta = np.asarray(theta, dtype=float).copy()
        if theta.shape != (policy.param_count,):
            raise ValueError("theta does not match the solver's policy architecture")

    baseline = LinearBaseline(problem.sim.horizon)
    result = TrainResult(solver=solver, policy=policy, theta=theta)
    best: Trajectory | None = None

    for iteration in range(start_iteration, config.iterations):
        batch = collect_batch(problem, policy, theta, solver, config, iteration, ic)

        totals = np.array([e.total_reward for e in batch.episodes])
        leader = batch.episodes[int(totals.argmax())]
        if best is None or leader.total_reward > best.total_reward:
            best = leader.to_trajectory(problem.model)

        baseline.fit(batch, config.gamma)
        advantages, explained = batch_advantages(batch, baseline, config.gamma, config.lam)
        advantages = normalize_advantages(advantages, batch.mask)
        update = trust_region_update(policy, theta, batch, advantages, config)
        theta = update.theta

        row = {
            "iteration": iteration,
            "episodes": len(batch.episodes),
            "steps": batch.total_steps,
            "collisions": batch.collisions,
            "mean_return": float(totals.mean()),
            "best_return": float(totals.max()),
            "best_so_far": best.total_reward,
            "accepted": update.accepted,
            "kl": update.kl,
            "improvement": update.improvement,
            "explained_variance": explained,
        }
        result.history.append(row)
        if on_iteration is not None:
            on_iteration(row)

        if checkpoint_dir is not None and config.checkpoint_every > 0:
            last = iteration == config.iterations - 1
            if last or (iteration + 1) % config.checkpoint_every == 0:
                _save_checkpoint(checkpoint_dir, solver, policy, theta, iteration + 1, config)

    result.theta = theta
    result.best = best
    return result


def _save_checkpoint(checkpoint_dir, solver, policy, theta, next_iteration, config):
    os.makedirs(checkpoint_dir, exist_ok=True)
    path = os.path.join(checkpoint_dir, f"{solver}_iter{next_iteration:04d}.ckpt")
    save_policy(
        path,
        policy,
        theta,
        extra={"solver": solver, "iteration": next_iteration, "seed": config.seed},
    )


def resume_point(checkpoint_path):
    """Extract (solver, theta, next_iteration) from a training checkpoint."""
    ck = load_policy(checkpoint_path)
    extra = ck.extra
    if "iteration" not in extra or "solver" not in extra:
        raise ValueError("checkpoint lacks training metadata; cannot resume")
    return extra["solver"], ck.theta, int(extra["iteration"])
