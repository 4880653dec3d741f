"""Rollout plumbing: drive a simulator with a disturbance source, score it.

A stress-testing problem bundles a simulator with the disturbance likelihood
model and reward coefficients. Rollouts execute controllers: callables
mapping (state, step index) to a raw disturbance vector. Trajectories record
everything needed to replay a run bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .actions import ActionModel, mahalanobis
from .crosswalk import InitialCondition, StepResult
from .reward import RewardSpec, step_reward


@runtime_checkable
class Simulator(Protocol):
    """Minimal deterministic-simulator interface the solvers rely on."""

    @property
    def horizon(self) -> int: ...

    def sample_initial_condition(self, rng): ...

    def initialize(self, ic, *, strict: bool = True): ...

    def step(self, state, action) -> tuple[object, StepResult]: ...

    def is_terminal(self, state) -> bool: ...

    def expose_state(self, state) -> np.ndarray: ...


class SimulationError(RuntimeError):
    """A simulator step failed; carries the offending step index."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"simulation step {step} failed: {cause}")
        self.step = step


Controller = Callable[[object, int], np.ndarray]


@dataclass(frozen=True)
class Trajectory:
    """One executed episode: actions taken, rewards earned, states visited.

    `states` includes the start state, so len(states) == len(actions) + 1.
    `miss_distance` is the pedestrian gap at the final step (0.0 on a
    collision).
    """

    ic: InitialCondition
    actions: np.ndarray
    rewards: np.ndarray
    states: tuple
    found_event: bool
    miss_distance: float

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("states must include the start state")
        if len(self.rewards) != len(self.actions):
            raise ValueError("one reward per action")

    @property
    def steps(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


@dataclass(frozen=True)
class AstProblem:
    """A simulator, a disturbance model, and the reward that links them."""

    sim: Simulator
    model: ActionModel = field(default_factory=ActionModel)
    reward: RewardSpec = field(default_factory=RewardSpec)

    def step_reward(self, action, result: StepResult) -> float:
        """Score one transition. Uses the commanded action, pre-clamping."""
        return step_reward(
            self.reward,
            self.model,
            action,
            found_event=result.collision,
            at_horizon=result.terminal and not result.collision,
            miss_distance=result.miss_distance,
        )

    def rollout(
        self,
        ic: InitialCondition,
        controller: Controller,
        *,
        strict: bool = True,
    ) -> Trajectory:
        """Run one episode from `ic`, driven by `controller`, to termination."""
        state = self.sim.initialize(ic, strict=strict)
        states = [state]
        actions: list[np.ndarray] = []
        rewards: list[float] = []
        found = False
        miss = np.inf
        t = 0
        while not self.sim.is_terminal(state):
            action = np.asarray(controller(state, t), dtype=float)
            try:
                state, result = self.sim.step(state, action)
            except Exception as err:
                raise SimulationError(t, err) from err
            actions.append(action)
            rewards.append(self.step_reward(action, result))
            states.append(state)
            found = result.collision
            miss = result.miss_distance
            t += 1
        return Trajectory(
            ic=ic,
            actions=np.array(actions).reshape(t, -1),
            rewards=np.array(rewards),
            states=tuple(states),
            found_event=found,
            miss_distance=float(miss),
        )

    def replay(self, ic: InitialCondition, actions, *, strict: bool = False) -> Trajectory:
        """Re-execute a recorded action sequence; must reach termination."""
        actions = np.asarray(actions, dtype=float)
        traj = self.rollout(ic, sequence_controller(actions), strict=strict)
        if traj.steps != len(actions):
            raise ValueError(
                f"recorded {len(actions)} actions but episode terminated after {traj.steps}"
            )
        return traj


def mean_controller(model: ActionModel) -> Controller:
    """Always emit the model mean (the zero-disturbance baseline)."""

    def controller(state, t):
        return model.mean

    return controller


def sampling_controller(model: ActionModel, rng: np.random.Generator) -> Controller:
    """Sample each step's disturbance from the model."""

    def controller(state, t):
        return model.sample(rng)

    return controller


def sequence_controller(actions) -> Controller:
    """Replay a fixed action sequence; stepping past its end is an error."""
    actions = np.asarray(actions, dtype=float)

    def controller(state, t):
        if t >= len(actions):
            raise IndexError(f"controller exhausted after {len(actions)} actions")
        return actions[t]

    return controller
