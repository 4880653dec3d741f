"""Monte Carlo tree search over disturbance sequences.

The search treats the simulator as a deterministic black box: tree nodes are
identified by the action history that produced them, and each edge caches
the unique child state and step outcome, so re-traversals never re-run the
simulator. Continuous disturbance spaces are handled with progressive
widening on actions: a node may grow a new child only while its child count
is below k * max(1, N)^alpha. With a discrete action source and k set to
the number of actions, widening never binds and the search reduces to plain
UCT. State-side widening has no effect under deterministic transitions (one
child state per action), so no state analogue of the rule exists here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .actions import ActionModel
from .simulation import Trajectory


@dataclass(frozen=True)
class MctsConfig:
    """Search budget and exploration parameters."""

    iterations: int = 2000
    exploration: float = 100.0
    k_action: float = 1.0
    alpha_action: float = 0.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.exploration < 0:
            raise ValueError("exploration must be non-negative")
        if self.k_action <= 0 or not (0.0 <= self.alpha_action <= 1.0):
            raise ValueError("widening needs k_action > 0 and alpha_action in [0, 1]")


class ActionSource(Protocol):
    """Where the search gets candidate and rollout disturbances."""

    def propose(self, existing: list, rng: np.random.Generator) -> np.ndarray: ...

    def rollout_action(self, rng: np.random.Generator) -> np.ndarray: ...


class GaussianActionSource:
    """Sample disturbances from the problem's likelihood model."""

    def __init__(self, model: ActionModel):
        self.model = model

    def propose(self, existing, rng):
        return self.model.sample(rng)

    def rollout_action(self, rng):
        return self.model.sample(rng)


class DiscreteActionSource:
    """Enumerate a fixed action set; proposals fill unused slots in order."""

    def __init__(self, actions):
        self.actions = [np.asarray(a, dtype=float) for a in actions]
        if not self.actions:
            raise ValueError("need at least one action")

    def propose(self, existing, rng):
        for cand in self.actions:
            if not any(np.array_equal(cand, e) for e in existing):
                return cand
        raise ValueError("all actions already expanded")

    def rollout_action(self, rng):
        return self.actions[int(rng.integers(len(self.actions)))]


class Edge:
    """One tried action: visit stats plus the cached deterministic outcome."""

    __slots__ = ("action", "visits", "value", "child", "result")

    def __init__(self, action, child, result):
        self.action = action
        self.visits = 0
        self.value = 0.0
        self.child = child
        self.result = result


class TreeNode:
    __slots__ = ("state", "visits", "children")

    def __init__(self, state):
        self.state = state
        self.visits = 0
        self.children: list[Edge] = []


def should_widen(node: TreeNode, k: float, alpha: float) -> bool:
    """Progressive-widening test: may this node grow another child?"""
    return len(node.children) < k * max(1, node.visits) ** alpha


def select_action(node: TreeNode, exploration: float) -> Edge:
    """Pick the child maximizing mean return plus the visit-count bonus.

    Unvisited children win outright; ties resolve to the earliest child.
    """
    if not node.children:
        raise ValueError("select_action on a node with no children")
    log_n = math.log(max(1, node.visits))
    best, best_score = None, -math.inf
    for edge in node.children:
        if edge.visits == 0:
            return edge
        score = edge.value + exploration * math.sqrt(log_n / edge.visits)
        if score > best_score:
            best, best_score = edge, score
    return best


@dataclass(frozen=True)
class MctsResult:
    best: Trajectory
    root: TreeNode
    iterations: int
    trace: tuple[float, ...] = ()

    @property
    def found_event(self) -> bool:
        return self.best.found_event


def search(
    problem,
    ic,
    config: MctsConfig,
    rng: np.random.Generator,
    source: ActionSource | None = None,
) -> MctsResult:
    """Search for the highest-return disturbance trajectory from `ic`.

    The returned best trajectory is the global argmax over every complete
    episode the search executed, rollout tails included, so it can only
    improve with iterations.
    """
    sim = problem.sim
    if source is None:
        source = GaussianActionSource(problem.model)
    root = TreeNode(sim.initialize(ic))
    if sim.is_terminal(root.state):
        raise ValueError("initial state is already terminal")
    best: Trajectory | None = None
    trace: list[float] = []

    for _ in range(config.iterations):
        node = root
        path: list[Edge] = []
        nodes: list[TreeNode] = [root]
        actions: list[np.ndarray] = []
        rewards: list[float] = []
        states = [root.state]

        # Descend, widening where allowed, until expansion or a terminal node.
        expanded = False
        result = None
        while not sim.is_terminal(node.state):
            if should_widen(node, config.k_action, config.alpha_action):
                action = np.asarray(
                    source.propose([e.action for e in node.children], rng), dtype=float
                )
                child_state, step_out = sim.step(node.state, action)
                edge = Edge(action, TreeNode(child_state), step_out)
                node.children.append(edge)
                expanded = True
            else:
                edge = select_action(node, config.exploration)
            result = edge.result
            path.append(edge)
            actions.append(edge.action)
            rewards.append(problem.step_reward(edge.action, result))
            node = edge.child
            nodes.append(node)
            states.append(node.state)
            if expanded:
                break

        found = result.collision
        miss = result.miss_distance

        # Rollout from the frontier with source-sampled disturbances.
        state = node.state
        while not sim.is_terminal(state):
            action = np.asarray(source.rollout_action(rng), dtype=float)
            state, result = sim.step(state, action)
            actions.append(action)
            rewards.append(problem.step_reward(action, result))
            states.append(state)
            found = result.collision
            miss = result.miss_distance

        # Backup mean returns-to-go along the tree path.
        suffix = 0.0
        returns = [0.0] * len(rewards)
        for i in range(len(rewards) - 1, -1, -1):
            suffix += rewards[i]
            returns[i] = suffix
        for depth, edge in enumerate(path):
            nodes[depth].visits += 1
            edge.visits += 1
            edge.value += (returns[depth] - edge.value) / edge.visits

        total = float(sum(rewards))
        if best is None or total > best.total_reward:
            best = Trajectory(
                ic=ic,
                actions=np.array(actions).reshape(len(actions), -1),
                rewards=np.array(rewards),
                states=tuple(states),
                found_event=bool(found),
                miss_distance=float(miss),
            )
        trace.append(best.total_reward)

    return MctsResult(best=best, root=root, iterations=config.iterations, trace=tuple(trace))
