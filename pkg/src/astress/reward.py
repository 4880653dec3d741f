"""Per-step reward for the stress-testing MDP.

The solver maximizes trajectory likelihood subject to reaching a failure
event, so the reward is a likelihood proxy: the negative Mahalanobis distance
of each disturbance from the action model. Reaching the event yields 0 for
that step; running out the horizon without the event yields a large penalty
that decreases with the miss distance, steering search toward near-misses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .actions import ActionModel, mahalanobis


@dataclass(frozen=True)
class RewardSpec:
    """Penalty coefficients, stored as positive magnitudes.

    The horizon-without-event reward is -(event_penalty + miss_scale * dist),
    with dist the miss distance in meters at the final step.
    """

    event_penalty: float = 1.0e5
    miss_scale: float = 1.0e4

    def __post_init__(self):
        if self.event_penalty < 0 or self.miss_scale < 0:
            raise ValueError("penalty coefficients must be non-negative")


def step_reward(
    spec: RewardSpec,
    model: ActionModel,
    action,
    *,
    found_event: bool,
    at_horizon: bool,
    miss_distance: float = 0.0,
) -> float:
    """Reward for one transition.

    `found_event` means the failure event occurred on this step;
    `at_horizon` means this was the final step and no event occurred.
    The two flags are mutually exclusive: the event takes precedence.
    """
    if found_event:
        return 0.0
    if at_horizon:
        if miss_distance < 0 or not np.isfinite(miss_distance):
            raise ValueError(f"miss_distance must be finite and non-negative, got {miss_distance}")
        return -(spec.event_penalty + spec.miss_scale * miss_distance)
    return -mahalanobis(action, model)
