"""Crosswalk scenario: an autonomous car approaching a crossing pedestrian.

The system under test is a deterministic rule-based driving policy. It tracks
the pedestrian through noisy observations with a constant-gain filter and
brakes when the predicted pedestrian path crosses the car's travel corridor
within a time-to-contact threshold. Environment disturbances perturb the
pedestrian's acceleration and the car's observations; a failure event is a
collision between the car body and the pedestrian disc.

Axes: the car drives in +x along the lane centerline y = 1.75 m; the
pedestrian starts south of the road and crosses northward through x ~ 0.
Integration is semi-implicit Euler (velocity first, then position).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .actions import EnvironmentAction

# Initial-condition space: support bounds per dimension, in field order.
IC_FIELDS = ("ped_x", "ped_y", "car_x", "ped_vy", "car_vx")
IC_LOW = np.array([-1.0, -6.0, -43.75, 0.0, 8.34])
IC_HIGH = np.array([1.0, -2.0, -26.25, 2.0, 13.96])


@dataclass(frozen=True)
class InitialCondition:
    """Scenario start: pedestrian pose/speed and car pose/speed.

    The pedestrian starts with zero x-velocity; the car starts at its desired
    cruise speed on the lane centerline.
    """

    ped_x: float
    ped_y: float
    car_x: float
    ped_vy: float
    car_vx: float

    @classmethod
    def from_vector(cls, vec) -> "InitialCondition":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (5,):
            raise ValueError(f"initial condition vector must have shape (5,), got {vec.shape}")
        return cls(*(float(v) for v in vec))

    def to_vector(self) -> np.ndarray:
        return np.array([self.ped_x, self.ped_y, self.car_x, self.ped_vy, self.car_vx])

    def in_support(self) -> bool:
        v = self.to_vector()
        return bool(np.isfinite(v).all() and (v >= IC_LOW).all() and (v <= IC_HIGH).all())

    def normalized(self) -> np.ndarray:
        """Map onto [0, 1]^5 relative to the support bounds."""
        return (self.to_vector() - IC_LOW) / (IC_HIGH - IC_LOW)


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, dynamics, and driving-policy parameters."""

    dt: float = 0.1
    horizon: int = 50

    car_half_length: float = 2.4
    car_half_width: float = 0.9
    ped_radius: float = 0.3
    lane_width: float = 3.5
    car_lane_y: float = 1.75

    # Physical bound on pedestrian acceleration, per axis.
    ped_accel_limit: float = 3.0

    # Driving policy: speed tracking and emergency braking.
    cruise_gain: float = 0.5
    cruise_accel_limit: float = 2.0
    brake_decel: float = 6.0

    # Pedestrian tracker (constant-gain filter on noisy observations).
    track_gain_pos: float = 0.5
    track_gain_vel: float = 0.5

    # Threat test: brake when the pedestrian's predicted path over the next
    # predict_window seconds crosses the car corridor and either
    # time-to-contact is below threshold or the gap is already below
    # min_gap (keeps a slow car from creeping into the crossing).
    # pass_margin extends the "already passed" cutoff behind the rear bumper.
    ttc_threshold: float = 2.5
    min_gap: float = 5.0
    predict_window: float = 4.5
    corridor_margin: float = 0.6
    pass_margin: float = 0.3

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        if min(self.car_half_length, self.car_half_width, self.ped_radius) <= 0:
            raise ValueError("geometry dimensions must be positive")


@dataclass(frozen=True)
class SimState:
    """Full simulation state; everything needed to continue deterministically."""

    t: int
    ped_x: float
    ped_y: float
    ped_vx: float
    ped_vy: float
    car_x: float
    car_vx: float
    car_v_des: float
    est_ped_x: float
    est_ped_y: float
    est_ped_vx: float
    est_ped_vy: float


@dataclass(frozen=True)
class StepResult:
    collision: bool
    miss_distance: float
    terminal: bool


# Exposed-state layout (13-d): normalized step count, pedestrian kinematics,
# car kinematics, tracker estimate, and car-relative pedestrian offset.
STATE_DIM = 13
STATE_SCALES = np.array([1.0, 1.0, 6.0, 3.0, 3.0, 45.0, 14.0, 1.0, 6.0, 3.0, 3.0, 45.0, 8.0])


class CrosswalkSim:
    """Deterministic crosswalk simulator driven by disturbance actions."""

    def __init__(self, config: ScenarioConfig | None = None):
        self.config = config if config is not None else ScenarioConfig()

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def sample_initial_condition(self, rng: np.random.Generator) -> InitialCondition:
        """Draw an initial condition uniformly over the support box."""
        return InitialCondition.from_vector(rng.uniform(IC_LOW, IC_HIGH))

    def initialize(self, ic: InitialCondition, *, strict: bool = True) -> SimState:
        """Build the start state; the tracker starts converged on the truth.

        Out-of-support conditions raise when strict (training), otherwise
        warn and proceed (useful when probing the edges of the box).
        """
        vec = ic.to_vector()
        if not np.isfinite(vec).all():
            raise ValueError("initial condition must be finite")
        if not ic.in_support():
            if strict:
                raise ValueError(f"initial condition outside support: {ic}")
            warnings.warn(f"initial condition outside support: {ic}", stacklevel=2)
        return SimState(
            t=0,
            ped_x=ic.ped_x,
            ped_y=ic.ped_y,
            ped_vx=0.0,
            ped_vy=ic.ped_vy,
            car_x=ic.car_x,
            car_vx=ic.car_vx,
            car_v_des=ic.car_vx,
            est_ped_x=ic.ped_x,
            est_ped_y=ic.ped_y,
            est_ped_vx=0.0,
            est_ped_vy=ic.ped_vy,
        )

    def separation(self, state: SimState) -> float:
        """Distance from the pedestrian disc to the car rectangle (0 on contact)."""
        cfg = self.config
        dx = abs(state.ped_x - state.car_x) - cfg.car_half_length
        dy = abs(state.ped_y - cfg.car_lane_y) - cfg.car_half_width
        gap = math.hypot(max(dx, 0.0), max(dy, 0.0))
        return max(0.0, gap - cfg.ped_radius)

    def in_collision(self, state: SimState) -> bool:
        return self.separation(state) == 0.0

    def is_terminal(self, state: SimState) -> bool:
        return state.t >= self.config.horizon or self.in_collision(state)

    def step(self, state: SimState, action) -> tuple[SimState, StepResult]:
        """Advance one time step under a disturbance action.

        The car senses, filters, and chooses its acceleration from the state
        at the start of the step, then both agents integrate semi-implicitly.
        Stepping a terminal state is a contract violation.
        """
        if self.is_terminal(state):
            raise ValueError(f"step() called on terminal state at t={state.t}")
        if not isinstance(action, EnvironmentAction):
            action = EnvironmentAction.from_vector(action)
        cfg = self.config
        dt = cfg.dt

        # Sense and filter.
        obs_x = state.ped_x + float(action.obs_noise_pos[0])
        obs_y = state.ped_y + float(action.obs_noise_pos[1])
        obs_vx = state.ped_vx + float(action.obs_noise_vel[0])
        obs_vy = state.ped_vy + float(action.obs_noise_vel[1])
        gp, gv = cfg.track_gain_pos, cfg.track_gain_vel
        est_x = state.est_ped_x + gp * (obs_x - state.est_ped_x)
        est_y = state.est_ped_y + gp * (obs_y - state.est_ped_y)
        est_vx = state.est_ped_vx + gv * (obs_vx - state.est_ped_vx)
        est_vy = state.est_ped_vy + gv * (obs_vy - state.est_ped_vy)

        # Decide: emergency brake on a predicted corridor conflict, else cruise.
        if self._threat(est_x, est_y, est_vy, state.car_x, state.car_vx):
            car_acc = -cfg.brake_decel
        else:
            car_acc = cfg.cruise_gain * (state.car_v_des - state.car_vx)
            car_acc = min(max(car_acc, -cfg.cruise_accel_limit), cfg.cruise_accel_limit)

        # Integrate the car; it never reverses.
        car_vx = max(0.0, state.car_vx + car_acc * dt)
        car_x = state.car_x + car_vx * dt

        # Integrate the pedestrian under the clamped disturbance acceleration.
        lim = cfg.ped_accel_limit
        ax = min(max(float(action.ped_accel[0]), -lim), lim)
        ay = min(max(float(action.ped_accel[1]), -lim), lim)
        ped_vx = state.ped_vx + ax * dt
        ped_vy = state.ped_vy + ay * dt
        ped_x = state.ped_x + ped_vx * dt
        ped_y = state.ped_y + ped_vy * dt

        new_state = SimState(
            t=state.t + 1,
            ped_x=ped_x,
            ped_y=ped_y,
            ped_vx=ped_vx,
            ped_vy=ped_vy,
            car_x=car_x,
            car_vx=car_vx,
            car_v_des=state.car_v_des,
            est_ped_x=est_x,
            est_ped_y=est_y,
            est_ped_vx=est_vx,
            est_ped_vy=est_vy,
        )
        miss = self.separation(new_state)
        collision = miss == 0.0
        terminal = collision or new_state.t >= cfg.horizon
        return new_state, StepResult(collision=collision, miss_distance=miss, terminal=terminal)

    def _threat(self, est_x, est_y, est_vy, car_x, car_vx) -> bool:
        cfg = self.config
        dx = est_x - car_x
        if dx <= -(cfg.car_half_length + cfg.pass_margin):
            return False
        ttc = dx / max(car_vx, 0.1)
        if ttc > cfg.ttc_threshold and dx > cfg.min_gap:
            return False
        reach = est_y + est_vy * cfg.predict_window
        y_lo, y_hi = min(est_y, reach), max(est_y, reach)
        half = cfg.car_half_width + cfg.corridor_margin
        return y_hi >= cfg.car_lane_y - half and y_lo <= cfg.car_lane_y + half

    def expose_state(self, state: SimState) -> np.ndarray:
        """Flatten the state for function approximators (13-d, unscaled)."""
        cfg = self.config
        return np.array(
            [
                state.t / cfg.horizon,
                state.ped_x,
                state.ped_y,
                state.ped_vx,
                state.ped_vy,
                state.car_x,
                state.car_vx,
                state.est_ped_x,
                state.est_ped_y,
                state.est_ped_vx,
                state.est_ped_vy,
                state.ped_x - state.car_x,
                state.ped_y - cfg.car_lane_y,
            ]
        )
