"""Environment disturbance actions and their likelihood model.

Each simulation step is driven by a 6-D disturbance vector: pedestrian
acceleration (2), observation noise on the pedestrian position seen by the
vehicle (2), and observation noise on its velocity (2). Disturbances are
scored against a diagonal Gaussian model; the Mahalanobis distance from the
model mean is the likelihood proxy used by the reward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTION_DIM = 6

# Component layout of the flat action vector.
PED_ACCEL = slice(0, 2)
OBS_NOISE_POS = slice(2, 4)
OBS_NOISE_VEL = slice(4, 6)


@dataclass(frozen=True)
class EnvironmentAction:
    """One step of environment disturbance.

    ped_accel in m/s^2, obs_noise_pos in m, obs_noise_vel in m/s.
    """

    ped_accel: np.ndarray
    obs_noise_pos: np.ndarray
    obs_noise_vel: np.ndarray

    def __post_init__(self):
        for name in ("ped_accel", "obs_noise_pos", "obs_noise_vel"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (2,):
                raise ValueError(f"{name} must be a 2-vector, got shape {v.shape}")
            object.__setattr__(self, name, v)
        if not np.isfinite(self.to_vector()).all():
            raise ValueError("action components must be finite")

    @classmethod
    def from_vector(cls, vec) -> "EnvironmentAction":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (ACTION_DIM,):
            raise ValueError(f"action vector must have shape ({ACTION_DIM},), got {vec.shape}")
        return cls(vec[PED_ACCEL], vec[OBS_NOISE_POS], vec[OBS_NOISE_VEL])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.ped_accel, self.obs_noise_pos, self.obs_noise_vel])


@dataclass(frozen=True)
class ActionModel:
    """Diagonal Gaussian disturbance model.

    `covariance_diag` holds the per-component variances. The default is a
    zero-mean model with 1.0 (m/s^2)^2 variance on each acceleration axis and
    0.01 variance on each observation-noise axis (sigma 0.1 m / 0.1 m/s).
    """

    mean: np.ndarray = field(default_factory=lambda: np.zeros(ACTION_DIM))
    covariance_diag: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 1.0, 0.01, 0.01, 0.01, 0.01])
    )

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance_diag, dtype=float)
        if mean.shape != (ACTION_DIM,) or cov.shape != (ACTION_DIM,):
            raise ValueError("mean and covariance_diag must be 6-vectors")
        if not (cov > 0).all():
            raise ValueError("all variances must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance_diag", cov)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.covariance_diag)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one disturbance vector from the model."""
        return self.mean + self.std * rng.standard_normal(ACTION_DIM)

    def scale(self, unit_action: np.ndarray) -> np.ndarray:
        """Map a dimensionless action (in sigma units) to model units."""
        return self.mean + self.std * np.asarray(unit_action, dtype=float)

    def unscale(self, action: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`scale`."""
        return (np.asarray(action, dtype=float) - self.mean) / self.std


def mahalanobis(action, model: ActionModel) -> float:
    """Distance of an action from the model mean, scaled by the variances.

    Returns sqrt(sum_i (a_i - mu_i)^2 / sigma_i^2); zero iff the action
    equals the mean.
    """
    if isinstance(action, EnvironmentAction):
        vec = action.to_vector()
    else:
        vec = np.asarray(action, dtype=float)
        if vec.shape != (ACTION_DIM,):
            raise ValueError(f"action vector must have shape ({ACTION_DIM},), got {vec.shape}")
    if not np.isfinite(vec).all():
        raise ValueError("action components must be finite")
    z = (vec - model.mean) / model.std
    return float(np.sqrt(z @ z))
