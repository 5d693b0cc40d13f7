from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from replan import yaw_reference


@dataclass(frozen=True)
class VehicleState:
    position: np.ndarray
    velocity: np.ndarray
    yaw: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        position = np.asarray(self.position, dtype=float).reshape(3)
        velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        if not (np.all(np.isfinite(position)) and np.all(np.isfinite(velocity))):
            raise ValueError('vehicle state must be finite')
        object.__setattr__(self, 'position', position)
        object.__setattr__(self, 'velocity', velocity)

    @classmethod
    def at_rest(cls, position, yaw=0.0, time=0.0):
        return cls(position, np.zeros(3), yaw, time)


@dataclass(frozen=True)
class VehicleOptions:
    # per-axis Gaussian tracking error (m), clipped at clip_sigmas
    tracking_sigma: float = 0.0
    clip_sigmas: float = 4.0
    yaw_limit: float = 0.5
    yaw_deadband: float = 0.1


def step(state, trajectory, dt, t_offset=0.0, options=VehicleOptions(), rng=None):
    """Advance kinematically to the trajectory reference at state.time + dt.

    `t_offset` is the sim time at which the trajectory started; past its end
    the final waypoint is held. Without a trajectory the vehicle hovers.
    """
    if dt < 0:
        raise ValueError(f'dt must be non-negative, got {dt}')
    if dt == 0:
        return state
    t = state.time + dt
    if trajectory is None:
        return VehicleState(state.position, np.zeros(3), state.yaw, t)

    reference = trajectory.state_at(t - t_offset)
    position = reference.position
    if options.tracking_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng()
        limit = options.clip_sigmas * options.tracking_sigma
        position = position + np.clip(rng.normal(0.0, options.tracking_sigma, 3), -limit, limit)
    yaw = yaw_reference(state.yaw, reference.velocity, options.yaw_limit, options.yaw_deadband).yaw
    return VehicleState(position, reference.velocity, yaw, t)
