from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from planner import EPS_FEAS, TimeOutOfRangeError
from planner.bernstein import (derivative_matrix, evaluate_coefficients,
                               waypoints_to_coefficients)
import utils


@dataclass(frozen=True)
class Waypoint:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __post_init__(self):
        for name in ('position', 'velocity', 'acceleration'):
            value = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            if not np.all(np.isfinite(value)):
                raise ValueError(f'waypoint {name} must be finite')
            object.__setattr__(self, name, value)

    @classmethod
    def at_rest(cls, position):
        position = np.atleast_1d(np.asarray(position, dtype=float))
        return cls(position, np.zeros_like(position), np.zeros_like(position))

    def as_array(self):
        """(3, axes): rows position, velocity, acceleration."""
        return np.stack([self.position, self.velocity, self.acceleration])

    def to_json(self):
        return {'position': self.position.tolist(), 'velocity': self.velocity.tolist(),
                'acceleration': self.acceleration.tolist()}


@dataclass(frozen=True)
class BernsteinSegment:
    coefficients: np.ndarray
    duration: float

    @property
    def velocity_points(self):
        return self.coefficients @ derivative_matrix(1, self.duration).T

    @property
    def acceleration_points(self):
        return self.coefficients @ derivative_matrix(2, self.duration).T

    def evaluate(self, tau):
        """Position, velocity and acceleration at local times tau, each (N, axes)."""
        s = np.clip(np.atleast_1d(np.asarray(tau, dtype=float)) / self.duration, 0.0, 1.0)
        return (evaluate_coefficients(self.coefficients, s),
                evaluate_coefficients(self.velocity_points, s),
                evaluate_coefficients(self.acceleration_points, s))


@dataclass
class Trajectory:
    """Piecewise order-5 Bernstein spline through a corridor.

    Segment n joins waypoints n and n+1, lasts durations[n] and is confined to
    the box lower[n], upper[n]; box_index[n] is the corridor position of that
    box (several segments share a box when long cuboids are subdivided).
    """
    waypoints: List[Waypoint]
    durations: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    box_index: Optional[np.ndarray] = None
    solve_report: object = None
    segments: List[BernsteinSegment] = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=float).reshape(-1)
        n = self.durations.size
        if len(self.waypoints) != n + 1:
            raise ValueError(f'{n} segments need {n + 1} waypoints, got {len(self.waypoints)}')
        self.lower = np.asarray(self.lower, dtype=float).reshape(n, -1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(n, -1)
        if self.box_index is None:
            self.box_index = np.arange(n)
        self.box_index = np.asarray(self.box_index, dtype=int)
        self.segments = [BernsteinSegment(waypoints_to_coefficients(self.waypoints[i], self.waypoints[i + 1],
                                                                    self.durations[i]),
                                          float(self.durations[i]))
                         for i in range(n)]
        self.offsets = np.concatenate([[0.0], np.cumsum(self.durations)])

    @property
    def total_time(self):
        return float(self.offsets[-1])

    @property
    def n_segments(self):
        return self.durations.size

    @property
    def start(self):
        return self.waypoints[0]

    @property
    def goal(self):
        return self.waypoints[-1]

    def _locate(self, t):
        seg = np.searchsorted(self.offsets, t, side='right') - 1
        return np.clip(seg, 0, self.n_segments - 1)

    def sample(self, times):
        """Position, velocity, acceleration at global times, each (N, axes)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        tol = 1e-9 * max(1.0, self.total_time)
        if np.any(times < -tol) or np.any(times > self.total_time + tol):
            raise TimeOutOfRangeError(f'sample times must lie in [0, {self.total_time}]')
        times = np.clip(times, 0.0, self.total_time)
        seg = self._locate(times)
        axes = self.lower.shape[1]
        pos, vel, acc = (np.empty((times.size, axes)) for _ in range(3))
        for n in np.unique(seg):
            mask = seg == n
            p, v, a = self.segments[n].evaluate(times[mask] - self.offsets[n])
            pos[mask], vel[mask], acc[mask] = p, v, a
        return pos, vel, acc

    def evaluate(self, t):
        pos, vel, acc = self.sample([t])
        return pos[0], vel[0], acc[0]

    def state_at(self, t):
        """Clamped evaluation as a Waypoint; past the end the goal is held."""
        t = min(max(float(t), 0.0), self.total_time)
        return Waypoint(*self.evaluate(t))

    def path_length(self, samples=2000):
        times = np.linspace(0.0, self.total_time, max(samples, 2))
        pos, _, _ = self.sample(times)
        return float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum())

    def max_speed(self, samples=2000):
        times = np.linspace(0.0, self.total_time, max(samples, 2))
        _, vel, _ = self.sample(times)
        return float(np.linalg.norm(vel, axis=1).max())

    def to_frame(self, rate=100.0):
        n = max(int(np.floor(self.total_time * rate)) + 1, 1)
        times = np.arange(n) / rate
        if times[-1] < self.total_time:
            times = np.append(times, self.total_time)
        pos, vel, acc = self.sample(times)
        columns = {'t': times}
        for k, axis in enumerate('xyz'[:pos.shape[1]]):
            columns[axis] = pos[:, k]
            columns[f'v{axis}'] = vel[:, k]
            columns[f'a{axis}'] = acc[:, k]
        order = ['t'] + [f'{p}{axis}' for p in ('', 'v', 'a') for axis in 'xyz'[:pos.shape[1]]]
        return pd.DataFrame(columns)[order]

    def to_json(self):
        return {
            'total_time': self.total_time,
            'durations': self.durations.tolist(),
            'waypoints': [w.to_json() for w in self.waypoints],
            'lower': self.lower.tolist(),
            'upper': self.upper.tolist(),
            'box_index': self.box_index.tolist(),
        }

    def save(self, csv_path, json_path, rate=100.0):
        self.to_frame(rate).to_csv(csv_path, index=False)
        utils.write_json(json_path, self.to_json())


def evaluate(traj, t):
    return traj.evaluate(t)


@dataclass(frozen=True)
class VerifyReport:
    """Largest bound violations (0 when satisfied) over dense samples and over
    control points."""
    position_sampled: float
    velocity_sampled: float
    acceleration_sampled: float
    position_ctrl: float
    velocity_ctrl: float
    acceleration_ctrl: float
    samples: int

    def sampled_ok(self, eps=EPS_FEAS):
        return max(self.position_sampled, self.velocity_sampled, self.acceleration_sampled) <= eps

    def control_points_ok(self, eps=EPS_FEAS):
        return max(self.position_ctrl, self.velocity_ctrl, self.acceleration_ctrl) <= eps

    def ok(self, eps=EPS_FEAS):
        return self.sampled_ok(eps) and self.control_points_ok(eps)

    def to_dict(self):
        return dict(self.__dict__)


def _box_violation(values, lo, hi):
    return float(np.max(np.maximum(np.maximum(lo - values, values - hi), 0.0), initial=0.0))


def verify(traj, corridor=None, limits=None, samples=10_000):
    """Check the trajectory against its boxes and the limits.

    `corridor` overrides the boxes stored in the trajectory (mapped through
    box_index); without `limits` only positions are checked.
    """
    if samples < 2:
        raise ValueError('verify needs at least 2 samples')
    if corridor is not None:
        lower = corridor.lower[traj.box_index]
        upper = corridor.upper[traj.box_index]
    else:
        lower, upper = traj.lower, traj.upper

    times = np.linspace(0.0, traj.total_time, samples)
    pos, vel, acc = traj.sample(times)
    seg = traj._locate(times)
    pos_s = _box_violation(pos, lower[seg], upper[seg])
    # junction samples belong to both neighbouring boxes
    prev = np.maximum(seg - 1, 0)
    at_junction = np.isclose(times, traj.offsets[seg]) & (seg > 0)
    if np.any(at_junction):
        pos_prev = _box_violation(pos[at_junction], lower[prev[at_junction]], upper[prev[at_junction]])
        pos_s = max(pos_s, pos_prev)

    pos_c = max((_box_violation(s.coefficients.T, lower[n], upper[n]) for n, s in enumerate(traj.segments)),
                default=0.0)
    if limits is None:
        vel_s = acc_s = vel_c = acc_c = 0.0
    else:
        v, a = limits.v_max[:pos.shape[1]], limits.a_max[:pos.shape[1]]
        vel_s = _box_violation(vel, -v, v)
        acc_s = _box_violation(acc, -a, a)
        vel_c = max((_box_violation(s.velocity_points.T, -v, v) for s in traj.segments), default=0.0)
        acc_c = max((_box_violation(s.acceleration_points.T, -a, a) for s in traj.segments), default=0.0)
    return VerifyReport(pos_s, vel_s, acc_s, pos_c, vel_c, acc_c, samples)
