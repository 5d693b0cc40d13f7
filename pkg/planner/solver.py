"""Time-optimal waypoint/duration optimization through a corridor.

Decision variables are the waypoints 1..n (position, velocity and
acceleration per axis) and the n segment durations; waypoint 0 is the fixed
start state and waypoint n is pinned to the goal at rest by equality
constraints. The objective is the total time. Every segment's control points
must stay in its box, and its velocity and acceleration control points within
the per-axis limits, which bounds the whole curve by the convex-hull property.
The hull constraints are imposed multiplied through by t and t^2:

    t v_max >= |5 diff(c)|        t^2 a_max >= |20 diff2(c)|
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from planner import (EPS_FEAS, T_MIN, EmptyCorridorError, InfeasibleStartError,
                     SolveCancelledError, SolverFailureError)
from planner.bernstein import DIFF1, DIFF2, conversion_parts
from planner.trajectory import Trajectory, Waypoint, verify


@dataclass(frozen=True)
class SolverOptions:
    t_min: float = T_MIN
    eps_feas: float = EPS_FEAS
    max_iter: int = 300
    ftol: float = 1e-9
    # split segments longer than this (m) into several sharing one box
    max_segment_length: Optional[float] = None
    # geometric duration scan for a feasible initialization
    init_growth: float = 1.2
    init_max_steps: int = 120

    def __post_init__(self):
        if not self.t_min > 0:
            raise ValueError('solver t_min must be positive')
        if not self.eps_feas > 0:
            raise ValueError('solver eps_feas must be positive')
        if self.max_segment_length is not None and not self.max_segment_length > 0:
            raise ValueError('solver max_segment_length must be positive')
        if not self.init_growth > 1.0:
            raise ValueError('solver init_growth must exceed 1')


@dataclass(frozen=True)
class ProblemLayout:
    """Flat variable vector: waypoints 1..n as (n, axes, 3) then n durations."""
    n_segments: int
    axes: int = 3

    @property
    def waypoint_vars(self):
        return 3 * self.axes * self.n_segments

    @property
    def waypoint_vars_per_axis(self):
        return 3 * self.n_segments

    @property
    def duration_vars(self):
        return self.n_segments

    @property
    def size(self):
        return self.waypoint_vars + self.duration_vars

    def waypoint_column(self, j, axis, kind):
        """Column of waypoint j (1..n), axis, kind (0 p, 1 v, 2 a)."""
        return ((j - 1) * self.axes + axis) * 3 + kind

    def duration_column(self, i):
        return self.waypoint_vars + i

    def pack(self, states, durations):
        """states: (n+1, axes, 3) including the start."""
        return np.concatenate([np.asarray(states)[1:].reshape(-1), np.asarray(durations, dtype=float)])

    def unpack(self, x, start):
        states = np.empty((self.n_segments + 1, self.axes, 3))
        states[0] = start
        states[1:] = x[:self.waypoint_vars].reshape(self.n_segments, self.axes, 3)
        return states, x[self.waypoint_vars:]


@dataclass
class SolveReport:
    status: str
    iterations: int
    initial_time: float
    feasible_initial_time: float
    final_time: float
    message: str = ''
    n_variables: int = 0
    n_constraints: int = 0
    max_violation: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if k != 'extra'}


def _state(w):
    """(axes, 3) with columns position, velocity, acceleration."""
    return w.as_array().T


def _to_waypoints(states):
    return [Waypoint(s[:, 0], s[:, 1], s[:, 2]) for s in states]


@dataclass
class _Segments:
    """Per-segment boxes after optional subdivision."""
    lower: np.ndarray
    upper: np.ndarray
    box_index: np.ndarray
    positions: np.ndarray


def initialize(corridor, start, goal, limits, options=SolverOptions()):
    """Straight-line initialization through the intersection midpoints.

    Interior waypoints sit at the center of consecutive box intersections at
    rest; each duration is the leg length over the norm of v_max, floored at
    t_min. Returns (waypoints, durations).
    """
    if corridor is None or len(corridor) == 0:
        raise EmptyCorridorError('corridor has no cuboids')
    start = start if isinstance(start, Waypoint) else Waypoint.at_rest(start)
    goal = np.asarray(goal, dtype=float).reshape(-1)

    points = [start.position]
    for n in range(len(corridor) - 1):
        lo, hi = corridor.intersection(n)
        points.append(0.5 * (lo + hi))
    points.append(goal)
    points = np.array(points)

    waypoints = [start] + [Waypoint.at_rest(p) for p in points[1:]]
    legs = np.linalg.norm(np.diff(points, axis=0), axis=1)
    durations = np.maximum(legs / np.linalg.norm(limits.v_max), options.t_min)
    return waypoints, durations


def _subdivide(corridor, points, max_length):
    lower, upper, box_index, positions = [], [], [], [points[0]]
    for n in range(len(corridor)):
        leg = points[n + 1] - points[n]
        pieces = 1
        if max_length is not None:
            pieces = max(1, int(math.ceil(np.linalg.norm(leg) / max_length - 1e-9)))
        for k in range(1, pieces + 1):
            lower.append(corridor.lower[n])
            upper.append(corridor.upper[n])
            box_index.append(n)
            positions.append(points[n] + leg * k / pieces)
    return _Segments(np.array(lower), np.array(upper), np.array(box_index), np.array(positions))


class _Problem(object):
    """Constraint values and analytic Jacobians for a fixed start and boxes."""

    def __init__(self, segments, start, goal, limits, options):
        self.n = segments.lower.shape[0]
        self.axes = segments.lower.shape[1]
        self.layout = ProblemLayout(self.n, self.axes)
        self.start = start
        self.goal = goal
        # boxes are kept exact so touching corridors still share a face;
        # the start state may sit on the limits it was accepted with
        margin = 0.5 * options.eps_feas
        self.lower = segments.lower
        self.upper = segments.upper
        self.v_max = np.maximum(limits.v_max[:self.axes] - margin, np.abs(start[:, 1]))
        self.a_max = np.maximum(limits.a_max[:self.axes] - margin, np.abs(start[:, 2]))
        self.A0, self.A1, self.A2 = conversion_parts()
        self.E1 = 5.0 * DIFF1
        self.E2 = 20.0 * DIFF2
        # 6 position, 5 velocity and 4 acceleration control points, two sides each
        self.rows_per_block = 2 * (6 + 5 + 4)

    def _z(self, states):
        """(n, axes, 6): [p, v, a] of both ends of every segment."""
        return np.concatenate([states[:-1], states[1:]], axis=2)

    def coefficients(self, states, t):
        M = self.A0 + t[:, None, None] * self.A1 + (t ** 2)[:, None, None] * self.A2
        return np.einsum('nij,naj->nai', M, self._z(states)), M

    def inequality(self, x):
        states, t = self.layout.unpack(x, self.start)
        C, _ = self.coefficients(states, t)
        V = C @ self.E1.T
        A = C @ self.E2.T
        tv = t[:, None, None] * self.v_max[None, :, None]
        ta = (t ** 2)[:, None, None] * self.a_max[None, :, None]
        g = np.concatenate([
            C - self.lower[:, :, None],
            self.upper[:, :, None] - C,
            tv - V,
            tv + V,
            ta - A,
            ta + A,
        ], axis=2)
        return g.reshape(-1)

    def inequality_jacobian(self, x):
        states, t = self.layout.unpack(x, self.start)
        Z = self._z(states)
        rows = self.rows_per_block
        J = np.zeros((self.n * self.axes * rows, self.layout.size))
        for i in range(self.n):
            M = self.A0 + t[i] * self.A1 + t[i] ** 2 * self.A2
            dM = self.A1 + 2.0 * t[i] * self.A2
            K = np.vstack([M, -M, -self.E1 @ M, self.E1 @ M, -self.E2 @ M, self.E2 @ M])
            for ax in range(self.axes):
                dC = dM @ Z[i, ax]
                dt = np.concatenate([
                    dC, -dC,
                    self.v_max[ax] - self.E1 @ dC, self.v_max[ax] + self.E1 @ dC,
                    2.0 * t[i] * self.a_max[ax] - self.E2 @ dC, 2.0 * t[i] * self.a_max[ax] + self.E2 @ dC,
                ])
                r0 = (i * self.axes + ax) * rows
                block = J[r0:r0 + rows]
                if i > 0:
                    c = self.layout.waypoint_column(i, ax, 0)
                    block[:, c:c + 3] = K[:, :3]
                c = self.layout.waypoint_column(i + 1, ax, 0)
                block[:, c:c + 3] = K[:, 3:]
                block[:, self.layout.duration_column(i)] = dt
        return J

    def equality(self, x):
        states, _ = self.layout.unpack(x, self.start)
        return (states[-1] - self.goal).reshape(-1)

    def equality_jacobian(self, x):
        J = np.zeros((self.axes * 3, self.layout.size))
        c = self.layout.waypoint_column(self.n, 0, 0)
        J[:, c:c + self.axes * 3] = np.eye(self.axes * 3)
        return J

    def bounds(self, options):
        lb = np.full(self.layout.size, -np.inf)
        ub = np.full(self.layout.size, np.inf)
        for j in range(1, self.n + 1):
            lo = np.maximum(self.lower[j - 1], self.lower[j]) if j < self.n else self.lower[j - 1]
            hi = np.minimum(self.upper[j - 1], self.upper[j]) if j < self.n else self.upper[j - 1]
            for ax in range(self.axes):
                c = self.layout.waypoint_column(j, ax, 0)
                lb[c:c + 3] = [lo[ax], -self.v_max[ax], -self.a_max[ax]]
                ub[c:c + 3] = [hi[ax], self.v_max[ax], self.a_max[ax]]
        lb[self.layout.waypoint_vars:] = options.t_min
        return optimize.Bounds(lb, ub)


def _segment_feasible(problem, states, t, i, eps):
    sub = np.stack([states[i], states[i + 1]])
    C, _ = problem.coefficients(sub, np.array([t]))
    C = C[0]
    V = C @ problem.E1.T
    A = C @ problem.E2.T
    lo, hi = problem.lower[i][:, None], problem.upper[i][:, None]
    return (np.all(C >= lo - eps) and np.all(C <= hi + eps)
            and np.all(np.abs(V) <= t * problem.v_max[:, None] + eps)
            and np.all(np.abs(A) <= t ** 2 * problem.a_max[:, None] + eps))


def feasible_durations(problem, states, durations, options):
    """Grow each duration geometrically until the segment's control points
    satisfy every bound; None if some segment never does."""
    out = np.array(durations, dtype=float)
    for i in range(problem.n):
        t = max(out[i], options.t_min)
        for _ in range(options.init_max_steps):
            if _segment_feasible(problem, states, t, i, 0.0):
                break
            t *= options.init_growth
        else:
            return None
        out[i] = t
    return out


def _max_violation(problem, x):
    g = problem.inequality(x)
    h = problem.equality(x)
    return float(max(np.max(-g, initial=0.0), np.max(np.abs(h), initial=0.0)))


def solve(corridor, start, goal, limits, options=SolverOptions(), cancel=None):
    """Minimize total time subject to the hull constraints.

    Returns the optimizer's point when it is feasible and no slower than the
    feasible initialization, otherwise that initialization. `cancel` is a
    threading.Event checked at every objective evaluation.
    """
    if corridor is None or len(corridor) == 0:
        raise EmptyCorridorError('corridor has no cuboids')
    start = start if isinstance(start, Waypoint) else Waypoint.at_rest(start)
    goal = np.asarray(goal, dtype=float).reshape(-1)
    axes = corridor.lower.shape[1]
    eps = options.eps_feas

    if (np.any(np.abs(start.velocity) > limits.v_max[:axes] + eps)
            or np.any(np.abs(start.acceleration) > limits.a_max[:axes] + eps)):
        raise InfeasibleStartError('start velocity or acceleration exceeds the limits')
    if not corridor.contains(0, start.position, tol=eps):
        raise InfeasibleStartError(f'start {start.position.tolist()} lies outside the first cuboid')
    if not corridor.contains(len(corridor) - 1, goal, tol=eps):
        raise SolverFailureError(f'goal {goal.tolist()} lies outside the last cuboid')

    waypoints, durations = initialize(corridor, start, goal, limits, options)
    points = np.array([w.position for w in waypoints])
    segments = _subdivide(corridor, points, options.max_segment_length)
    problem = _Problem(segments, _state(start), np.stack([goal, np.zeros(axes), np.zeros(axes)], axis=1),
                       limits, options)

    states = np.zeros((problem.n + 1, axes, 3))
    states[0] = _state(start)
    states[1:, :, 0] = segments.positions[1:]
    states[-1, :, 0] = goal
    legs = np.linalg.norm(np.diff(segments.positions, axis=0), axis=1)
    init_durations = np.maximum(legs / np.linalg.norm(limits.v_max), options.t_min)
    feasible = feasible_durations(problem, states, init_durations, options)

    x0 = problem.layout.pack(states, feasible if feasible is not None else init_durations)
    n_ineq = problem.n * problem.axes * problem.rows_per_block

    def objective(x):
        if cancel is not None and cancel.is_set():
            raise SolveCancelledError('solve superseded')
        return float(np.sum(x[problem.layout.waypoint_vars:]))

    grad = np.zeros(problem.layout.size)
    grad[problem.layout.waypoint_vars:] = 1.0

    result = optimize.minimize(
        objective, x0, jac=lambda x: grad, method='SLSQP',
        bounds=problem.bounds(options),
        constraints=[
            {'type': 'ineq', 'fun': problem.inequality, 'jac': problem.inequality_jacobian},
            {'type': 'eq', 'fun': problem.equality, 'jac': problem.equality_jacobian},
        ],
        options={'maxiter': options.max_iter, 'ftol': options.ftol})

    def build(x, status, message):
        s, t = problem.layout.unpack(x, problem.start)
        if np.any(t < options.t_min * (1 - 1e-9)):
            return None
        traj = Trajectory(_to_waypoints(s), t, segments.lower, segments.upper, segments.box_index)
        traj.solve_report = SolveReport(
            status=status, iterations=int(result.get('nit', 0)),
            initial_time=float(np.sum(init_durations)),
            feasible_initial_time=float(np.sum(feasible)) if feasible is not None else math.inf,
            final_time=traj.total_time, message=message,
            n_variables=problem.layout.size, n_constraints=n_ineq + 3 * axes,
            max_violation=_max_violation(problem, x))
        return traj

    def acceptable(traj):
        return traj is not None and verify(traj, None, limits, samples=2).control_points_ok(eps)

    x = result.x.copy()
    # goal is pinned exactly; the solver only meets the equality to tolerance
    x[problem.layout.waypoint_column(problem.n, 0, 0):problem.layout.waypoint_vars] = problem.goal.reshape(-1)
    candidate = build(x, 'optimal' if result.success else 'stalled', str(result.message))
    fallback = build(x0, 'initialization', str(result.message)) if feasible is not None else None

    if acceptable(candidate) and (fallback is None or candidate.total_time <= fallback.total_time + 1e-12):
        return candidate
    if acceptable(fallback):
        return fallback
    raise SolverFailureError(f'no feasible trajectory found: {result.message}')
