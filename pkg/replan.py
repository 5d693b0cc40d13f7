"""Continue / replan / stop supervision of the active trajectory and the yaw
reference that follows it."""
from __future__ import annotations

import enum
import math
import threading
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from corridor_search import CorridorError, select_corridors
from occupancy import Cell
from planner import PlannerError, SolveCancelledError
from planner.solver import SolverOptions, solve
from planner.trajectory import Trajectory, verify
from utils import wrap_angle


class Decision(enum.Enum):
    CONTINUE = 'continue'
    REPLAN = 'replan'
    STOP = 'stop'


@dataclass(frozen=True)
class PlanDecision:
    decision: Decision
    horizon: tuple
    first_collision: Optional[float] = None
    trajectory: Optional[Trajectory] = None
    reason: str = ''
    latency_ms: float = 0.0


@dataclass(frozen=True)
class YawCommand:
    yaw: float


@dataclass(frozen=True)
class ReplanOptions:
    horizon: float = 10.0
    dt: float = 0.05
    rate_hz: float = 20.0
    yaw_limit: float = 0.5
    yaw_deadband: float = 0.1
    clearance: float = 0.0
    admissible: bool = True

    def __post_init__(self):
        if not (self.horizon > 0 and self.dt > 0 and self.rate_hz > 0):
            raise ValueError('replan horizon, dt and rate_hz must be positive')
        if not self.yaw_limit > 0:
            raise ValueError('replan yaw_limit must be positive')


def first_collision(traj, t_now, grid, horizon=10.0, dt=0.05):
    """Earliest sampled time in [t_now, t_now + horizon], truncated at the end
    of the trajectory, whose position lies in an Occupied voxel."""
    t_end = min(t_now + horizon, traj.total_time)
    if t_end < t_now:
        return None
    times = np.arange(t_now, t_end, dt)
    times = np.append(times, t_end)
    pos, _, _ = traj.sample(times)
    idx, inside = grid.indices_of(pos)
    hit = np.zeros(times.size, dtype=bool)
    if inside.any():
        cells = grid.cells[idx[inside, 0], idx[inside, 1], idx[inside, 2]]
        hit[inside] = cells == Cell.OCCUPIED
    if not hit.any():
        return None
    return float(times[np.argmax(hit)])


def plan_from(state, grid_graph, goal, limits, solver_options=SolverOptions(), options=ReplanOptions(),
              cancel=None):
    """Corridor search plus trajectory solve from a waypoint state."""
    corridor = select_corridors(grid_graph, state.position, goal,
                                clearance=options.clearance, admissible=options.admissible)
    return corridor, solve(corridor, state, goal, limits, solver_options, cancel=cancel)


def check_and_replan(traj, t_now, grid, graph, goal, limits, solver_options=SolverOptions(),
                     options=ReplanOptions(), cancel=None):
    """One supervision step at trajectory time t_now.

    `graph` may be a CuboidGraph or a callable returning one, so the
    decomposition is only paid for when a replan is needed.
    """
    horizon = (float(t_now), float(min(t_now + options.horizon, traj.total_time)))
    hit = first_collision(traj, t_now, grid, options.horizon, options.dt)
    if hit is None:
        return PlanDecision(Decision.CONTINUE, horizon)

    started = time.perf_counter()
    state = traj.state_at(t_now)
    try:
        snapshot = graph() if callable(graph) else graph
        corridor, new = plan_from(state, snapshot, goal, limits, solver_options, options, cancel)
    except SolveCancelledError:
        raise
    except (CorridorError, PlannerError) as e:
        latency = 1000.0 * (time.perf_counter() - started)
        return PlanDecision(Decision.STOP, horizon, hit, reason=type(e).__name__.replace('Error', ''),
                            latency_ms=latency)
    latency = 1000.0 * (time.perf_counter() - started)
    if not verify(new, corridor, limits).ok(solver_options.eps_feas):
        return PlanDecision(Decision.STOP, horizon, hit, reason='VerifyFailed', latency_ms=latency)
    return PlanDecision(Decision.REPLAN, horizon, hit, trajectory=new, latency_ms=latency)


def yaw_reference(yaw, velocity, yaw_limit=0.5, deadband=0.1):
    """Desired yaw: hold below the speed deadband, otherwise turn toward the
    horizontal velocity by at most yaw_limit."""
    if not yaw_limit > 0:
        raise ValueError('yaw_limit must be positive')
    vx, vy = float(velocity[0]), float(velocity[1])
    if abs(vx) < deadband and abs(vy) < deadband:
        return YawCommand(wrap_angle(yaw))
    heading = math.atan2(vy, vx)
    error = wrap_angle(heading - yaw)
    if error > yaw_limit:
        return YawCommand(wrap_angle(yaw + yaw_limit))
    if error < -yaw_limit:
        return YawCommand(wrap_angle(yaw - yaw_limit))
    return YawCommand(wrap_angle(heading))


@dataclass(frozen=True)
class ActivePlan:
    trajectory: Trajectory
    start_time: float

    def local_time(self, t):
        return min(max(t - self.start_time, 0.0), self.trajectory.total_time)

    def reference(self, t):
        return self.trajectory.state_at(self.local_time(t))

    def finished(self, t):
        return t - self.start_time >= self.trajectory.total_time


class Supervisor(object):
    """Fixed-rate supervisor owning the active plan.

    Map snapshots are handed in with update_map; the active plan is swapped
    under a lock so samplers on other threads never see a half-written plan.
    A map update cancels any solve still running on the previous snapshot.
    """

    def __init__(self, goal, limits, solver_options=SolverOptions(), options=ReplanOptions(),
                 decision_log=None):
        self.goal = np.asarray(goal, dtype=float)
        self.limits = limits
        self.solver_options = solver_options
        self.options = options
        self.decision_log = decision_log
        self._lock = threading.Lock()
        self._plan = None
        self._grid = None
        self._graph = None
        self._cancel = threading.Event()
        self._thread = None
        self._stop = threading.Event()
        self.stopped_reason = None

    def active(self):
        with self._lock:
            return self._plan

    def swap(self, plan):
        with self._lock:
            self._plan = plan

    def update_map(self, grid, graph):
        with self._lock:
            self._cancel.set()
            self._grid = grid
            self._graph = graph

    def reference(self, t):
        plan = self.active()
        return None if plan is None else plan.reference(t)

    def tick(self, t_now):
        # each solve gets its own event, so a map update after the snapshot cannot be lost
        with self._lock:
            plan, grid, graph = self._plan, self._grid, self._graph
            cancel = self._cancel = threading.Event()
        if plan is None or grid is None:
            return None
        try:
            result = check_and_replan(plan.trajectory, plan.local_time(t_now), grid, graph, self.goal,
                                      self.limits, self.solver_options, self.options, cancel=cancel)
        except SolveCancelledError:
            return None
        with self._lock:
            if cancel.is_set():
                return None
            if result.decision == Decision.REPLAN:
                self._plan = ActivePlan(result.trajectory, t_now)
            elif result.decision == Decision.STOP:
                self.stopped_reason = result.reason
                self._plan = None
        if self.decision_log is not None:
            self.decision_log.write(result.decision.value, result.first_collision,
                                    result.latency_ms if result.decision != Decision.CONTINUE else None,
                                    timestamp=t_now, reason=result.reason)
        return result

    def _loop(self, clock):
        period = 1.0 / self.options.rate_hz
        while not self._stop.is_set():
            started = time.perf_counter()
            self.tick(clock())
            self._stop.wait(max(0.0, period - (time.perf_counter() - started)))

    def start(self, clock=time.monotonic):
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, args=(clock,), daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        with self._lock:
            self._cancel.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
