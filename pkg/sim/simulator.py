"""Closed-loop desk-scale simulator.

A kinematic vehicle follows the active plan while a synthetic depth camera
observes the ground truth. Every perception period the relative and stereo
channels are fused, integrated into the online map and handed to the
supervisor, which continues, replans or stops.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import ndimage

from corridor_search import CorridorError, StartNotFreeError, select_corridors
from decomposition import LayerSpec, decompose
from depth_fusion import (CompletedDepth, DepthPair, FusionError, FusionOptions,
                          complete_depth, depth_to_points, fit_scale)
from exploration import ExplorationMap, update_viewed
from occupancy import Cell, OccupancyGrid, inflate, integrate_pointcloud
from planner import Limits, PlannerError, PlanTiming
from planner.solver import SolverOptions, solve
from planner.trajectory import Waypoint
from replan import ActivePlan, Decision, ReplanOptions, Supervisor
from sim.camera import CameraModel, NoiseModel, render_depth
from sim.vehicle import VehicleOptions, VehicleState, step
from utils import Pose


@dataclass(frozen=True)
class SimOptions:
    dt: float = 0.05
    perception_period: float = 0.25
    inflation: float = 0.25
    unknown_is_free: bool = True
    layer_heights: tuple = ()
    fuse_depth: bool = True
    scan_bins: int = 8
    goal_tolerance: float = 0.15
    max_flight_time: float = 120.0
    max_restarts: int = 5
    # goals inside inflated obstacles move to the nearest free voxel within this distance (m)
    goal_snap: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and self.perception_period >= self.dt):
            raise ValueError('sim dt must be positive and not exceed perception_period')
        if self.inflation < 0:
            raise ValueError('sim inflation must be non-negative')


@dataclass
class FlightResult:
    reached: bool
    stop_reason: str = ''
    replans: int = 0
    restarts: int = 0
    duration: float = 0.0
    path_length: float = 0.0


@dataclass
class PlanRecord:
    timing: PlanTiming
    cuboids: int
    corridor_length: int
    total_time: float


class Simulator(object):
    def __init__(self, scene, limits=None, solver_options=SolverOptions(), replan_options=ReplanOptions(),
                 camera=CameraModel(), options=SimOptions(), warp=None, noise=NoiseModel(),
                 vehicle_options=VehicleOptions(), decision_log=None):
        self.scene = scene
        self.truth = scene.grid
        self.limits = limits if limits is not None else Limits(2.0, 4.0)
        self.solver_options = solver_options
        self.replan_options = replan_options
        self.camera = camera
        self.options = options
        self.warp = warp
        self.noise = noise
        self.vehicle_options = vehicle_options
        self.decision_log = decision_log
        self.rng = np.random.default_rng(options.seed)

        self.grid = OccupancyGrid.filled(self.truth.origin, self.truth.resolution, self.truth.dims, Cell.UNKNOWN)
        lower, upper = scene.volume
        self.exploration = ExplorationMap.from_volume(lower, upper, self.truth.resolution)
        self.state = VehicleState.at_rest(scene.start)
        self.path_length = 0.0
        self.collisions = 0
        self.plans: List[PlanRecord] = []
        self.fusion_failures = 0

    @property
    def time(self):
        return self.state.time

    @property
    def pose(self):
        return Pose.from_yaw(self.state.position, self.state.yaw)

    def _layers(self, grid):
        if not self.options.layer_heights:
            return None
        return LayerSpec.from_heights(grid, self.options.layer_heights)

    def perceive(self):
        """Render, fuse and integrate one depth frame at the current pose."""
        pose = self.pose
        frame = render_depth(self.truth, pose, self.camera, self.warp, self.noise, self.rng)
        depth = CompletedDepth(frame.depth_mm, frame.depth_mm > 0)
        if self.options.fuse_depth:
            fusion = FusionOptions(max_depth_mm=1000.0 * self.camera.max_range)
            try:
                pair = DepthPair(frame.relative, frame.depth_mm)
                depth = complete_depth(pair, fit_scale(pair, fusion), fusion)
            except FusionError:
                self.fusion_failures += 1
        points = depth_to_points(depth, frame.intrinsics, pose)
        self.grid = integrate_pointcloud(self.grid, pose, points, max_range=self.camera.max_range)
        self.exploration = update_viewed(self.exploration, pose, frame.intrinsics, self.truth,
                                         self.camera.max_range)
        return frame

    def initial_scan(self):
        """Turn in place through scan_bins headings, perceiving at each."""
        turn = 2.0 * math.pi / self.options.scan_bins
        steps = max(1, int(math.ceil(turn / self.vehicle_options.yaw_limit)))
        for b in range(self.options.scan_bins):
            self.perceive()
            self.state = VehicleState(self.state.position, np.zeros(3), self.state.yaw + turn,
                                      self.state.time + steps * self.options.dt)

    def planning_grid(self, escape=0):
        """Inflated online map. Escape level 1 drops the inflation, level 2
        also frees the vehicle's own neighbourhood."""
        grid = inflate(self.grid, self.options.inflation) if escape == 0 else self.grid
        if escape >= 2:
            idx = grid.world_to_index(self.state.position)
            if idx is not None:
                cells = np.array(grid.cells, order='F')
                lo = [max(0, c - 1) for c in idx]
                cells[lo[0]:idx[0] + 2, lo[1]:idx[1] + 2, lo[2]:idx[2] + 2] = Cell.FREE
                grid = grid.with_cells(cells)
        return grid

    def snap_goal(self, grid, goal):
        """Nearest non-occupied voxel center to an occupied goal, within goal_snap."""
        idx = grid.world_to_index(goal)
        if idx is None or grid.cells[idx] != Cell.OCCUPIED:
            return np.asarray(goal, dtype=float)
        dist, nearest = ndimage.distance_transform_edt(grid.occupied, return_indices=True)
        if dist[idx] * grid.resolution > self.options.goal_snap:
            return np.asarray(goal, dtype=float)
        target = tuple(int(nearest[a][idx]) for a in range(3))
        return grid.index_to_world(target)

    def plan(self, goal, start_state=None, escape=0):
        """Decompose, search and solve from the current state; returns the
        trajectory and the planning grid used."""
        start = start_state if start_state is not None else Waypoint.at_rest(self.state.position)
        timing = PlanTiming()
        t0 = time.perf_counter()
        grid = self.planning_grid(escape)
        graph = decompose(grid, self._layers(grid), self.options.unknown_is_free)
        t1 = time.perf_counter()
        goal = self.snap_goal(grid, goal)
        corridor = select_corridors(graph, start.position, goal, self.replan_options.clearance,
                                    self.replan_options.admissible)
        t2 = time.perf_counter()
        traj = solve(corridor, start, goal, self.limits, self.solver_options)
        t3 = time.perf_counter()
        timing.decomposition_ms = 1000.0 * (t1 - t0)
        timing.search_ms = 1000.0 * (t2 - t1)
        timing.optimization_ms = 1000.0 * (t3 - t2)
        self.plans.append(PlanRecord(timing, len(graph.vertices), len(corridor), traj.total_time))
        return traj, grid, goal

    def _plan_with_escape(self, goal):
        last = None
        for escape in range(3):
            try:
                return self.plan(goal, escape=escape)
            except StartNotFreeError as e:
                last = e
        raise last

    def _advance(self, plan):
        previous = self.state.position
        trajectory = None if plan is None else plan.trajectory
        offset = 0.0 if plan is None else plan.start_time
        self.state = step(self.state, trajectory, self.options.dt, offset, self.vehicle_options, self.rng)
        self.path_length += float(np.linalg.norm(self.state.position - previous))
        if not self.scene.is_free(self.state.position):
            self.collisions += 1

    def _turn_to(self, yaw):
        while True:
            error = math.atan2(math.sin(yaw - self.state.yaw), math.cos(yaw - self.state.yaw))
            if abs(error) < 1e-9:
                break
            delta = max(-self.vehicle_options.yaw_limit, min(self.vehicle_options.yaw_limit, error))
            self.state = VehicleState(self.state.position, np.zeros(3), self.state.yaw + delta,
                                      self.state.time + self.options.dt)
        self.perceive()

    def fly_to(self, goal, final_yaw=None):
        """Plan to `goal` and fly under supervision until it is reached, the
        restart budget is spent or max_flight_time elapses."""
        goal = np.asarray(goal, dtype=float)
        started, length0 = self.time, self.path_length
        result = FlightResult(False)
        supervisor = Supervisor(goal, self.limits, self.solver_options, self.replan_options,
                                self.decision_log)
        per_perception = max(1, int(round(self.options.perception_period / self.options.dt)))

        def restart():
            try:
                traj, grid, snapped = self._plan_with_escape(goal)
            except (CorridorError, PlannerError) as e:
                result.stop_reason = type(e).__name__.replace('Error', '')
                return False
            supervisor.goal = snapped
            supervisor.update_map(grid, self._graph_provider(grid))
            supervisor.swap(ActivePlan(traj, self.time))
            return True

        if not restart():
            result.restarts = 1
        n = 0
        while self.time - started < self.options.max_flight_time:
            plan = supervisor.active()
            if plan is None:
                result.restarts += 1
                if result.restarts > self.options.max_restarts:
                    break
                self.perceive()
                if not restart():
                    self._advance(None)
                continue
            self._advance(plan)
            n += 1
            if plan.finished(self.time):
                if np.linalg.norm(self.state.position - supervisor.goal) <= self.options.goal_tolerance:
                    result.reached = True
                    result.stop_reason = ''
                    break
            if n % per_perception == 0:
                self.perceive()
                grid = self.planning_grid()
                supervisor.update_map(grid, self._graph_provider(grid))
                decision = supervisor.tick(self.time)
                if decision is not None and decision.decision == Decision.REPLAN:
                    result.replans += 1
                elif decision is not None and decision.decision == Decision.STOP:
                    result.stop_reason = decision.reason
        else:
            result.stop_reason = result.stop_reason or 'Timeout'

        if result.reached and final_yaw is not None:
            self._turn_to(final_yaw)
        result.duration = self.time - started
        result.path_length = self.path_length - length0
        return result

    def _graph_provider(self, grid):
        cache = {}

        def provide():
            if 'graph' not in cache:
                cache['graph'] = decompose(grid, self._layers(grid), self.options.unknown_is_free)
            return cache['graph']
        return provide
