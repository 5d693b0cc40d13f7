"""Next-Best-View exploration over a viewed/unviewed voxel map."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from occupancy import Cell, traverse_rays
from utils import Pose

# rays traced per batch when testing visibility
_RAY_BATCH = 4096


class ExplorationMap(object):
    """Viewed flags over the declared exploration volume."""

    def __init__(self, origin, resolution, viewed):
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.resolution = float(resolution)
        self.viewed = np.array(viewed, dtype=bool, order='F', copy=True)
        self.viewed.flags.writeable = False

    @classmethod
    def from_volume(cls, lower, upper, resolution):
        lower = np.asarray(lower, dtype=float)
        dims = np.maximum(np.round((np.asarray(upper, dtype=float) - lower) / resolution), 1).astype(int)
        return cls(lower, resolution, np.zeros(tuple(dims), dtype=bool))

    @classmethod
    def like(cls, grid):
        return cls(grid.origin, grid.resolution, np.zeros(grid.dims, dtype=bool))

    @property
    def dims(self):
        return tuple(int(d) for d in self.viewed.shape)

    @property
    def lower(self):
        return self.origin

    @property
    def upper(self):
        return self.origin + np.asarray(self.dims) * self.resolution

    @property
    def viewed_count(self):
        return int(self.viewed.sum())

    @property
    def total(self):
        return int(self.viewed.size)

    @property
    def fraction(self):
        return self.viewed_count / self.total

    def centers(self, mask=None):
        """World centers of the voxels selected by mask (all by default), in F order."""
        if mask is None:
            mask = np.ones(self.dims, dtype=bool)
        idx = np.argwhere(mask)
        return self.origin + (idx + 0.5) * self.resolution, idx

    def with_viewed(self, viewed):
        return ExplorationMap(self.origin, self.resolution, viewed)


@dataclass(frozen=True)
class Viewpoint:
    position: np.ndarray
    yaw: float
    gain: int

    def __post_init__(self):
        if self.gain < 0:
            raise ValueError('viewpoint gain must be non-negative')


@dataclass(frozen=True)
class NBVOptions:
    samples: int = 300
    yaw_bins: int = 8
    max_range: float = 5.0
    # candidate altitude band (m); defaults to the volume's z extent
    z_band: Optional[tuple] = None
    zero_gain_rounds: int = 3
    max_rounds: int = 200

    def __post_init__(self):
        if self.samples < 1 or self.yaw_bins < 1:
            raise ValueError('nbv samples and yaw_bins must be positive')
        if not self.max_range > 0:
            raise ValueError('nbv max_range must be positive')


def _unoccluded(grid, position, targets):
    """Mask of targets whose segment from `position` crosses no Occupied
    voxel before the target's own voxel."""
    visible = np.zeros(targets.shape[0], dtype=bool)
    cells = grid.cells
    for lo in range(0, targets.shape[0], _RAY_BATCH):
        chunk = targets[lo:lo + _RAY_BATCH]
        starts = np.broadcast_to(position, chunk.shape)
        voxels, valid, _, _ = traverse_rays(grid, starts, chunk)
        occ = valid & (cells[voxels[..., 0], voxels[..., 1], voxels[..., 2]] == Cell.OCCUPIED)
        n_steps = valid.sum(axis=1)
        rows = np.flatnonzero(n_steps > 0)
        occ[rows, n_steps[rows] - 1] = False
        visible[lo:lo + _RAY_BATCH] = ~occ.any(axis=1)
    return visible


def _in_frustum(pose, intrinsics, points, max_range):
    cam = pose.inverse_apply(points)
    _, _, on_image = intrinsics.project(cam)
    return on_image & (np.linalg.norm(cam, axis=1) <= max_range)


def visible_unviewed(emap, pose, intrinsics, grid, max_range):
    """Boolean mask over the exploration volume of unviewed voxels seen from a
    camera-to-world pose."""
    centers, idx = emap.centers(~emap.viewed)
    seen = np.zeros(emap.dims, dtype=bool)
    if centers.shape[0] == 0:
        return seen
    in_view = _in_frustum(pose, intrinsics, centers, max_range)
    if not in_view.any():
        return seen
    sel = np.flatnonzero(in_view)
    sel = sel[_unoccluded(grid, pose.position, centers[sel])]
    seen[tuple(idx[sel].T)] = True
    return seen


def update_viewed(emap, pose, intrinsics, grid, max_range=5.0):
    seen = visible_unviewed(emap, pose, intrinsics, grid, max_range)
    if not seen.any():
        return emap
    return emap.with_viewed(emap.viewed | seen)


def score_position(emap, position, intrinsics, grid, max_range, yaw_bins):
    """Best (gain, yaw) over a sweep of yaw_bins headings at one position.

    Visibility is traced once for the union of all bins; each bin then counts
    its own frustum.
    """
    centers, _ = emap.centers(~emap.viewed)
    yaws = [2.0 * math.pi * b / yaw_bins for b in range(yaw_bins)]
    if centers.shape[0] == 0:
        return 0, yaws[0]
    frusta = np.stack([_in_frustum(Pose.from_yaw(position, yaw), intrinsics, centers, max_range)
                       for yaw in yaws])
    union = frusta.any(axis=0)
    if not union.any():
        return 0, yaws[0]
    sel = np.flatnonzero(union)
    visible = np.zeros(centers.shape[0], dtype=bool)
    visible[sel] = _unoccluded(grid, np.asarray(position, dtype=float), centers[sel])
    gains = (frusta & visible).sum(axis=1)
    best = int(np.argmax(gains))
    return int(gains[best]), yaws[best]


def sample_candidates(emap, rng, options=NBVOptions()):
    lower, upper = emap.lower.copy(), emap.upper.copy()
    if options.z_band is not None:
        lower[2] = max(lower[2], options.z_band[0])
        upper[2] = min(upper[2], options.z_band[1])
    return rng.uniform(lower, upper, size=(options.samples, 3))


def select_nbv(emap, grid, intrinsics, rng, options=NBVOptions(), candidates=None):
    """Highest-gain candidate; ties go to the lowest sample index.

    Candidates inside Occupied voxels score zero. `rng` is a numpy Generator
    or an integer seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if candidates is None:
        candidates = sample_candidates(emap, rng, options)
    best = Viewpoint(np.asarray(candidates[0], dtype=float), 0.0, 0)
    if emap.viewed_count == emap.total:
        return best
    idx, inside = grid.indices_of(candidates)
    blocked = np.zeros(len(candidates), dtype=bool)
    blocked[inside] = grid.cells[tuple(idx[inside].T)] == Cell.OCCUPIED
    for n, position in enumerate(candidates):
        if blocked[n]:
            continue
        gain, yaw = score_position(emap, position, intrinsics, grid, options.max_range, options.yaw_bins)
        if gain > best.gain:
            best = Viewpoint(np.asarray(position, dtype=float), yaw, gain)
    return best


@dataclass
class ExplorationReport:
    threshold: float
    coverage: List[tuple] = field(default_factory=list)
    goals: List[dict] = field(default_factory=list)
    rounds: int = 0
    replans: int = 0
    path_length: float = 0.0
    collisions: int = 0
    terminated_by: str = ''

    @property
    def final_coverage(self):
        return self.coverage[-1][1] if self.coverage else 0.0

    def to_json(self):
        return {
            'threshold': self.threshold,
            'final_coverage': self.final_coverage,
            'terminated_by': self.terminated_by,
            'rounds': self.rounds,
            'replans': self.replans,
            'path_length': self.path_length,
            'collisions': self.collisions,
            'goals': self.goals,
            'coverage': [{'time': t, 'coverage': c, 'path_length': p} for t, c, p in self.coverage],
        }

    def coverage_columns(self):
        return {
            'time': [c[0] for c in self.coverage],
            'coverage': [c[1] for c in self.coverage],
            'path_length': [c[2] for c in self.coverage],
        }


def run_exploration(sim, threshold, options=NBVOptions(), rng=None, logger=None):
    """360 degree scan, then NBV rounds until the viewed fraction reaches
    `threshold` or `zero_gain_rounds` consecutive rounds add no coverage.

    A round adds no coverage when its best candidate has zero gain or when the
    flight toward it leaves the viewed count unchanged (unreachable goal).
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f'exploration threshold must be in (0, 1], got {threshold}')
    if rng is None:
        rng = np.random.default_rng(sim.options.seed)
    report = ExplorationReport(threshold)

    def record():
        report.coverage.append((sim.time, sim.exploration.fraction, sim.path_length))

    sim.initial_scan()
    record()
    idle = 0
    while sim.exploration.fraction < threshold:
        if report.rounds >= options.max_rounds:
            report.terminated_by = 'max_rounds'
            break
        report.rounds += 1
        before = sim.exploration.viewed_count
        viewpoint = select_nbv(sim.exploration, sim.grid, sim.camera.intrinsics, rng, options)
        goal = {'round': report.rounds, 'position': viewpoint.position.tolist(),
                'yaw': viewpoint.yaw, 'gain': viewpoint.gain, 'reached': False}
        if viewpoint.gain > 0:
            flight = sim.fly_to(viewpoint.position, final_yaw=viewpoint.yaw)
            goal['reached'] = flight.reached
            goal['stop_reason'] = flight.stop_reason
            report.replans += flight.replans
        report.goals.append(goal)
        record()
        if logger is not None:
            logger.log('explore/round', report.rounds)
            logger.log('explore/coverage', sim.exploration.fraction)
            logger.log('explore/gain', viewpoint.gain)
            logger.log('explore/path_length', sim.path_length)
            logger.log('explore/replans', report.replans)
            logger.log('explore/sim_time', sim.time)
            logger.dump(report.rounds, ty='explore')

        idle = idle + 1 if sim.exploration.viewed_count == before else 0
        if idle >= options.zero_gain_rounds:
            report.terminated_by = 'no_gain'
            break
    else:
        report.terminated_by = 'threshold'

    report.path_length = sim.path_length
    report.collisions = sim.collisions
    return report
