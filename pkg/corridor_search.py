"""Hop-optimal corridor selection over a CuboidGraph."""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from decomposition import OutOfBoundsError, covering_cuboids


class CorridorError(Exception):
    """Base class for corridor search errors."""


class StartNotFreeError(CorridorError):
    pass


class GoalUnreachableError(CorridorError):
    pass


@dataclass(frozen=True)
class Corridor:
    """Cuboid indices in traversal order and their (possibly shrunk) world boxes."""
    indices: Tuple[int, ...]
    lower: np.ndarray
    upper: np.ndarray
    expanded: int = 0

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1, 3)
        upper = np.asarray(self.upper, dtype=float).reshape(-1, 3)
        if lower.shape != upper.shape or lower.shape[0] != len(self.indices):
            raise ValueError('corridor bounds must have one row per cuboid')
        object.__setattr__(self, 'indices', tuple(int(v) for v in self.indices))
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    def __len__(self):
        return len(self.indices)

    @property
    def f(self):
        return len(self.indices) - 1

    @property
    def hops(self):
        return len(self.indices) - 1

    @classmethod
    def from_boxes(cls, lower, upper):
        """Corridor over ad-hoc boxes, indexed 0..n-1."""
        lower = np.asarray(lower, dtype=float).reshape(-1, 3)
        return cls(tuple(range(lower.shape[0])), lower, upper)

    def contains(self, n, p, tol=1e-9):
        p = np.asarray(p, dtype=float)
        return bool(np.all(self.lower[n] - tol <= p) and np.all(p <= self.upper[n] + tol))

    def intersection(self, n):
        """Closed intersection box of cuboids n and n+1."""
        return (np.maximum(self.lower[n], self.lower[n + 1]),
                np.minimum(self.upper[n], self.upper[n + 1]))

    def to_json(self):
        return {
            'indices': list(self.indices),
            'lower': self.lower.tolist(),
            'upper': self.upper.tolist(),
        }


def _box_distance(lo, hi, p):
    """Euclidean distance from p to the nearest point of each box."""
    nearest = np.clip(p, lo, hi)
    return np.linalg.norm(nearest - p, axis=-1)


def _covering(graph, p, error):
    try:
        return covering_cuboids(graph, p)
    except OutOfBoundsError as e:
        raise error(str(e)) from e


def _make_corridor(graph, path, clearance, expanded):
    lower = graph.box_lo[list(path)] + clearance
    upper = graph.box_hi[list(path)] - clearance
    # a clearance wider than the box collapses it onto its center plane
    collapsed = lower > upper
    if np.any(collapsed):
        mid = 0.5 * (lower + upper)
        lower = np.where(collapsed, mid, lower)
        upper = np.where(collapsed, mid, upper)
    return Corridor(tuple(path), lower, upper, expanded)


def select_corridors(graph, start, goal, clearance=0.0, admissible=True):
    """Minimum-hop cuboid sequence from the cuboid holding `start` to any
    cuboid holding `goal`.

    Every edge costs one hop. The heuristic is the distance from the goal to
    the nearest point of a cuboid; with `admissible` it is divided by the grid
    diagonal so it never exceeds the remaining hop count. Without it the
    metric distance is used directly, which can return a longer corridor.
    """
    start = np.asarray(start, dtype=float).reshape(3)
    goal = np.asarray(goal, dtype=float).reshape(3)

    starts = _covering(graph, start, StartNotFreeError)
    if not starts:
        raise StartNotFreeError(f'start {start.tolist()} is not covered by any cuboid')
    goals = set(_covering(graph, goal, GoalUnreachableError))
    if not goals:
        raise GoalUnreachableError(f'goal {goal.tolist()} lies in occupied space')

    scale = graph.diagonal() if admissible else 1.0
    h = _box_distance(graph.box_lo, graph.box_hi, goal) / max(scale, 1e-12)
    h[list(goals)] = 0.0

    source = starts[0]
    g = {source: 0}
    parent = {source: None}
    open_heap = [(h[source], 0, source)]
    expanded = 0
    while open_heap:
        f, cost, v = heapq.heappop(open_heap)
        if cost > g.get(v, math.inf):
            continue
        if v in goals:
            path = []
            while v is not None:
                path.append(v)
                v = parent[v]
            return _make_corridor(graph, path[::-1], clearance, expanded)
        expanded += 1
        for w in graph.adjacency[v]:
            candidate = cost + 1
            if candidate < g.get(w, math.inf):
                g[w] = candidate
                parent[w] = v
                heapq.heappush(open_heap, (candidate + h[w], candidate, w))
    raise GoalUnreachableError(f'no corridor connects {start.tolist()} to {goal.tolist()}')


def hop_oracle_bfs(graph, start_vertex, goal_vertex):
    """Plain breadth-first hop count between two vertices."""
    if start_vertex == goal_vertex:
        return 0
    seen = {start_vertex}
    queue = deque([(start_vertex, 0)])
    while queue:
        v, hops = queue.popleft()
        for w in graph.adjacency[v]:
            if w == goal_vertex:
                return hops + 1
            if w not in seen:
                seen.add(w)
                queue.append((w, hops + 1))
    raise GoalUnreachableError(f'vertex {goal_vertex} is unreachable from {start_vertex}')
