"""Cover the free space of an occupancy grid with axis-aligned cuboids.

The cuboids are the vertices of a graph of convex sets; two cuboids are
connected when their closed world boxes intersect.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from occupancy import Cell


class OutOfBoundsError(ValueError):
    pass


# round-robin growth order: (axis, direction)
EXPANSION_ORDER = ((2, -1), (2, +1), (0, -1), (0, +1), (1, -1), (1, +1))


@dataclass(frozen=True)
class LayerSpec:
    """Contiguous, inclusive z-index bands partitioning the grid height."""
    bands: Tuple[Tuple[int, int], ...]

    @classmethod
    def single(cls, nz):
        return cls(((0, int(nz) - 1),))

    @classmethod
    def from_heights(cls, grid, heights):
        """Bands split at the given world heights (m)."""
        nz = grid.dims[2]
        cuts = sorted({int(round((h - grid.origin[2]) / grid.resolution)) for h in heights})
        cuts = [c for c in cuts if 0 < c < nz]
        edges = [0] + cuts + [nz]
        return cls(tuple((edges[n], edges[n + 1] - 1) for n in range(len(edges) - 1)))

    def validate(self, nz):
        if not self.bands:
            raise ValueError('layer spec must contain at least one band')
        expected = 0
        for lo, hi in self.bands:
            if lo != expected or hi < lo:
                raise ValueError(f'layer bands must be contiguous and ordered, got {self.bands}')
            expected = hi + 1
        if expected != nz:
            raise ValueError(f'layer bands cover {expected} of {nz} z-slices')

    def layer_of(self, k):
        for n, (lo, hi) in enumerate(self.bands):
            if lo <= k <= hi:
                return n
        raise ValueError(f'z index {k} is not in any layer')


@dataclass(frozen=True)
class Cuboid:
    lo: Tuple[int, int, int]
    hi: Tuple[int, int, int]
    layer: int = 0

    def world_bounds(self, origin, resolution):
        origin = np.asarray(origin, dtype=float)
        return (origin + np.asarray(self.lo) * resolution,
                origin + (np.asarray(self.hi) + 1) * resolution)

    def contains_index(self, index):
        return all(self.lo[a] <= index[a] <= self.hi[a] for a in range(3))

    @property
    def volume(self):
        return int(np.prod(np.asarray(self.hi) - np.asarray(self.lo) + 1))


@dataclass(eq=False)
class CuboidGraph:
    vertices: List[Cuboid]
    edges: List[Tuple[int, int]]
    intersections: np.ndarray
    coverer: np.ndarray
    origin: np.ndarray
    resolution: float
    free_voxels: int = -1
    box_lo: np.ndarray = field(init=False)
    box_hi: np.ndarray = field(init=False)
    adjacency: List[List[int]] = field(init=False)

    def __post_init__(self):
        n = len(self.vertices)
        lo = np.array([c.lo for c in self.vertices], dtype=float).reshape(n, 3)
        hi = np.array([c.hi for c in self.vertices], dtype=float).reshape(n, 3)
        self.box_lo = self.origin + lo * self.resolution
        self.box_hi = self.origin + (hi + 1) * self.resolution
        self.adjacency = [[] for _ in range(n)]
        for a, b in self.edges:
            self.adjacency[a].append(b)
            self.adjacency[b].append(a)
        for neighbors in self.adjacency:
            neighbors.sort()

    @property
    def dims(self):
        return tuple(int(d) for d in self.coverer.shape)

    def neighbors(self, v):
        return self.adjacency[v]

    def world_box(self, v):
        return self.box_lo[v], self.box_hi[v]

    def diagonal(self):
        return float(np.linalg.norm(np.asarray(self.dims) * self.resolution))

    def stats(self):
        covered = int((self.coverer >= 0).sum())
        free = covered if self.free_voxels < 0 else self.free_voxels
        return {
            'cuboids': len(self.vertices),
            'edges': len(self.edges),
            'free_voxels': free,
            'coverage_pct': 100.0 if free == 0 else 100.0 * covered / free,
        }

    def to_json(self):
        return {
            'origin': self.origin.tolist(),
            'resolution': self.resolution,
            'dims': list(self.dims),
            'vertices': [{'lo': self.box_lo[n].tolist(), 'hi': self.box_hi[n].tolist(), 'layer': c.layer}
                         for n, c in enumerate(self.vertices)],
            'edges': [list(e) for e in self.edges],
        }

    def __eq__(self, other):
        if not isinstance(other, CuboidGraph):
            return NotImplemented
        return (self.vertices == other.vertices and self.edges == other.edges
                and np.array_equal(self.coverer, other.coverer))


def _grow(blocked, lo, hi, band):
    """Grow [lo, hi] one slab at a time in EXPANSION_ORDER until every
    direction is stopped by a blocked voxel, the grid or the layer."""
    dims = blocked.shape
    limits = [(0, dims[0] - 1), (0, dims[1] - 1), band]
    stopped = [False] * len(EXPANSION_ORDER)
    while not all(stopped):
        for n, (axis, direction) in enumerate(EXPANSION_ORDER):
            if stopped[n]:
                continue
            coord = lo[axis] - 1 if direction < 0 else hi[axis] + 1
            if coord < limits[axis][0] or coord > limits[axis][1]:
                stopped[n] = True
                continue
            slab = [slice(lo[a], hi[a] + 1) for a in range(3)]
            slab[axis] = coord
            if blocked[tuple(slab)].any():
                stopped[n] = True
                continue
            if direction < 0:
                lo[axis] = coord
            else:
                hi[axis] = coord
    return lo, hi


def _edges(vertices, origin, resolution):
    n = len(vertices)
    lo = np.array([c.lo for c in vertices], dtype=np.int64).reshape(n, 3)
    hi = np.array([c.hi for c in vertices], dtype=np.int64).reshape(n, 3) + 1
    edges = []
    boxes = []
    for a in range(n - 1):
        # closed boxes [lo, hi+1] intersect iff they overlap or touch on every axis
        touch = np.all((lo[a] <= hi[a + 1:]) & (lo[a + 1:] <= hi[a]), axis=1)
        for b in np.flatnonzero(touch) + a + 1:
            edges.append((a, int(b)))
            boxes.append((np.maximum(lo[a], lo[b]), np.minimum(hi[a], hi[b])))
    if boxes:
        intersections = origin + np.array(boxes, dtype=float) * resolution
    else:
        intersections = np.zeros((0, 2, 3))
    return edges, intersections


def decompose(grid, layers=None, unknown_is_free=True):
    """Cover every non-blocked voxel with maximal cuboids and connect the
    intersecting ones.

    Seeds are taken in lexicographic (k, j, i) order among uncovered voxels;
    growth may overlap earlier cuboids, only blocked voxels stop it.
    """
    nx, ny, nz = grid.dims
    if layers is None:
        layers = LayerSpec.single(nz)
    layers.validate(nz)

    blocked = grid.cells == Cell.OCCUPIED
    if not unknown_is_free:
        blocked |= grid.cells == Cell.UNKNOWN
    blocked = np.asfortranarray(blocked)

    uncovered = np.asfortranarray(~blocked)
    flat = uncovered.reshape(-1, order='F')
    coverer = np.full(grid.dims, -1, dtype=np.int64, order='F')

    vertices = []
    pointer = 0
    while pointer < flat.size:
        offset = int(flat[pointer:].argmax())
        if not flat[pointer + offset]:
            break
        pointer += offset
        i, j, k = np.unravel_index(pointer, grid.dims, order='F')
        layer = layers.layer_of(int(k))
        lo, hi = _grow(blocked, [int(i), int(j), int(k)], [int(i), int(j), int(k)], layers.bands[layer])

        box = tuple(slice(lo[a], hi[a] + 1) for a in range(3))
        uncovered[box] = False
        region = coverer[box]
        region[region < 0] = len(vertices)
        vertices.append(Cuboid(tuple(lo), tuple(hi), layer))

    edges, intersections = _edges(vertices, grid.origin, grid.resolution)
    return CuboidGraph(vertices, edges, intersections, coverer,
                       np.array(grid.origin, dtype=float), grid.resolution,
                       int((~blocked).sum()))


def covering_cuboids(graph, p):
    """Indices of all cuboids whose closed box contains p; empty inside obstacles."""
    p = np.asarray(p, dtype=float).reshape(3)
    idx = np.floor((p - graph.origin) / graph.resolution).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= np.asarray(graph.dims)):
        raise OutOfBoundsError(f'position {p.tolist()} is outside the grid')
    if graph.coverer[tuple(idx)] < 0:
        return []
    eps = 1e-9 * graph.resolution
    inside = np.all((graph.box_lo - eps <= p) & (p <= graph.box_hi + eps), axis=1)
    return [int(v) for v in np.flatnonzero(inside)]
