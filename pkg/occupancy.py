"""Tri-state voxel occupancy grid shared by the mapper and the planners."""
from __future__ import annotations

import math
import struct
from enum import IntEnum
from typing import NamedTuple, Optional

import numpy as np
from scipy import ndimage


class Cell(IntEnum):
    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


class GridIndex(NamedTuple):
    i: int
    j: int
    k: int


class MapFormatError(Exception):
    """Base class for map file errors."""


class MalformedHeaderError(MapFormatError):
    pass


class DimensionMismatchError(MapFormatError):
    pass


class MapReadError(MapFormatError):
    pass


MAGIC = b'OGRD'
VERSION = 1
# magic, version, origin x3, resolution, dims x3
_HEADER = struct.Struct('<4sI3dd3I')

# endpoint voxels are looked up slightly past the measured surface
_ENDPOINT_NUDGE = 1e-4


class OccupancyGrid(object):
    """Immutable snapshot of a voxel map.

    Cells are stored as a read-only uint8 array indexed [i, j, k] in
    Fortran order, so the flat layout is row-major x-fastest.
    """

    def __init__(self, origin, resolution, cells):
        resolution = float(resolution)
        if not resolution > 0.0:
            raise ValueError(f'resolution must be positive, got {resolution}')
        cells = np.array(cells, dtype=np.uint8, order='F', copy=True)
        if cells.ndim != 3 or min(cells.shape) < 1:
            raise ValueError(f'cells must be a non-empty 3D array, got shape {cells.shape}')
        if cells.max(initial=0) > Cell.UNKNOWN:
            raise ValueError('cells contain values outside {Free, Occupied, Unknown}')
        cells.flags.writeable = False
        self.origin = np.asarray(origin, dtype=float).reshape(3).copy()
        self.origin.flags.writeable = False
        self.resolution = resolution
        self.cells = cells

    @classmethod
    def filled(cls, origin, resolution, dims, value=Cell.UNKNOWN):
        cells = np.full(tuple(int(d) for d in dims), int(value), dtype=np.uint8, order='F')
        return cls(origin, resolution, cells)

    @classmethod
    def from_occupied(cls, occupied, origin=(0.0, 0.0, 0.0), resolution=1.0, background=Cell.FREE):
        occupied = np.asarray(occupied, dtype=bool)
        cells = np.where(occupied, np.uint8(Cell.OCCUPIED), np.uint8(background))
        return cls(origin, resolution, cells)

    @property
    def dims(self):
        return tuple(int(d) for d in self.cells.shape)

    @property
    def extent(self):
        """World position of the far corner."""
        return self.origin + np.asarray(self.dims) * self.resolution

    @property
    def occupied(self):
        return self.cells == Cell.OCCUPIED

    @property
    def unknown(self):
        return self.cells == Cell.UNKNOWN

    def with_cells(self, cells):
        return OccupancyGrid(self.origin, self.resolution, cells)

    def same_geometry(self, other):
        return (self.dims == other.dims and self.resolution == other.resolution
                and np.array_equal(self.origin, other.origin))

    def world_to_index(self, p) -> Optional[GridIndex]:
        return world_to_index(self, p)

    def index_to_world(self, index):
        """Center of voxel `index`."""
        return self.origin + (np.asarray(index, dtype=float) + 0.5) * self.resolution

    def indices_of(self, points):
        """Voxel indices of world points, shape (N, 3), plus an in-bounds mask."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.floor((points - self.origin) / self.resolution).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=1)
        return idx, inside

    def cell_at(self, p):
        index = self.world_to_index(p)
        if index is None:
            return None
        return Cell(int(self.cells[index]))

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.same_geometry(other) and np.array_equal(self.cells, other.cells)

    def __repr__(self):
        return f'OccupancyGrid(origin={self.origin.tolist()}, resolution={self.resolution}, dims={self.dims})'


def world_to_index(grid, p) -> Optional[GridIndex]:
    p = np.asarray(p, dtype=float).reshape(3)
    idx = np.floor((p - grid.origin) / grid.resolution)
    if np.any(idx < 0) or np.any(idx >= np.asarray(grid.dims)):
        return None
    return GridIndex(int(idx[0]), int(idx[1]), int(idx[2]))


def inflation_stencil(radius, resolution):
    """Boolean ball of voxel offsets whose centers lie within `radius`."""
    r = int(math.floor(radius / resolution + 1e-9))
    offsets = np.arange(-r, r + 1)
    di, dj, dk = np.meshgrid(offsets, offsets, offsets, indexing='ij')
    dist = np.sqrt(di ** 2 + dj ** 2 + dk ** 2) * resolution
    return dist <= radius + 1e-9


def inflate(grid, radius):
    if radius < 0:
        raise ValueError(f'inflation radius must be non-negative, got {radius}')
    stencil = inflation_stencil(radius, grid.resolution)
    if stencil.shape[0] == 1 or not grid.occupied.any():
        return grid
    grown = ndimage.binary_dilation(grid.occupied, structure=stencil)
    cells = np.where(grown, np.uint8(Cell.OCCUPIED), grid.cells)
    return grid.with_cells(cells)


def _clip_to_box(a, d, dims):
    """Parametric [t_lo, t_hi] of segments a + t d (t in [0, 1]) inside [0, dims)."""
    n = a.shape[0]
    t_lo = np.zeros(n)
    t_hi = np.ones(n)
    hit = np.ones(n, dtype=bool)
    for axis in range(3):
        da = d[:, axis]
        aa = a[:, axis]
        flat = da == 0.0
        hit &= ~flat | ((aa >= 0.0) & (aa < dims[axis]))
        with np.errstate(divide='ignore', invalid='ignore'):
            t0 = (0.0 - aa) / da
            t1 = (dims[axis] - aa) / da
        near = np.where(flat, -np.inf, np.minimum(t0, t1))
        far = np.where(flat, np.inf, np.maximum(t0, t1))
        t_lo = np.maximum(t_lo, near)
        t_hi = np.minimum(t_hi, far)
    hit &= t_lo <= t_hi
    return t_lo, t_hi, hit


def traverse_rays(grid, starts, ends):
    """3D DDA over many segments at once.

    Returns (voxels, valid, t_entry, end_inside):
      voxels (N, S, 3) int64 voxel indices in traversal order,
      valid (N, S) mask of the used steps,
      t_entry (N, S) segment parameter in [0, 1] where each voxel is entered,
      end_inside (N,) whether the segment end lies inside the grid.
    Segments are clipped to the grid box first.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    dims = np.asarray(grid.dims)
    a = (starts - grid.origin) / grid.resolution
    b = (ends - grid.origin) / grid.resolution
    d = b - a
    n = a.shape[0]

    end_inside = np.all((b >= 0) & (b < dims), axis=1)
    t_lo, t_hi, hit = _clip_to_box(a, d, dims)

    upper = dims - 1
    first = np.clip(np.floor(a + t_lo[:, None] * d), 0, upper).astype(np.int64)
    last = np.clip(np.floor(a + t_hi[:, None] * d), 0, upper).astype(np.int64)
    step = np.sign(d).astype(np.int64)
    # a voxel never moves away from its final coordinate
    step = np.where(step * (last - first) < 0, 0, step)

    with np.errstate(divide='ignore', invalid='ignore'):
        boundary = first + (step > 0)
        t_max = np.where(step != 0, (boundary - a) / d, np.inf)
        t_delta = np.where(step != 0, 1.0 / np.abs(d), np.inf)

    count = np.where(hit, np.abs(last - first).sum(axis=1) + 1, 0)
    steps = int(count.max(initial=0))

    voxels = np.zeros((n, max(steps, 1), 3), dtype=np.int64)
    valid = np.zeros((n, max(steps, 1)), dtype=bool)
    t_entry = np.zeros((n, max(steps, 1)))

    current = first.copy()
    entry = t_lo.copy()
    rows = np.arange(n)
    for s in range(steps):
        active = s < count
        voxels[active, s] = current[active]
        valid[active, s] = True
        t_entry[active, s] = entry[active]

        done_axis = current == last
        tm = np.where(done_axis, np.inf, t_max)
        tx, ty, tz = tm[:, 0], tm[:, 1], tm[:, 2]
        choose_x = (tx < ty) & (tx < tz)
        choose_y = ~(tx < ty) & (ty < tz)
        axis = np.where(choose_x, 0, np.where(choose_y, 1, 2))
        moving = active & np.isfinite(tm[rows, axis])
        ax = axis[moving]
        mv = rows[moving]
        entry[mv] = tm[mv, ax]
        current[mv, ax] += step[mv, ax]
        t_max[mv, ax] += t_delta[mv, ax]

    return voxels, valid, np.clip(t_entry, 0.0, 1.0), end_inside


def traverse(grid, p0, p1):
    """Voxels crossed by the segment p0 -> p1, in order."""
    voxels, valid, _, _ = traverse_rays(grid, [p0], [p1])
    return [GridIndex(*map(int, v)) for v in voxels[0][valid[0]]]


def integrate_pointcloud(grid, sensor_pose, points, max_range=None):
    """Carve free space along each sensor ray and mark the endpoints occupied.

    Occupied always wins: an Occupied voxel is never turned Free. Points
    outside the grid only carve up to the grid boundary; points beyond
    `max_range` (m) only carve up to that range.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if points.shape[0] == 0:
        return grid
    origin = getattr(sensor_pose, 'position', sensor_pose)
    origin = np.asarray(origin, dtype=float).reshape(3)

    direction = points - origin
    length = np.linalg.norm(direction, axis=1, keepdims=True)
    unit = np.divide(direction, length, out=np.zeros_like(direction), where=length > 0)
    ends = points + unit * (_ENDPOINT_NUDGE * grid.resolution)
    far = np.zeros(points.shape[0], dtype=bool)
    if max_range is not None:
        far = length[:, 0] > max_range
        ends[far] = origin + unit[far] * max_range
    starts = np.broadcast_to(origin, ends.shape)

    voxels, valid, _, end_inside = traverse_rays(grid, starts, ends)
    end_inside = end_inside & ~far
    cells = np.array(grid.cells, order='F', copy=True)

    n_steps = valid.sum(axis=1)
    last = np.where(n_steps > 0, n_steps - 1, 0)
    rows = np.arange(points.shape[0])

    carve = valid.copy()
    # the endpoint voxel of an in-grid point is not carved
    hits = end_inside & (n_steps > 0)
    carve[rows[hits], last[hits]] = False
    free_idx = voxels[carve]
    if free_idx.size:
        i, j, k = free_idx.T
        was = cells[i, j, k]
        cells[i, j, k] = np.where(was == Cell.OCCUPIED, was, np.uint8(Cell.FREE))

    end_idx = voxels[rows[hits], last[hits]]
    if end_idx.size:
        i, j, k = end_idx.T
        cells[i, j, k] = Cell.OCCUPIED

    return grid.with_cells(cells)


def save_map(grid, path):
    header = _HEADER.pack(MAGIC, VERSION, *grid.origin.tolist(), grid.resolution, *grid.dims)
    payload = np.asarray(grid.cells, dtype=np.uint8).ravel(order='F').tobytes()
    with open(path, 'wb') as f:
        f.write(header)
        f.write(payload)


def load_map(path):
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise MapReadError(f'cannot read map file {path}: {e}') from e

    if len(data) < _HEADER.size:
        raise MalformedHeaderError(f'{path}: file shorter than the map header')
    magic, version, ox, oy, oz, resolution, nx, ny, nz = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedHeaderError(f'{path}: bad magic {magic!r}')
    if version != VERSION:
        raise MalformedHeaderError(f'{path}: unsupported version {version}')
    if not resolution > 0.0 or min(nx, ny, nz) == 0:
        raise MalformedHeaderError(f'{path}: invalid resolution or dimensions')

    payload = data[_HEADER.size:]
    expected = nx * ny * nz
    if len(payload) != expected:
        raise DimensionMismatchError(f'{path}: payload has {len(payload)} cells, header says {expected}')
    cells = np.frombuffer(payload, dtype=np.uint8)
    if cells.max(initial=0) > Cell.UNKNOWN:
        raise MapFormatError(f'{path}: cell values outside {{0, 1, 2}}')
    cells = cells.reshape((nx, ny, nz), order='F')
    return OccupancyGrid((ox, oy, oz), resolution, cells)
