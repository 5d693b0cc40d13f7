"""Ground-truth maps: procedural generators and hand-built fixtures."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import hydra
import noise
import numpy as np
from omegaconf import DictConfig, OmegaConf

from occupancy import Cell, OccupancyGrid, load_map
import utils


@dataclass(frozen=True)
class GroundTruthScene:
    """Immutable truth the simulated camera sees; never the planner's map."""
    grid: OccupancyGrid
    name: str
    start: np.ndarray
    goal: np.ndarray
    volume: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, 'start', np.asarray(self.start, dtype=float))
        object.__setattr__(self, 'goal', np.asarray(self.goal, dtype=float))
        if self.volume is None:
            object.__setattr__(self, 'volume', (self.grid.origin.copy(), self.grid.extent))

    def is_free(self, p):
        return self.grid.cell_at(p) not in (None, Cell.OCCUPIED)


def _dims(size, resolution):
    return tuple(max(1, int(round(s / resolution))) for s in size)


def _centers(dims, resolution, origin=(0.0, 0.0, 0.0)):
    axes = [origin[a] + (np.arange(dims[a]) + 0.5) * resolution for a in range(3)]
    return np.meshgrid(*axes, indexing='ij')


def _clear_ball(occupied, resolution, center, radius):
    x, y, z = _centers(occupied.shape, resolution)
    ball = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2 <= radius ** 2
    occupied[ball] = False
    return occupied


def _box(occupied, resolution, lo, hi):
    """Mark the voxels whose centers fall in the world box [lo, hi]."""
    x, y, z = _centers(occupied.shape, resolution)
    inside = ((x >= lo[0]) & (x <= hi[0]) & (y >= lo[1]) & (y <= hi[1])
              & (z >= lo[2]) & (z <= hi[2]))
    occupied[inside] = True
    return occupied


class SceneGenerator(object):
    """Base for procedural maps of `size` metres at `resolution`; start and
    goal sit at opposite corners with a cleared ball around each."""

    name = 'scene'

    def __init__(self, size=(8.0, 8.0, 1.0), resolution=0.25, clearance=0.75):
        self.size = tuple(float(s) for s in size)
        self.resolution = float(resolution)
        self.clearance = float(clearance)
        self.dims = _dims(self.size, self.resolution)

    def occupancy(self, rng, seed):
        raise NotImplementedError

    def generate(self, seed=0):
        rng = np.random.default_rng(seed)
        occupied = self.occupancy(rng, seed)
        mid_z = 0.5 * self.size[2]
        start = np.array([self.clearance, self.clearance, mid_z])
        goal = np.array([self.size[0] - self.clearance, self.size[1] - self.clearance, mid_z])
        for p in (start, goal):
            occupied = _clear_ball(occupied, self.resolution, p, self.clearance)
        grid = OccupancyGrid.from_occupied(occupied, resolution=self.resolution)
        return GroundTruthScene(grid, f'{self.name}_{seed}', start, goal)


class PerlinField(SceneGenerator):
    """Obstacles where 3D gradient noise exceeds a threshold."""

    name = 'perlin'

    def __init__(self, size=(8.0, 8.0, 1.0), resolution=0.25, clearance=0.75,
                 scale=2.0, threshold=0.12, octaves=2):
        super().__init__(size, resolution, clearance)
        self.scale = float(scale)
        self.threshold = float(threshold)
        self.octaves = int(octaves)

    def occupancy(self, rng, seed):
        x, y, z = _centers(self.dims, self.resolution)
        base = int(seed) % 1024
        values = np.array([noise.pnoise3(px / self.scale, py / self.scale, pz / self.scale,
                                         octaves=self.octaves, base=base)
                           for px, py, pz in zip(x.ravel(), y.ravel(), z.ravel())])
        return (values > self.threshold).reshape(self.dims)


class Forest(SceneGenerator):
    """Full-height pillars at uniform random positions."""

    name = 'forest'

    def __init__(self, size=(8.0, 8.0, 1.0), resolution=0.25, clearance=0.75,
                 density=0.08, radius=(0.15, 0.4)):
        super().__init__(size, resolution, clearance)
        self.density = float(density)
        self.radius = tuple(radius)

    def occupancy(self, rng, seed):
        x, y, _ = _centers(self.dims, self.resolution)
        occupied = np.zeros(self.dims, dtype=bool)
        count = int(round(self.density * self.size[0] * self.size[1]))
        for _ in range(count):
            cx, cy = rng.uniform(0, self.size[0]), rng.uniform(0, self.size[1])
            r = rng.uniform(*self.radius)
            occupied |= (x - cx) ** 2 + (y - cy) ** 2 <= r ** 2
        return occupied


class ParkingLot(SceneGenerator):
    """Rows of car-sized blocks separated by driving lanes."""

    name = 'parking'

    def __init__(self, size=(8.0, 8.0, 1.0), resolution=0.25, clearance=0.75,
                 block=(1.0, 0.5), lane=1.5, fill=0.7):
        super().__init__(size, resolution, clearance)
        self.block = tuple(block)
        self.lane = float(lane)
        self.fill = float(fill)

    def occupancy(self, rng, seed):
        occupied = np.zeros(self.dims, dtype=bool)
        bx, by = self.block
        height = min(self.size[2], 0.75 * self.size[2] + self.resolution)
        y = self.lane
        while y + by <= self.size[1] - self.lane:
            x = self.lane
            while x + bx <= self.size[0] - self.lane:
                if rng.random() < self.fill:
                    occupied = _box(occupied, self.resolution, (x, y, 0.0), (x + bx, y + by, height))
                x += bx + 0.5 * self.resolution
            y += by + self.lane
        return occupied


class Rooms(SceneGenerator):
    """A grid of rooms with one door per interior wall."""

    name = 'rooms'

    def __init__(self, size=(8.0, 8.0, 1.0), resolution=0.25, clearance=0.75,
                 rooms=(2, 2), wall=0.25, door=1.0):
        super().__init__(size, resolution, clearance)
        self.rooms = tuple(int(r) for r in rooms)
        self.wall = float(wall)
        self.door = float(door)

    def occupancy(self, rng, seed):
        occupied = np.zeros(self.dims, dtype=bool)
        top = self.size[2]
        for axis, count in enumerate(self.rooms):
            span = self.size[axis] / count
            other = 1 - axis
            cells_other = self.size[other] / self.rooms[other]
            for n in range(1, count):
                at = n * span
                lo, hi = [0.0, 0.0, 0.0], [0.0, 0.0, top]
                lo[axis], hi[axis] = at - 0.5 * self.wall, at + 0.5 * self.wall
                lo[other], hi[other] = 0.0, self.size[other]
                occupied = _box(occupied, self.resolution, lo, hi)
                for m in range(self.rooms[other]):
                    centre = (m + rng.uniform(0.3, 0.7)) * cells_other
                    door = np.zeros(self.dims, dtype=bool)
                    dlo, dhi = list(lo), list(hi)
                    dlo[other], dhi[other] = centre - 0.5 * self.door, centre + 0.5 * self.door
                    occupied &= ~_box(door, self.resolution, dlo, dhi)
        return occupied


def l_shape():
    """5x5x1 voxels of 1 m with the (+x, +y) 2x2 corner occupied."""
    occupied = np.zeros((5, 5, 1), dtype=bool)
    occupied[3:, 3:, :] = True
    grid = OccupancyGrid.from_occupied(occupied, resolution=1.0)
    return GroundTruthScene(grid, 'l_shape', (4.5, 0.5, 0.5), (0.5, 4.5, 0.5))


def hallway(length=10.0, width=2.0, height=1.0, resolution=0.25):
    """Obstacle-free straight box; the whole map is one cuboid."""
    grid = OccupancyGrid.filled((0.0, 0.0, 0.0), resolution, _dims((length, width, height), resolution),
                                Cell.FREE)
    mid = (0.5 * width, 0.5 * height)
    return GroundTruthScene(grid, 'hallway', (0.5, mid[0], mid[1]), (length - 0.5, mid[0], mid[1]))


def dead_end(resolution=0.25):
    """U-shaped pocket open toward -x; the goal sits behind its closed end."""
    size = (12.0, 8.0, 1.0)
    occupied = np.zeros(_dims(size, resolution), dtype=bool)
    occupied = _box(occupied, resolution, (3.0, 5.0, 0.0), (8.25, 5.25, 1.0))
    occupied = _box(occupied, resolution, (3.0, 2.75, 0.0), (8.25, 3.0, 1.0))
    occupied = _box(occupied, resolution, (8.0, 2.75, 0.0), (8.25, 5.25, 1.0))
    grid = OccupancyGrid.from_occupied(occupied, resolution=resolution)
    return GroundTruthScene(grid, 'dead_end', (6.5, 4.0, 0.5), (10.5, 4.0, 0.5))


def sealed_room(resolution=0.25):
    """Open floor with a closed box room whose inside can never be seen."""
    size = (8.0, 8.0, 1.0)
    occupied = np.zeros(_dims(size, resolution), dtype=bool)
    occupied = _box(occupied, resolution, (5.0, 5.0, 0.0), (7.5, 7.5, 1.0))
    inner = np.zeros_like(occupied)
    inner = _box(inner, resolution, (5.3, 5.3, 0.0), (7.2, 7.2, 1.0))
    occupied &= ~inner
    grid = OccupancyGrid.from_occupied(occupied, resolution=resolution)
    return GroundTruthScene(grid, 'sealed_room', (1.0, 1.0, 0.5), (3.0, 3.0, 0.5),
                            volume=((0.0, 0.0, 0.0), size))


FIXTURES = {
    'l_shape': l_shape,
    'hallway': hallway,
    'dead_end': dead_end,
    'sealed_room': sealed_room,
}


class Fixture(object):
    """Hydra-instantiable wrapper so fixtures and generators share generate()."""

    def __init__(self, name):
        if name not in FIXTURES:
            raise ValueError(f'unknown fixture: {name}')
        self.name = name

    def generate(self, seed=0):
        return FIXTURES[self.name]()


def make_generator(cfg):
    """Instantiate a generator from a `_target_` mapping."""
    if isinstance(cfg, dict):
        cfg = OmegaConf.create(cfg)
    if not isinstance(cfg, DictConfig) or '_target_' not in cfg:
        raise ValueError('generator config must declare _target_')
    return hydra.utils.instantiate(cfg)


def load_scenario(path):
    """Scenario JSON: map path or generator, start, goal, volume, seed and
    optional noise/limits/threshold overrides."""
    spec = utils.read_json(path)
    seed = int(spec.get('seed', 0))
    if 'map' in spec:
        # relative map paths are taken from the scenario's directory
        grid = load_map(os.path.join(os.path.dirname(os.path.abspath(path)), spec['map']))
        scene = GroundTruthScene(grid, spec.get('name', 'scenario'),
                                 spec.get('start', grid.origin + grid.resolution),
                                 spec.get('goal', grid.extent - grid.resolution))
    elif 'generator' in spec:
        scene = make_generator(spec['generator']).generate(seed)
    elif 'fixture' in spec:
        scene = FIXTURES[spec['fixture']]()
    else:
        raise ValueError(f'{path}: scenario needs one of map, generator or fixture')

    start = spec.get('start', scene.start)
    goal = spec.get('goal', scene.goal)
    volume = spec.get('volume', scene.volume)
    scene = GroundTruthScene(scene.grid, scene.name, start, goal, tuple(np.asarray(v, dtype=float) for v in volume))
    return scene, spec
