import numpy as np
import pytest

from occupancy import Cell, OccupancyGrid
from planner import Limits
from sim.scenes import l_shape


def random_grid(seed, dims=(16, 16, 4), density=0.2, resolution=1.0, unknown=0.0):
    rng = np.random.default_rng(seed)
    cells = np.full(dims, Cell.FREE, dtype=np.uint8)
    draw = rng.random(dims)
    cells[draw < density] = Cell.OCCUPIED
    cells[(draw >= density) & (draw < density + unknown)] = Cell.UNKNOWN
    return OccupancyGrid((0.0, 0.0, 0.0), resolution, cells)


def blocky_grid(seed, dims=(32, 32, 4), boxes=12, resolution=1.0):
    """Free space with random axis-aligned obstacles, which keeps the cuboid
    count small enough for exhaustive checks."""
    rng = np.random.default_rng(seed)
    occupied = np.zeros(dims, dtype=bool)
    for _ in range(boxes):
        lo = [int(rng.integers(0, d)) for d in dims]
        size = [int(rng.integers(1, max(2, d // 4))) for d in dims]
        occupied[lo[0]:lo[0] + size[0], lo[1]:lo[1] + size[1], lo[2]:lo[2] + size[2]] = True
    return OccupancyGrid.from_occupied(occupied, resolution=resolution)


@pytest.fixture
def limits():
    return Limits(2.0, 4.0)


@pytest.fixture
def l_grid():
    return l_shape().grid


@pytest.fixture
def wall_grid():
    occupied = np.zeros((4, 4, 1), dtype=bool)
    occupied[2, :, :] = True
    return OccupancyGrid.from_occupied(occupied, resolution=1.0)


@pytest.fixture
def free_grid():
    return OccupancyGrid.filled((0.0, 0.0, 0.0), 1.0, (4, 4, 1), Cell.FREE)
