import json

import numpy as np
import pytest

from conftest import blocky_grid, random_grid
from decomposition import Cuboid, LayerSpec, OutOfBoundsError, covering_cuboids, decompose
from occupancy import Cell, OccupancyGrid
from sim.scenes import FIXTURES


def blocked_of(grid, unknown_is_free=True):
    blocked = grid.cells == Cell.OCCUPIED
    if not unknown_is_free:
        blocked |= grid.cells == Cell.UNKNOWN
    return blocked


def check_cover(grid, graph, unknown_is_free=True, samples=200):
    blocked = blocked_of(grid, unknown_is_free)
    painted = np.zeros(grid.dims, dtype=bool)
    for c in graph.vertices:
        painted[c.lo[0]:c.hi[0] + 1, c.lo[1]:c.hi[1] + 1, c.lo[2]:c.hi[2] + 1] = True
    assert np.array_equal(painted, ~blocked)

    indices = np.argwhere(np.ones(grid.dims, dtype=bool))
    rng = np.random.default_rng(0)
    if len(indices) > samples:
        indices = indices[rng.choice(len(indices), samples, replace=False)]
    for index in indices:
        found = covering_cuboids(graph, grid.index_to_world(index))
        if blocked[tuple(index)]:
            assert found == []
        else:
            assert found and all(graph.vertices[v].contains_index(index) for v in found)


def check_obstacle_free(grid, graph, unknown_is_free=True):
    blocked = blocked_of(grid, unknown_is_free)
    for c in graph.vertices:
        assert not blocked[c.lo[0]:c.hi[0] + 1, c.lo[1]:c.hi[1] + 1, c.lo[2]:c.hi[2] + 1].any()


def check_maximal(grid, graph, layers, unknown_is_free=True):
    blocked = blocked_of(grid, unknown_is_free)
    for c in graph.vertices:
        band = layers.bands[c.layer]
        limits = [(0, grid.dims[0] - 1), (0, grid.dims[1] - 1), band]
        for axis in range(3):
            for direction in (-1, 1):
                coord = c.lo[axis] - 1 if direction < 0 else c.hi[axis] + 1
                if coord < limits[axis][0] or coord > limits[axis][1]:
                    continue
                slab = [slice(c.lo[a], c.hi[a] + 1) for a in range(3)]
                slab[axis] = coord
                assert blocked[tuple(slab)].any(), f'{c} can grow along axis {axis} ({direction})'


def check_edges(graph):
    expected = []
    for a in range(len(graph.vertices)):
        for b in range(a + 1, len(graph.vertices)):
            la, ha = graph.world_box(a)
            lb, hb = graph.world_box(b)
            if np.all(np.maximum(la, lb) <= np.minimum(ha, hb) + 1e-12):
                expected.append((a, b))
    assert graph.edges == expected


def test_free_grid_is_one_cuboid(free_grid):
    graph = decompose(free_grid)
    assert graph.vertices == [Cuboid((0, 0, 0), (3, 3, 0), 0)]
    assert graph.edges == []


def test_wall_splits_into_two_cuboids(wall_grid):
    graph = decompose(wall_grid)
    assert len(graph.vertices) == 2
    assert graph.edges == []
    check_cover(wall_grid, graph)


def test_l_shape(l_grid):
    graph = decompose(l_grid)
    assert graph.vertices == [Cuboid((0, 0, 0), (4, 2, 0), 0), Cuboid((0, 0, 0), (2, 4, 0), 0)]
    assert graph.edges == [(0, 1)]
    np.testing.assert_allclose(graph.intersections[0], [[0, 0, 0], [3, 3, 1]])
    check_cover(l_grid, graph)
    assert covering_cuboids(graph, (1.5, 1.5, 0.5)) == [0, 1]
    assert covering_cuboids(graph, (4.5, 0.5, 0.5)) == [0]
    assert covering_cuboids(graph, (4.5, 4.5, 0.5)) == []


def test_fully_occupied_grid_is_empty():
    grid = OccupancyGrid.filled((0, 0, 0), 1.0, (3, 3, 3), Cell.OCCUPIED)
    graph = decompose(grid)
    assert graph.vertices == [] and graph.edges == []
    assert graph.stats()['coverage_pct'] == 100.0


def test_covering_out_of_bounds(free_grid):
    graph = decompose(free_grid)
    assert covering_cuboids(graph, (2.0, 2.0, 0.5)) == [0]
    with pytest.raises(OutOfBoundsError):
        covering_cuboids(graph, (5.0, 2.0, 0.5))


def test_touching_boxes_share_an_edge():
    occupied = np.zeros((4, 3, 1), dtype=bool)
    occupied[2, 1:, 0] = True
    occupied[1, :2, 0] = True
    grid = OccupancyGrid.from_occupied(occupied)
    graph = decompose(grid)
    check_edges(graph)
    check_cover(grid, graph)


def test_unknown_handling():
    cells = np.full((4, 4, 1), Cell.FREE, dtype=np.uint8)
    cells[2, :, 0] = Cell.UNKNOWN
    grid = OccupancyGrid((0, 0, 0), 1.0, cells)
    assert len(decompose(grid).vertices) == 1
    strict = decompose(grid, unknown_is_free=False)
    assert len(strict.vertices) == 2
    check_cover(grid, strict, unknown_is_free=False)


def test_layers():
    grid = OccupancyGrid.filled((0, 0, 0), 0.5, (4, 4, 4), Cell.FREE)
    layers = LayerSpec.from_heights(grid, [1.0])
    assert layers.bands == ((0, 1), (2, 3))
    graph = decompose(grid, layers)
    assert [c.layer for c in graph.vertices] == [0, 1]
    assert [c.hi[2] for c in graph.vertices] == [1, 3]
    # stacked bands share a face
    assert graph.edges == [(0, 1)]


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec(((0, 1), (3, 3))).validate(4)
    with pytest.raises(ValueError):
        LayerSpec(((0, 1),)).validate(4)
    LayerSpec.single(4).validate(4)


def test_stats_and_json(l_grid):
    graph = decompose(l_grid)
    stats = graph.stats()
    assert stats == {'cuboids': 2, 'edges': 1, 'free_voxels': 21, 'coverage_pct': 100.0}
    exported = json.loads(json.dumps(graph.to_json()))
    assert exported['vertices'][0] == {'lo': [0.0, 0.0, 0.0], 'hi': [5.0, 3.0, 1.0], 'layer': 0}
    assert exported['edges'] == [[0, 1]]


@pytest.mark.parametrize('name', sorted(FIXTURES))
def test_fixture_properties(name):
    grid = FIXTURES[name]().grid
    layers = LayerSpec.single(grid.dims[2])
    graph = decompose(grid, layers)
    check_cover(grid, graph)
    check_obstacle_free(grid, graph)
    check_maximal(grid, graph, layers)
    check_edges(graph)


@pytest.mark.parametrize('seed', range(5))
def test_random_grid_properties(seed):
    grid = random_grid(seed, dims=(10, 9, 4), density=0.25, unknown=0.2)
    layers = LayerSpec(((0, 1), (2, 3)))
    for unknown_is_free in (True, False):
        graph = decompose(grid, layers, unknown_is_free)
        check_cover(grid, graph, unknown_is_free)
        check_obstacle_free(grid, graph, unknown_is_free)
        check_maximal(grid, graph, layers, unknown_is_free)
        check_edges(graph)
        assert decompose(grid, layers, unknown_is_free) == graph


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(100))
def test_blocky_grid_properties(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in rng.integers(8, 65, size=3))
    grid = blocky_grid(seed, dims=dims, boxes=int(rng.integers(1, 20)))
    layers = LayerSpec.single(dims[2])
    graph = decompose(grid, layers)
    check_cover(grid, graph)
    check_obstacle_free(grid, graph)
    check_maximal(grid, graph, layers)
    check_edges(graph)
    assert decompose(grid, layers) == graph
