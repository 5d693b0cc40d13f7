from collections import deque

import numpy as np
import pytest

from conftest import blocky_grid
from corridor_search import (Corridor, GoalUnreachableError, StartNotFreeError, hop_oracle_bfs,
                             select_corridors)
from decomposition import covering_cuboids, decompose
from occupancy import Cell, OccupancyGrid
from sim.scenes import dead_end


def bfs_hops(graph, start, goal):
    """Hops from the lowest cuboid holding start to the nearest cuboid holding goal."""
    source = covering_cuboids(graph, start)[0]
    targets = set(covering_cuboids(graph, goal))
    seen = {source: 0}
    queue = deque([source])
    while queue:
        v = queue.popleft()
        if v in targets:
            return seen[v]
        for a, b in graph.edges:
            w = b if a == v else a if b == v else None
            if w is not None and w not in seen:
                seen[w] = seen[v] + 1
                queue.append(w)
    return None


def check_corridor(graph, corridor, start, goal):
    assert corridor.contains(0, start)
    assert corridor.contains(len(corridor) - 1, goal)
    for n in range(len(corridor) - 1):
        lo, hi = corridor.intersection(n)
        assert np.all(lo <= hi + 1e-12)
        assert tuple(sorted(corridor.indices[n:n + 2])) in graph.edges


def free_points(grid, rng, count):
    free = np.argwhere(grid.cells != Cell.OCCUPIED)
    picks = free[rng.choice(len(free), count, replace=False)]
    return [grid.index_to_world(p) for p in picks]


def test_same_cuboid(free_grid):
    graph = decompose(free_grid)
    corridor = select_corridors(graph, (0.5, 0.5, 0.5), (3.5, 3.5, 0.5))
    assert corridor.indices == (0,)
    assert corridor.f == 0 and corridor.hops == 0


def test_l_shape_corridor(l_grid):
    graph = decompose(l_grid)
    start, goal = (4.5, 0.5, 0.5), (0.5, 4.5, 0.5)
    corridor = select_corridors(graph, start, goal)
    assert corridor.indices == (0, 1)
    np.testing.assert_allclose(corridor.lower, [[0, 0, 0], [0, 0, 0]])
    np.testing.assert_allclose(corridor.upper, [[5, 3, 1], [3, 5, 1]])
    check_corridor(graph, corridor, start, goal)
    assert corridor.to_json()['indices'] == [0, 1]


def test_start_not_free(l_grid):
    graph = decompose(l_grid)
    with pytest.raises(StartNotFreeError):
        select_corridors(graph, (4.5, 4.5, 0.5), (0.5, 0.5, 0.5))
    with pytest.raises(StartNotFreeError):
        select_corridors(graph, (9.0, 0.5, 0.5), (0.5, 0.5, 0.5))


def test_goal_in_obstacle_or_disconnected(wall_grid, l_grid):
    with pytest.raises(GoalUnreachableError):
        select_corridors(decompose(l_grid), (0.5, 0.5, 0.5), (4.5, 4.5, 0.5))
    with pytest.raises(GoalUnreachableError):
        select_corridors(decompose(wall_grid), (0.5, 0.5, 0.5), (3.5, 3.5, 0.5))


def test_dead_end_goal_is_reachable_around_the_pocket():
    scene = dead_end()
    graph = decompose(scene.grid)
    corridor = select_corridors(graph, scene.start, scene.goal)
    check_corridor(graph, corridor, scene.start, scene.goal)
    assert corridor.hops == bfs_hops(graph, scene.start, scene.goal)
    assert corridor.hops >= 2


def test_clearance_shrinks_boxes(l_grid):
    graph = decompose(l_grid)
    corridor = select_corridors(graph, (4.5, 0.5, 0.5), (0.5, 4.5, 0.5), clearance=0.25)
    np.testing.assert_allclose(corridor.lower[0], [0.25, 0.25, 0.25])
    np.testing.assert_allclose(corridor.upper[0], [4.75, 2.75, 0.75])
    # a clearance wider than the box collapses it onto its center
    wide = select_corridors(graph, (4.5, 0.5, 0.5), (0.5, 4.5, 0.5), clearance=0.75)
    np.testing.assert_allclose(wide.lower[0, 2], 0.5)
    np.testing.assert_allclose(wide.upper[0, 2], 0.5)


def test_hop_oracle():
    grid = OccupancyGrid.from_occupied(np.array([[[False]], [[True]], [[False]]]))
    disconnected = decompose(grid)
    assert hop_oracle_bfs(disconnected, 0, 0) == 0
    with pytest.raises(GoalUnreachableError):
        hop_oracle_bfs(disconnected, 0, 1)
    occupied = np.zeros((5, 5, 1), dtype=bool)
    occupied[3:, 3:] = True
    assert hop_oracle_bfs(decompose(OccupancyGrid.from_occupied(occupied)), 0, 1) == 1


def test_from_boxes():
    corridor = Corridor.from_boxes([[0, 0, 0], [2, 0, 0]], [[3, 1, 1], [5, 1, 1]])
    assert corridor.indices == (0, 1)
    lo, hi = corridor.intersection(0)
    np.testing.assert_allclose(lo, [2, 0, 0])
    np.testing.assert_allclose(hi, [3, 1, 1])
    with pytest.raises(ValueError):
        Corridor((0,), [[0, 0, 0], [1, 1, 1]], [[1, 1, 1], [2, 2, 2]])


def compare_with_oracle(seed, dims, boxes, pairs=4):
    rng = np.random.default_rng(seed)
    grid = blocky_grid(seed, dims=dims, boxes=boxes)
    graph = decompose(grid)
    for _ in range(pairs):
        start, goal = free_points(grid, rng, 2)
        expected = bfs_hops(graph, start, goal)
        if expected is None:
            with pytest.raises(GoalUnreachableError):
                select_corridors(graph, start, goal)
            continue
        corridor = select_corridors(graph, start, goal)
        check_corridor(graph, corridor, start, goal)
        assert corridor.hops == expected
        assert select_corridors(graph, start, goal).indices == corridor.indices


@pytest.mark.parametrize('seed', range(50))
def test_hop_count_matches_bfs(seed):
    compare_with_oracle(seed, (32, 32, 4), boxes=40)


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(200))
def test_hop_count_matches_bfs_large_maps(seed):
    rng = np.random.default_rng(1000 + seed)
    side = int(rng.integers(32, 129))
    dims = (side, side, int(rng.integers(4, 9)))
    compare_with_oracle(1000 + seed, dims, boxes=int(side * 1.5), pairs=2)


def test_unscaled_heuristic_still_finds_a_corridor(l_grid):
    graph = decompose(l_grid)
    corridor = select_corridors(graph, (4.5, 0.5, 0.5), (0.5, 4.5, 0.5), admissible=False)
    check_corridor(graph, corridor, (4.5, 0.5, 0.5), (0.5, 4.5, 0.5))
