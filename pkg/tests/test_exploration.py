import math

import numpy as np
import pytest

from exploration import (ExplorationMap, NBVOptions, run_exploration, sample_candidates, score_position,
                         select_nbv, update_viewed, visible_unviewed)
from occupancy import Cell, OccupancyGrid, traverse
from sim.camera import CameraModel
from sim.scenes import Forest, sealed_room
from sim.simulator import SimOptions, Simulator
from utils import Pose

CAMERA = CameraModel(32, 24)


def open_floor():
    return OccupancyGrid.filled((0.0, 0.0, 0.0), 1.0, (10, 10, 1), Cell.FREE)


def walled_floor():
    occupied = np.zeros((10, 10, 1), dtype=bool)
    occupied[3, :, :] = True
    return OccupancyGrid.from_occupied(occupied)


def only_unviewed(grid, *indices):
    viewed = np.ones(grid.dims, dtype=bool)
    for index in indices:
        viewed[index] = False
    return ExplorationMap(grid.origin, grid.resolution, viewed)


def seen_oracle(emap, pose, grid, max_range):
    """Per-voxel frustum test plus a scalar ray walk to each center."""
    k = CAMERA.intrinsics
    seen = np.zeros(emap.dims, dtype=bool)
    for index in np.argwhere(~emap.viewed):
        center = emap.origin + (index + 0.5) * emap.resolution
        cam = pose.inverse_apply(center[None])[0]
        if cam[2] <= 1e-9 or np.linalg.norm(cam) > max_range:
            continue
        u = k.fx * cam[0] / cam[2] + k.cx
        v = k.fy * cam[1] / cam[2] + k.cy
        if not (-0.5 <= u <= k.width - 0.5 and -0.5 <= v <= k.height - 0.5):
            continue
        path = traverse(grid, pose.position, center)
        if any(grid.cells[c] == Cell.OCCUPIED for c in path[:-1]):
            continue
        seen[tuple(index)] = True
    return seen


def test_volume_map():
    emap = ExplorationMap.from_volume((0, 0, 0), (2.0, 1.0, 0.5), 0.25)
    assert emap.dims == (8, 4, 2)
    assert emap.total == 64 and emap.viewed_count == 0 and emap.fraction == 0.0
    np.testing.assert_allclose(emap.upper, [2.0, 1.0, 0.5])
    centers, idx = emap.centers()
    np.testing.assert_allclose(centers[0], [0.125, 0.125, 0.125])
    assert idx.shape == (64, 3)
    with pytest.raises(ValueError):
        emap.viewed[0, 0, 0] = True


@pytest.mark.parametrize('make_grid', [open_floor, walled_floor])
@pytest.mark.parametrize('yaw', [0.0, 0.7, math.pi / 2, -2.5])
def test_visibility_matches_oracle(make_grid, yaw):
    grid = make_grid()
    emap = ExplorationMap.like(grid)
    pose = Pose.from_yaw((1.3, 5.1, 0.5), yaw)
    seen = visible_unviewed(emap, pose, CAMERA.intrinsics, grid, 5.0)
    np.testing.assert_array_equal(seen, seen_oracle(emap, pose, grid, 5.0))


def test_wall_hides_what_is_behind_it():
    grid = walled_floor()
    emap = update_viewed(ExplorationMap.like(grid), Pose.from_yaw((1.3, 5.1, 0.5), 0.0),
                         CAMERA.intrinsics, grid, 5.0)
    assert emap.viewed[3, 5, 0] and emap.viewed[2, 5, 0]
    assert not emap.viewed[4:].any()


def test_update_viewed_is_monotone():
    grid = open_floor()
    emap = ExplorationMap.like(grid)
    first = update_viewed(emap, Pose.from_yaw((5.0, 5.0, 0.5), 0.0), CAMERA.intrinsics, grid, 5.0)
    second = update_viewed(first, Pose.from_yaw((5.0, 5.0, 0.5), math.pi), CAMERA.intrinsics, grid, 5.0)
    assert first.viewed_count > 0
    assert np.all(second.viewed >= first.viewed)
    assert second.viewed_count > first.viewed_count
    # nothing new returns the same map
    assert update_viewed(second, Pose.from_yaw((5.0, 5.0, 0.5), 0.0), CAMERA.intrinsics, grid, 5.0) is second


def test_score_position_picks_the_bin_facing_the_gain():
    grid = open_floor()
    ahead = only_unviewed(grid, (8, 5, 0))
    assert score_position(ahead, (5.0, 5.5, 0.5), CAMERA.intrinsics, grid, 5.0, 4) == (1, 0.0)
    left = only_unviewed(grid, (5, 8, 0))
    gain, yaw = score_position(left, (5.5, 5.0, 0.5), CAMERA.intrinsics, grid, 5.0, 4)
    assert gain == 1 and yaw == pytest.approx(math.pi / 2)
    # one voxel ahead, one behind: the first bin wins the tie
    both = only_unviewed(grid, (8, 5, 0), (1, 5, 0))
    assert score_position(both, (5.0, 5.5, 0.5), CAMERA.intrinsics, grid, 5.0, 4) == (1, 0.0)
    done = only_unviewed(grid)
    assert score_position(done, (5.0, 5.5, 0.5), CAMERA.intrinsics, grid, 5.0, 4) == (0, 0.0)


def test_select_nbv_rules():
    occupied = np.zeros((10, 10, 1), dtype=bool)
    occupied[6, 5, 0] = True
    grid = OccupancyGrid.from_occupied(occupied)
    emap = only_unviewed(grid, (8, 5, 0))
    candidates = np.array([
        [6.5, 5.5, 0.5],   # inside an obstacle
        [7.0, 5.5, 0.5],
        [7.0, 5.5, 0.5],   # tie with the previous one
        [0.5, 0.5, 0.5],   # out of range
    ])
    best = select_nbv(emap, grid, CAMERA.intrinsics, 0, NBVOptions(yaw_bins=4), candidates)
    assert best.gain == 1
    np.testing.assert_array_equal(best.position, candidates[1])
    assert best.yaw == 0.0

    done = select_nbv(only_unviewed(grid), grid, CAMERA.intrinsics, 0, NBVOptions(yaw_bins=4), candidates)
    assert done.gain == 0


def test_sample_candidates_stay_in_volume():
    emap = ExplorationMap.from_volume((0, 0, 0), (8.0, 6.0, 2.0), 0.5)
    rng = np.random.default_rng(0)
    points = sample_candidates(emap, rng, NBVOptions(samples=500, z_band=(0.5, 1.0)))
    assert points.shape == (500, 3)
    assert np.all(points >= [0, 0, 0.5]) and np.all(points <= [8.0, 6.0, 1.0])
    again = sample_candidates(emap, np.random.default_rng(0), NBVOptions(samples=500, z_band=(0.5, 1.0)))
    np.testing.assert_array_equal(points, again)


def test_options_validation():
    with pytest.raises(ValueError):
        NBVOptions(samples=0)
    with pytest.raises(ValueError):
        NBVOptions(max_range=0.0)


def explore(threshold, seed=3, **nbv):
    options = NBVOptions(**{'samples': 30, 'yaw_bins': 4, 'max_rounds': 25, 'zero_gain_rounds': 2, **nbv})
    sim = Simulator(sealed_room(), camera=CAMERA, options=SimOptions(seed=seed))
    return run_exploration(sim, threshold, options)


def test_threshold_validation():
    with pytest.raises(ValueError):
        explore(0.0)
    with pytest.raises(ValueError):
        explore(1.5)


def test_exploration_reaches_a_low_threshold():
    report = explore(0.3)
    assert report.terminated_by == 'threshold'
    assert report.final_coverage >= 0.3
    assert report.collisions == 0
    coverage = [c for _, c, _ in report.coverage]
    assert coverage == sorted(coverage)
    assert report.to_json()['final_coverage'] == report.final_coverage


def test_exploration_is_deterministic():
    a, b = explore(0.3), explore(0.3)
    assert a.coverage == b.coverage
    assert a.goals == b.goals


@pytest.mark.slow
def test_sealed_room_stops_without_gain():
    report = explore(0.99)
    sealed = 8 * 8 * 4
    assert report.terminated_by in ('no_gain', 'max_rounds')
    assert report.final_coverage <= 1.0 - sealed / (32 * 32 * 4) + 1e-9
    assert report.collisions == 0


@pytest.mark.slow
def test_higher_threshold_flies_further():
    low, high = explore(0.4), explore(0.8)
    assert high.final_coverage >= low.final_coverage
    assert high.path_length >= low.path_length
    assert len(high.coverage) >= len(low.coverage)


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(5))
def test_closed_loop_forest_runs(seed):
    scene = Forest(size=(12.0, 12.0, 2.0), density=0.05).generate(seed)
    sim = Simulator(scene, camera=CAMERA, options=SimOptions(seed=seed))
    report = run_exploration(sim, 0.6, NBVOptions(samples=60, yaw_bins=8, max_rounds=60))
    assert report.collisions == 0
    coverage = [c for _, c, _ in report.coverage]
    assert coverage == sorted(coverage)
    assert report.terminated_by in ('threshold', 'no_gain', 'max_rounds')


def full_scale_forest(seed, threshold):
    scene = Forest(size=(40.0, 40.0, 4.0), resolution=0.25).generate(seed)
    sim = Simulator(scene, options=SimOptions(seed=seed))
    return run_exploration(sim, threshold, NBVOptions())


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(20))
def test_full_scale_forest_runs(seed):
    report = full_scale_forest(seed, 0.6)
    assert report.collisions == 0
    coverage = [c for _, c, _ in report.coverage]
    assert coverage == sorted(coverage)
    assert report.terminated_by in ('threshold', 'no_gain', 'max_rounds')


@pytest.mark.slow
def test_full_scale_higher_threshold_flies_further():
    low, high = full_scale_forest(0, 0.4), full_scale_forest(0, 0.8)
    assert low.collisions == 0 and high.collisions == 0
    assert high.path_length >= low.path_length
