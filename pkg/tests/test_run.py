import json

import numpy as np
import pandas as pd
import pytest
from hydra import compose, initialize

from depth_fusion import write_dpth, write_pgm16
from occupancy import save_map
from run import EXIT_DOMAIN_ERROR, EXIT_OK, Workspace
from sim.scenes import l_shape


def workspace(tmp_path, *overrides):
    with initialize(config_path='../config', version_base=None):
        cfg = compose(config_name='run', overrides=[f'out_dir={tmp_path}', *overrides])
    return Workspace(cfg)


def read(tmp_path, name):
    return json.loads((tmp_path / name).read_text())


def test_decompose_fixture(tmp_path):
    ws = workspace(tmp_path, 'command=decompose', 'fixture=l_shape', 'inflation=0.0')
    assert ws.run() == EXIT_OK
    graph = read(tmp_path, 'graph.json')
    assert len(graph['vertices']) == 2 and graph['edges'] == [[0, 1]]
    stats = read(tmp_path, 'graph_stats.json')
    assert stats['cuboids'] == 2 and stats['coverage_pct'] == 100.0
    assert stats['wall_ms'] >= 0


def test_decompose_map_file(tmp_path):
    path = tmp_path / 'l_shape.ogrd'
    save_map(l_shape().grid, path)
    ws = workspace(tmp_path, 'command=decompose', f'map={path}', 'inflation=0.0')
    assert ws.run() == EXIT_OK
    assert read(tmp_path, 'graph_stats.json')['free_voxels'] == 21


def test_missing_map_is_a_domain_error(tmp_path):
    ws = workspace(tmp_path, 'command=decompose', f'map={tmp_path / "missing.ogrd"}')
    assert ws.run() == EXIT_DOMAIN_ERROR


def test_plan_hallway(tmp_path):
    ws = workspace(tmp_path, 'command=plan', 'fixture=hallway', 'trajectory_rate=20.0')
    assert ws.run() == EXIT_OK
    summary = read(tmp_path, 'plan.json')
    assert summary['corridor_length'] == 1
    assert summary['verify']['position_ctrl'] <= 1e-6
    assert summary['total_time'] > 0
    frame = pd.read_csv(tmp_path / 'trajectory.csv')
    np.testing.assert_allclose(frame[['x', 'y', 'z']].iloc[-1], [9.5, 1.0, 0.5], atol=1e-9)
    assert (tmp_path / 'trajectory.json').exists()
    assert len(pd.read_csv(tmp_path / 'plan_run.csv')) == 1


def test_plan_explicit_points(tmp_path):
    ws = workspace(tmp_path, 'command=plan', 'fixture=l_shape', 'inflation=0.0',
                   'start=[4.5,0.5,0.5]', 'goal=[0.5,4.5,0.5]')
    assert ws.run() == EXIT_OK
    assert read(tmp_path, 'plan.json')['corridor']['indices'] == [0, 1]


def test_plan_map_file_needs_endpoints(tmp_path):
    path = tmp_path / 'l_shape.ogrd'
    save_map(l_shape().grid, path)
    with pytest.raises(ValueError, match='start and goal'):
        workspace(tmp_path, 'command=plan', f'map={path}').run()
    with pytest.raises(ValueError, match='start and goal'):
        workspace(tmp_path, 'command=plan', f'map={path}', 'start=[4.5,0.5,0.5]').run()
    ws = workspace(tmp_path, 'command=plan', f'map={path}', 'inflation=0.0',
                   'start=[4.5,0.5,0.5]', 'goal=[0.5,4.5,0.5]')
    assert ws.run() == EXIT_OK


def test_plan_unreachable_goal(tmp_path, capsys):
    ws = workspace(tmp_path, 'command=plan', 'fixture=dead_end', 'goal=[8.1,4.0,0.5]')
    assert ws.run() == EXIT_DOMAIN_ERROR
    assert 'GoalUnreachable' in capsys.readouterr().out
    assert not (tmp_path / 'plan.json').exists()


def test_bad_arguments(tmp_path):
    with pytest.raises(ValueError):
        workspace(tmp_path, 'command=plan', 'fixture=nowhere').run()
    with pytest.raises(ValueError):
        workspace(tmp_path, 'command=fly').run()


def test_fuse(tmp_path):
    rng = np.random.default_rng(0)
    stereo = rng.integers(800, 6000, size=(30, 40)).astype(float)
    stereo[:3] = 0.0
    mono = 1000.0 / np.where(stereo > 0, stereo, 6000.0)
    write_dpth(tmp_path / 'mono.dpth', mono)
    write_pgm16(tmp_path / 'stereo.pgm', stereo)

    ws = workspace(tmp_path, 'command=fuse', f'mono={tmp_path / "mono.dpth"}',
                   f'stereo={tmp_path / "stereo.pgm"}')
    assert ws.run() == EXIT_OK
    report = read(tmp_path, 'fusion.json')
    assert report['inverse_fit']['n_valid'] == 27 * 40
    assert report['inverse_fit']['alpha1'] == pytest.approx(1e-3, rel=1e-5)
    assert report['stereo_vs_completed']['mae_mm'] == pytest.approx(0.0, abs=1e-2)
    assert report['completed_valid_fraction'] == 1.0
    assert (tmp_path / 'completed.dpth').exists() and (tmp_path / 'completed.pgm').exists()


def test_fuse_corrupt_stereo_header(tmp_path, capsys):
    write_dpth(tmp_path / 'mono.dpth', np.ones((2, 2)))
    (tmp_path / 'stereo.pgm').write_bytes(b'P5\nabc 2\n65535\n' + bytes(8))
    ws = workspace(tmp_path, 'command=fuse', f'mono={tmp_path / "mono.dpth"}',
                   f'stereo={tmp_path / "stereo.pgm"}')
    assert ws.run() == EXIT_DOMAIN_ERROR
    assert 'DepthFile' in capsys.readouterr().out


def test_explore(tmp_path):
    scenario = tmp_path / 'scenario.json'
    scenario.write_text(json.dumps({'fixture': 'sealed_room', 'threshold': 0.2, 'seed': 2}))
    ws = workspace(tmp_path, 'command=explore', f'scenario={scenario}', 'sim.camera.width=32',
                   'sim.camera.height=24', 'sim.nbv.samples=20', 'sim.nbv.yaw_bins=4')
    assert ws.run() == EXIT_OK
    report = read(tmp_path, 'exploration.json')
    assert report['terminated_by'] == 'threshold'
    assert report['final_coverage'] >= 0.2
    coverage = pd.read_csv(tmp_path / 'coverage.csv')
    assert list(coverage.columns) == ['time', 'coverage', 'path_length']
    assert (tmp_path / 'decisions.jsonl').exists()


def test_bench(tmp_path):
    ws = workspace(tmp_path, 'command=bench', 'bench.trials=1', 'inflation=0.0')
    ws.cfg.bench.maps = [{'_target_': 'sim.scenes.Fixture', 'name': 'l_shape'},
                         {'_target_': 'sim.scenes.Fixture', 'name': 'hallway'}]
    assert ws.run() == EXIT_OK
    table = pd.read_csv(tmp_path / 'bench.csv')
    assert table['map_name'].tolist() == ['l_shape', 'hallway']
    assert table['hop_optimal'].all()
