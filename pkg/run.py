#!/usr/bin/env python3
import datetime
import os
import sys
import time

import hydra
import numpy as np
from omegaconf import OmegaConf
from termcolor import colored

from bench import Benchmark
from corridor_search import CorridorError, select_corridors
from decomposition import LayerSpec, OutOfBoundsError, decompose
from depth_fusion import (DepthPair, FusionError, FusionOptions, compare_depth, complete_depth,
                          fit_scale, fit_scale_metric, read_dpth, read_pgm16, write_dpth, write_pgm16)
from exploration import NBVOptions, run_exploration
from logger import DecisionLog, Logger
from occupancy import MapFormatError, inflate, load_map
from planner import Limits, PlannerError, PlanTiming
from planner.solver import SolverOptions, solve
from planner.trajectory import verify
from replan import ReplanOptions
from sim.camera import CameraModel, NoiseModel
from sim.scenes import FIXTURES, load_scenario, make_generator
from sim.simulator import SimOptions, Simulator
from sim.vehicle import VehicleOptions
import utils

EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_VERIFY_FAILED = 2

DOMAIN_ERRORS = (MapFormatError, FusionError, OutOfBoundsError, CorridorError, PlannerError)


class Workspace(object):
    def __init__(self, cfg):
        self.cfg = cfg

        if self.cfg.out_dir:
            out = hydra.utils.to_absolute_path(self.cfg.out_dir)
        else:
            now = datetime.datetime.now()
            out = os.path.join(os.getcwd(), 'exp', now.strftime('%Y-%m-%d'), now.strftime('%H-%M-%S'))
        self.work_dir = utils.make_dir(out)
        print(f'workspace: {self.work_dir}')

        utils.set_seed_everywhere(self.cfg.seed)
        self.limits = Limits(self.cfg.planner.limits.v_max, self.cfg.planner.limits.a_max)
        self.solver_options = SolverOptions(**OmegaConf.to_container(self.cfg.planner.solver))
        self.replan_options = ReplanOptions(**OmegaConf.to_container(self.cfg.planner.replan))

    def _path(self, key):
        return hydra.utils.to_absolute_path(self.cfg[key])

    def _out(self, name):
        return os.path.join(self.work_dir, name)

    def _point(self, key):
        value = self.cfg[key]
        if value is None:
            raise ValueError(f'{key} must be given as [x, y, z]')
        return np.asarray(list(value), dtype=float)

    def _scene(self):
        if self.cfg.map:
            return None, load_map(self._path('map'))
        if self.cfg.fixture:
            if self.cfg.fixture not in FIXTURES:
                raise ValueError(f'unknown fixture: {self.cfg.fixture}')
            scene = FIXTURES[self.cfg.fixture]()
            return scene, scene.grid
        if self.cfg.generator:
            scene = make_generator(self.cfg.generator).generate(self.cfg.seed)
            return scene, scene.grid
        raise ValueError('one of map, fixture or generator must be set')

    def _layers(self, grid):
        if not self.cfg.layer_heights:
            return None
        return LayerSpec.from_heights(grid, list(self.cfg.layer_heights))

    def _summary(self, title, values):
        pieces = [f'| {colored(title, "green"): <14}']
        for key, value in values.items():
            pieces.append(f'{key}: {value:.4f}' if isinstance(value, float) else f'{key}: {value}')
        print(' | '.join(pieces))

    def decompose(self):
        _, grid = self._scene()
        start = time.perf_counter()
        graph = decompose(inflate(grid, self.cfg.inflation), self._layers(grid), self.cfg.unknown_is_free)
        stats = graph.stats()
        stats['wall_ms'] = 1000.0 * (time.perf_counter() - start)
        utils.write_json(self._out('graph.json'), graph.to_json())
        utils.write_json(self._out('graph_stats.json'), stats)
        self._summary('decompose', stats)
        return EXIT_OK

    def plan(self):
        scene, grid = self._scene()
        if scene is None and (self.cfg.start is None or self.cfg.goal is None):
            raise ValueError('start and goal must be given with map=')
        start = self._point('start') if self.cfg.start is not None else scene.start
        goal = self._point('goal') if self.cfg.goal is not None else scene.goal
        logger = Logger(self.work_dir, name='run', prefixes=('plan',))

        timing = PlanTiming()
        t0 = time.perf_counter()
        graph = decompose(inflate(grid, self.cfg.inflation), self._layers(grid), self.cfg.unknown_is_free)
        t1 = time.perf_counter()
        corridor = select_corridors(graph, start, goal, self.replan_options.clearance,
                                    self.replan_options.admissible)
        t2 = time.perf_counter()
        traj = solve(corridor, start, goal, self.limits, self.solver_options)
        t3 = time.perf_counter()
        timing.decomposition_ms = 1000.0 * (t1 - t0)
        timing.search_ms = 1000.0 * (t2 - t1)
        timing.optimization_ms = 1000.0 * (t3 - t2)

        report = verify(traj, corridor, self.limits)
        traj.save(self._out('trajectory.csv'), self._out('trajectory.json'), self.cfg.trajectory_rate)
        summary = {
            'cuboids': len(graph.vertices),
            'corridor': corridor.to_json(),
            'corridor_length': len(corridor),
            'total_time': traj.total_time,
            'path_length': traj.path_length(),
            'max_speed': traj.max_speed(),
            'timing': timing.to_dict(),
            'solve': traj.solve_report.to_dict(),
            'verify': report.to_dict(),
        }
        utils.write_json(self._out('plan.json'), summary)

        logger.log('plan/cuboids', len(graph.vertices))
        logger.log('plan/corridor_length', len(corridor))
        logger.log('plan/total_time', traj.total_time)
        logger.log('plan/path_length', summary['path_length'])
        logger.log_dict('plan', timing.to_dict())
        logger.dump(1, ty='plan')
        logger.close()
        return EXIT_OK if report.ok(self.solver_options.eps_feas) else EXIT_VERIFY_FAILED

    def _read_depth(self, key):
        path = self._path(key)
        if path.endswith(('.pgm', '.png')):
            return read_pgm16(path)
        return read_dpth(path)

    def fuse(self):
        fusion = self.cfg.fusion
        options = FusionOptions(fusion.min_depth_mm, fusion.max_depth_mm, fusion.max_samples)
        pair = DepthPair(self._read_depth('mono'), self._read_depth('stereo'))
        fit = fit_scale(pair, options)
        metric = fit_scale_metric(pair, options, fit)
        completed = complete_depth(pair, fit, options)
        comparison = compare_depth(pair.stereo * pair.valid_mask(options), completed.depth_mm,
                                   completed.valid, fusion.near_mm)

        write_dpth(self._out('completed.dpth'), completed.depth_mm)
        write_pgm16(self._out('completed.pgm'), completed.depth_mm)
        report = {
            'inverse_fit': fit.__dict__,
            'metric_fit': metric.__dict__,
            'completed_valid_fraction': float(completed.valid.mean()),
            'stereo_valid_fraction': float(pair.valid_mask(options).mean()),
            'stereo_vs_completed': comparison.__dict__,
        }
        utils.write_json(self._out('fusion.json'), report)
        self._summary('fuse', {'n_valid': fit.n_valid, 'residual_rms': fit.residual_rms,
                               'completed': report['completed_valid_fraction']})
        return EXIT_OK

    def _simulator(self, scene, spec):
        sim = self.cfg.sim
        noise = dict(OmegaConf.to_container(sim.noise))
        noise.update(spec.get('noise', {}))
        limits = self.limits
        if 'limits' in spec:
            limits = Limits(spec['limits']['v_max'], spec['limits']['a_max'])
        options = OmegaConf.to_container(sim.options)
        options['seed'] = int(spec.get('seed', self.cfg.seed))
        options['layer_heights'] = tuple(self.cfg.layer_heights)
        options['inflation'] = self.cfg.inflation
        return Simulator(scene, limits, self.solver_options, self.replan_options,
                         camera=CameraModel(**OmegaConf.to_container(sim.camera)),
                         options=SimOptions(**options),
                         warp=hydra.utils.instantiate(sim.warp),
                         noise=NoiseModel(**noise),
                         vehicle_options=VehicleOptions(**OmegaConf.to_container(sim.vehicle)),
                         decision_log=DecisionLog(self._out('decisions.jsonl')))

    def explore(self):
        scene, spec = load_scenario(self._path('scenario'))
        sim = self._simulator(scene, spec)
        nbv = NBVOptions(**OmegaConf.to_container(self.cfg.sim.nbv))
        threshold = float(spec.get('threshold', self.cfg.threshold))
        logger = Logger(self.work_dir, name='run', prefixes=('explore',))
        report = run_exploration(sim, threshold, nbv, np.random.default_rng(sim.options.seed), logger)
        logger.close()

        utils.write_json(self._out('exploration.json'), report.to_json())
        utils.write_csv(self._out('coverage.csv'), report.coverage_columns())
        self._summary('explore', {'coverage': report.final_coverage, 'rounds': report.rounds,
                                  'path_length': report.path_length, 'collisions': report.collisions,
                                  'terminated_by': report.terminated_by})
        return EXIT_OK if report.collisions == 0 else EXIT_VERIFY_FAILED

    def bench(self):
        generators = [make_generator(m) for m in self.cfg.bench.maps]
        logger = Logger(self.work_dir, name='run', prefixes=('bench',))
        benchmark = Benchmark(generators, self.cfg.bench.trials, self.limits, self.solver_options,
                              self.cfg.inflation, self.cfg.seed, logger)
        table = benchmark.run()
        logger.close()
        table.to_csv(self._out('bench.csv'), index=False)
        solved = table[table['status'].isin(['optimal', 'stalled', 'initialization'])]
        self._summary('bench', {'rows': len(table), 'solved': len(solved),
                                'hop_optimal': int(table['hop_optimal'].astype(bool).sum())})
        if not table['hop_optimal'].astype(bool).all() or not solved['verified'].astype(bool).all():
            return EXIT_VERIFY_FAILED
        return EXIT_OK

    def run(self):
        commands = {
            'decompose': self.decompose,
            'plan': self.plan,
            'fuse': self.fuse,
            'explore': self.explore,
            'bench': self.bench,
        }
        if self.cfg.command not in commands:
            raise ValueError(f'no valid command: {self.cfg.command}')
        try:
            return commands[self.cfg.command]()
        except DOMAIN_ERRORS as e:
            name = type(e).__name__
            print(colored(f'{name[:-5] if name.endswith("Error") else name}: {e}', 'red'))
            return EXIT_DOMAIN_ERROR


@hydra.main(config_path='config', config_name='run', version_base=None)
def main(cfg):
    workspace = Workspace(cfg)
    start = time.time()
    code = workspace.run()
    print(f'TOTAL_TIME: {time.time() - start:.2f} s')
    sys.exit(code)


if __name__ == '__main__':
    main()
