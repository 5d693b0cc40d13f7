"""Planning benchmark over a suite of maps x trials."""
import time

import numpy as np
import pandas as pd

from corridor_search import CorridorError, GoalUnreachableError, hop_oracle_bfs, select_corridors
from decomposition import covering_cuboids, decompose
from occupancy import inflate
from planner import PlannerError
from planner.solver import SolverOptions, solve
from planner.trajectory import verify

COLUMNS = ['map', 'map_name', 'trial', 'seed', 'status', 'cuboids', 'edges', 'coverage_pct',
           'corridor_length', 'bfs_hops', 'hop_optimal', 'total_time', 'path_length', 'max_speed',
           'verified', 'decomposition_ms', 'search_ms', 'optimization_ms']


def _bfs_hops(graph, start, goal):
    """Oracle hop count from the lowest covering start cuboid to the nearest
    goal cuboid; None when unreachable."""
    starts = covering_cuboids(graph, start)
    goals = covering_cuboids(graph, goal)
    if not starts or not goals:
        return None
    best = None
    for g in goals:
        try:
            hops = hop_oracle_bfs(graph, starts[0], g)
        except GoalUnreachableError:
            continue
        best = hops if best is None else min(best, hops)
    return best


class Benchmark(object):
    def __init__(self, generators, trials, limits, solver_options=SolverOptions(), inflation=0.25,
                 seed=1, logger=None):
        self.generators = list(generators)
        self.trials = int(trials)
        self.limits = limits
        self.solver_options = solver_options
        self.inflation = inflation
        self.seed = seed
        self.logger = logger

    def run_trial(self, map_id, generator, trial):
        seed = self.seed + trial
        scene = generator.generate(seed)
        row = dict.fromkeys(COLUMNS, np.nan)
        row.update({'map': map_id, 'map_name': scene.name, 'trial': trial, 'seed': seed})

        t0 = time.perf_counter()
        grid = inflate(scene.grid, self.inflation)
        graph = decompose(grid)
        t1 = time.perf_counter()
        stats = graph.stats()
        row.update({'cuboids': stats['cuboids'], 'edges': stats['edges'],
                    'coverage_pct': stats['coverage_pct'], 'decomposition_ms': 1000.0 * (t1 - t0)})
        oracle = _bfs_hops(graph, scene.start, scene.goal)
        row['bfs_hops'] = np.nan if oracle is None else oracle

        try:
            corridor = select_corridors(graph, scene.start, scene.goal)
        except CorridorError as e:
            row['search_ms'] = 1000.0 * (time.perf_counter() - t1)
            row['status'] = type(e).__name__.replace('Error', '')
            row['hop_optimal'] = oracle is None
            return row
        t2 = time.perf_counter()
        row.update({'search_ms': 1000.0 * (t2 - t1), 'corridor_length': len(corridor),
                    'hop_optimal': oracle is not None and corridor.hops == oracle})

        try:
            traj = solve(corridor, scene.start, scene.goal, self.limits, self.solver_options)
        except PlannerError as e:
            row['optimization_ms'] = 1000.0 * (time.perf_counter() - t2)
            row['status'] = type(e).__name__.replace('Error', '')
            return row
        row['optimization_ms'] = 1000.0 * (time.perf_counter() - t2)
        row.update({'status': traj.solve_report.status, 'total_time': traj.total_time,
                    'path_length': traj.path_length(), 'max_speed': traj.max_speed(),
                    'verified': verify(traj, corridor, self.limits).ok(self.solver_options.eps_feas)})
        return row

    def run(self):
        rows = []
        for map_id, generator in enumerate(self.generators):
            for trial in range(self.trials):
                row = self.run_trial(map_id, generator, trial)
                rows.append(row)
                if self.logger is not None:
                    for key in ('map', 'trial', 'cuboids', 'corridor_length', 'total_time',
                                'decomposition_ms', 'search_ms', 'optimization_ms'):
                        value = row[key]
                        if value is not None and not (isinstance(value, float) and np.isnan(value)):
                            self.logger.log(f'bench/{key}', value)
                    self.logger.dump(len(rows), ty='bench')
        return pd.DataFrame(rows, columns=COLUMNS)
