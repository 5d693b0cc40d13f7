from collections import defaultdict, deque
import csv
import json
import os
import threading
import time

import numpy as np
from termcolor import colored

COMMON_FORMAT = [
    ('run', 'R', 'int'),
]

PREFIX_FORMAT = {
    'plan': [
        ('cuboids', 'CUB', 'int'),
        ('corridor_length', 'COR', 'int'),
        ('total_time', 'T', 'time'),
        ('path_length', 'L', 'float'),
        ('decomposition_ms', 'DEC', 'ms'),
        ('search_ms', 'AST', 'ms'),
        ('optimization_ms', 'OPT', 'ms'),
    ],
    'explore': [
        ('round', 'N', 'int'),
        ('coverage', 'COV', 'float'),
        ('gain', 'G', 'int'),
        ('path_length', 'L', 'float'),
        ('replans', 'RP', 'int'),
        ('sim_time', 'T', 'time'),
    ],
    'bench': [
        ('map', 'MAP', 'int'),
        ('trial', 'TR', 'int'),
        ('cuboids', 'CUB', 'int'),
        ('corridor_length', 'COR', 'int'),
        ('total_time', 'T', 'time'),
        ('decomposition_ms', 'DEC', 'ms'),
        ('search_ms', 'AST', 'ms'),
        ('optimization_ms', 'OPT', 'ms'),
    ],
}

PREFIX_COLOR = {'plan': 'yellow', 'explore': 'green', 'bench': 'cyan'}


class AverageMeter(object):
    def __init__(self):
        self._sum = 0
        self._count = 0

    def update(self, value, n=1):
        self._sum += value
        self._count += n

    def value(self):
        return self._sum / max(1, self._count)


class MetersGroup(object):
    def __init__(self, file_name, formating, file_exists=False):
        self._csv_file_name = f'{file_name}.csv'
        self._formating = formating
        self._meters = defaultdict(AverageMeter)
        self.file_exists = file_exists
        self._csv_file = open(self._csv_file_name, 'a' if file_exists else 'w')
        self._csv_writer = None

    def log(self, key, value, n=1):
        self._meters[key].update(value, n)

    def _prime_meters(self):
        data = dict()
        for key, meter in self._meters.items():
            key = key.split('/', 1)[1].replace('/', '_')
            data[key] = meter.value()
        return data

    def _dump_to_csv(self, data):
        if self._csv_writer is None:
            self._csv_writer = csv.DictWriter(self._csv_file,
                                              fieldnames=sorted(data.keys()),
                                              restval=0.0,
                                              extrasaction='ignore')
            if not self.file_exists:
                self._csv_writer.writeheader()
        self._csv_writer.writerow(data)
        self._csv_file.flush()

    def _format(self, key, value, ty):
        if ty == 'int':
            value = int(value)
            return f'{key}: {value}'
        elif ty == 'float':
            return f'{key}: {value:.04f}'
        elif ty == 'time':
            return f'{key}: {value:04.1f} s'
        elif ty == 'ms':
            return f'{key}: {value:.2f} ms'
        else:
            raise ValueError(f'invalid format type: {ty}')

    def _dump_to_console(self, data, prefix):
        prefix = colored(prefix, PREFIX_COLOR.get(prefix, 'white'))
        pieces = [f'| {prefix: <14}']
        for key, disp_key, ty in self._formating:
            value = data.get(key, 0)
            pieces.append(self._format(disp_key, value, ty))
        print(' | '.join(pieces))

    def dump(self, step, prefix, save=True):
        if len(self._meters) == 0:
            return
        if save:
            data = self._prime_meters()
            data['run'] = step
            self._dump_to_csv(data)
            self._dump_to_console(data, prefix)
        self._meters.clear()

    def close(self):
        self._csv_file.close()


class Logger(object):
    """Averaged meters per prefix, dumped to <prefix>_<name>.csv and the console."""

    def __init__(self, log_dir, name='run', prefixes=('plan',), file_exists=False):
        self._log_dir = log_dir
        self._groups = {}
        for prefix in prefixes:
            if prefix not in PREFIX_FORMAT:
                raise ValueError(f'no console format for log prefix: {prefix}')
            self._groups[prefix] = MetersGroup(os.path.join(log_dir, f'{prefix}_{name}'),
                                               formating=COMMON_FORMAT + PREFIX_FORMAT[prefix],
                                               file_exists=file_exists)

    def log(self, key, value, n=1):
        prefix = key.split('/', 1)[0]
        if prefix not in self._groups:
            raise ValueError(f'unknown log prefix in key: {key}')
        if isinstance(value, np.generic):
            value = value.item()
        self._groups[prefix].log(key, value, n)

    def log_dict(self, prefix, values):
        for key, value in values.items():
            if isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool):
                self.log(f'{prefix}/{key}', value)

    def dump(self, step, save=True, ty=None):
        if ty is None:
            for prefix, group in self._groups.items():
                group.dump(step, prefix, save)
        elif ty in self._groups:
            self._groups[ty].dump(step, ty, save)
        else:
            raise ValueError(f'invalid log type: {ty}')

    def close(self):
        for group in self._groups.values():
            group.close()


class DecisionLog(object):
    """JSON-lines stream of supervisor decisions. Only the last `keep` records
    stay in memory; the file holds the full run."""

    def __init__(self, path=None, keep=1000):
        self._path = path
        self._lock = threading.Lock()
        self._recent = deque(maxlen=keep)
        self._count = 0
        if path is not None:
            open(path, 'w').close()

    @property
    def records(self):
        with self._lock:
            return list(self._recent)

    def write(self, decision, first_collision=None, latency_ms=None, timestamp=None, **extra):
        record = {
            'timestamp': time.time() if timestamp is None else float(timestamp),
            'decision': decision,
            'first_collision': first_collision,
            'replan_latency_ms': latency_ms,
        }
        record.update(extra)
        with self._lock:
            self._recent.append(record)
            self._count += 1
            if self._path is not None:
                with open(self._path, 'a') as f:
                    f.write(json.dumps(record) + '\n')
        return record

    def __len__(self):
        return self._count
