from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation


# camera optical axes (x right, y down, z forward) expressed in the body frame
# (x forward, y left, z up)
BODY_TO_OPTICAL = np.array([[0.0, 0.0, 1.0],
                            [-1.0, 0.0, 0.0],
                            [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform from a local frame (camera or sensor) to the world."""
    position: np.ndarray
    rotation: Rotation

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), Rotation.identity())

    @classmethod
    def from_translation(cls, t):
        return cls(np.asarray(t, dtype=float).reshape(3), Rotation.identity())

    @classmethod
    def from_yaw(cls, position, yaw):
        """Forward-looking camera on a level vehicle at `position` heading `yaw`."""
        r = Rotation.from_euler('z', yaw) * Rotation.from_matrix(BODY_TO_OPTICAL)
        return cls(np.asarray(position, dtype=float).reshape(3), r)

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return self.rotation.apply(points) + self.position

    def inverse_apply(self, points):
        points = np.asarray(points, dtype=float)
        return self.rotation.inv().apply(points - self.position)


def set_seed_everywhere(seed):
    random.seed(seed)
    np.random.seed(seed)
    os.environ['PYTHONHASHSEED'] = str(seed)


def make_dir(*path_parts):
    dir_path = os.path.join(*path_parts)
    try:
        os.makedirs(dir_path)
    except OSError:
        pass
    return dir_path


def wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def as_vector(value, size=3):
    """Broadcast a scalar or sequence to a float vector of `size` entries."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(size, float(arr))
    if arr.shape != (size,):
        raise ValueError(f'expected {size} values, got shape {arr.shape}')
    return arr.copy()


def write_csv(file_path, columns):
    data_frame = pd.DataFrame.from_dict(columns)
    data_frame.to_csv(file_path, index=False)
    return data_frame


def _to_builtin(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f'not JSON serializable: {type(obj).__name__}')


def write_json(file_path, payload):
    with open(file_path, 'w') as f:
        json.dump(payload, f, indent=2, default=_to_builtin)


def read_json(file_path):
    with open(file_path, 'r') as f:
        return json.load(f)
