from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from depth_fusion import Intrinsics
from occupancy import Cell, traverse_rays
from sim.warps import IdentityWarp


@dataclass(frozen=True)
class CameraModel:
    width: int = 64
    height: int = 48
    hfov_deg: float = 87.0
    vfov_deg: float = 58.0
    max_range: float = 5.0

    @cached_property
    def intrinsics(self):
        return Intrinsics.from_fov(self.width, self.height, self.hfov_deg, self.vfov_deg)

    @cached_property
    def rays(self):
        """Per-pixel optical-frame directions with unit z, shape (H, W, 3)."""
        k = self.intrinsics
        v, u = np.mgrid[0:self.height, 0:self.width].astype(float)
        return np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)


@dataclass(frozen=True)
class NoiseModel:
    """Stereo-like corruption of the metric channel.

    speckle: probability a pixel is dropped; range_sigma: Gaussian sigma in
    mm per squared metre of depth.
    """
    speckle: float = 0.0
    range_sigma: float = 0.0

    @property
    def enabled(self):
        return self.speckle > 0 or self.range_sigma > 0

    def apply(self, depth_mm, rng):
        depth = np.array(depth_mm, dtype=float)
        valid = depth > 0
        if self.range_sigma > 0:
            sigma = self.range_sigma * (depth / 1000.0) ** 2
            depth = np.where(valid, depth + rng.normal(0.0, 1.0, depth.shape) * sigma, 0.0)
            depth = np.where(depth > 0, depth, 0.0)
        if self.speckle > 0:
            depth[rng.random(depth.shape) < self.speckle] = 0.0
        return depth


@dataclass(frozen=True)
class DepthFrame:
    depth_mm: np.ndarray
    relative: np.ndarray
    truth_mm: np.ndarray
    pose: object
    intrinsics: Intrinsics


def render_depth(grid, pose, camera=CameraModel(), warp=None, noise=None, rng=None):
    """Raycast the camera through a ground-truth grid.

    depth_mm is the (optionally noisy) z-depth with 0 where nothing is hit
    within max_range; relative is warp(1 / truth_mm) on hits and 0 on
    misses; truth_mm is the noiseless depth.
    """
    warp = IdentityWarp() if warp is None else warp
    rays = camera.rays.reshape(-1, 3)
    unit = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    ends = pose.apply(unit * camera.max_range)
    starts = np.broadcast_to(pose.position, ends.shape)

    voxels, valid, t_entry, _ = traverse_rays(grid, starts, ends)
    occ = valid & (grid.cells[voxels[..., 0], voxels[..., 1], voxels[..., 2]] == Cell.OCCUPIED)
    hit = occ.any(axis=1)
    first = np.argmax(occ, axis=1)
    t_hit = t_entry[np.arange(rays.shape[0]), first]
    # starting inside an obstacle sees nothing
    hit &= t_hit > 0
    truth = np.where(hit, t_hit * camera.max_range * unit[:, 2] * 1000.0, 0.0)
    truth = truth.reshape(camera.height, camera.width)

    relative = np.zeros_like(truth)
    relative[truth > 0] = warp(1.0 / truth[truth > 0])
    depth = truth
    if noise is not None and noise.enabled:
        depth = noise.apply(truth, rng if rng is not None else np.random.default_rng())
    return DepthFrame(depth, relative, truth, pose, camera.intrinsics)
