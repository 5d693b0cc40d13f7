"""Metric depth completion from a relative monocular inverse-depth image.

The relative image d_m only carries structure; its scale comes from a
quadratic fit against the valid pixels of a sparse metric stereo image d_s:

    1/d_s ~ a2 * d_m**2 + a1 * d_m + a0

solved by least squares on the inverse (mm^-1) scale, which weights the
near field where stereo is accurate.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import linalg, optimize


class FusionError(Exception):
    """Base class for depth fusion errors."""


class InsufficientSamplesError(FusionError):
    pass


class DegenerateDesignError(FusionError):
    pass


class ShapeMismatchError(FusionError):
    pass


class DepthFileError(FusionError):
    pass


# relative rank threshold for the scaled design matrix
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError('focal lengths must be positive')

    @classmethod
    def from_fov(cls, width, height, hfov_deg, vfov_deg):
        fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        fy = (height / 2.0) / math.tan(math.radians(vfov_deg) / 2.0)
        return cls(fx, fy, (width - 1) / 2.0, (height - 1) / 2.0, int(width), int(height))

    @property
    def hfov(self):
        return 2.0 * math.atan((self.width / 2.0) / self.fx)

    @property
    def vfov(self):
        return 2.0 * math.atan((self.height / 2.0) / self.fy)

    def project(self, points_cam):
        """Pixel coordinates (u, v) and a mask of points in front of the camera
        that land on the image."""
        pts = np.atleast_2d(points_cam)
        z = pts[:, 2]
        front = z > 1e-9
        safe_z = np.where(front, z, 1.0)
        u = self.fx * pts[:, 0] / safe_z + self.cx
        v = self.fy * pts[:, 1] / safe_z + self.cy
        on_image = front & (u >= -0.5) & (u <= self.width - 0.5) & (v >= -0.5) & (v <= self.height - 0.5)
        return u, v, on_image


@dataclass(frozen=True)
class FusionOptions:
    min_depth_mm: float = 300.0
    max_depth_mm: float = 10000.0
    max_samples: int = 100_000


@dataclass(frozen=True)
class DepthPair:
    """Registered relative (mm^-1, arbitrary scale) and metric (mm) images, shape (H, W)."""
    mono: np.ndarray
    stereo: np.ndarray
    intrinsics: Intrinsics = None

    def __post_init__(self):
        mono = np.asarray(self.mono, dtype=float)
        stereo = np.asarray(self.stereo, dtype=float)
        if mono.shape != stereo.shape or mono.ndim != 2:
            raise ShapeMismatchError(f'mono {mono.shape} and stereo {stereo.shape} must be equal 2D shapes')
        if not (np.all(np.isfinite(mono)) and np.all(np.isfinite(stereo))):
            raise ValueError('depth images must be finite')
        if np.any(mono < 0):
            raise ValueError('relative inverse depth must be non-negative')
        object.__setattr__(self, 'mono', mono)
        object.__setattr__(self, 'stereo', stereo)

    @property
    def shape(self):
        return self.mono.shape

    def valid_mask(self, options=FusionOptions()):
        return (self.stereo >= options.min_depth_mm) & (self.stereo <= options.max_depth_mm)


@dataclass(frozen=True)
class ScaleFit:
    alpha2: float
    alpha1: float
    alpha0: float
    n_valid: int
    residual_rms: float
    std_errors: tuple = (math.nan, math.nan, math.nan)
    scale: str = 'inverse'

    @property
    def coefficients(self):
        return np.array([self.alpha2, self.alpha1, self.alpha0])

    def inverse_depth(self, mono):
        mono = np.asarray(mono, dtype=float)
        return self.alpha2 * mono ** 2 + self.alpha1 * mono + self.alpha0


@dataclass(frozen=True)
class CompletedDepth:
    depth_mm: np.ndarray
    valid: np.ndarray

    @property
    def shape(self):
        return self.depth_mm.shape


@dataclass(frozen=True)
class DepthComparison:
    completeness: float
    n_compared: int
    mae_mm: float
    rmse_mm: float
    near_mae_mm: float
    far_mae_mm: float


def _samples(pair, options):
    valid = pair.valid_mask(options)
    idx = np.flatnonzero(valid)
    if idx.size < 3:
        raise InsufficientSamplesError(f'{idx.size} valid stereo pixels, need at least 3')
    if idx.size > options.max_samples:
        stride = int(math.ceil(idx.size / options.max_samples))
        idx = idx[::stride]
    return pair.mono.ravel()[idx], pair.stereo.ravel()[idx]


def _design(mono):
    return np.column_stack([mono ** 2, mono, np.ones_like(mono)])


def fit_scale(pair, options=FusionOptions()):
    mono, stereo = _samples(pair, options)
    X = _design(mono)
    y = 1.0 / stereo

    # column scaling keeps d_m^2 and d_m comparable before the QR
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise DegenerateDesignError('design matrix has an all-zero column')
    Q, R = np.linalg.qr(X / norms, mode='reduced')
    diag = np.abs(np.diag(R))
    if diag.min() <= _RANK_TOL * diag.max():
        raise DegenerateDesignError('relative depth does not span a quadratic model (rank deficient)')
    beta = linalg.solve_triangular(R, Q.T @ y)
    alpha = beta / norms

    residual = y - X @ alpha
    n = y.size
    rms = float(np.sqrt(np.mean(residual ** 2)))
    if n > 3:
        sigma2 = float(residual @ residual) / (n - 3)
        r_inv = linalg.solve_triangular(R, np.eye(3))
        cov = sigma2 * (r_inv @ r_inv.T) / np.outer(norms, norms)
        std = tuple(float(s) for s in np.sqrt(np.clip(np.diag(cov), 0.0, None)))
    else:
        std = (math.nan, math.nan, math.nan)
    return ScaleFit(float(alpha[0]), float(alpha[1]), float(alpha[2]), int(n), rms, std, 'inverse')


def fit_scale_metric(pair, options=FusionOptions(), initial=None):
    """Same model fitted on the mm scale: min sum (d_s - 1/(a2 m^2 + a1 m + a0))^2."""
    if initial is None:
        initial = fit_scale(pair, options)
    mono, stereo = _samples(pair, options)
    X = _design(mono)
    scale = np.abs(initial.coefficients)
    scale[scale == 0] = 1.0

    def residual(beta):
        denom = X @ (beta * scale)
        denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
        return stereo - 1.0 / denom

    result = optimize.least_squares(residual, initial.coefficients / scale, method='lm')
    alpha = result.x * scale
    rms = float(np.sqrt(np.mean(result.fun ** 2)))
    return ScaleFit(float(alpha[0]), float(alpha[1]), float(alpha[2]), int(mono.size), rms, scale='metric')


def complete_depth(pair, fit, options=FusionOptions()):
    denom = fit.inverse_depth(pair.mono)
    valid = np.isfinite(denom) & (denom >= 1.0 / options.max_depth_mm)
    depth = np.zeros_like(denom)
    depth[valid] = 1.0 / denom[valid]
    return CompletedDepth(depth, valid)


def depth_to_points(depth, intrinsics, pose):
    """Back-project valid pixels (z-depth in mm) to world points in meters."""
    v, u = np.nonzero(depth.valid)
    z = depth.depth_mm[v, u] / 1000.0
    x = (u - intrinsics.cx) * z / intrinsics.fx
    y = (v - intrinsics.cy) * z / intrinsics.fy
    points = np.column_stack([x, y, z])
    if pose is None:
        return points
    return pose.apply(points)


def compare_depth(reference_mm, candidate_mm, candidate_valid=None, near_mm=2000.0):
    """Error of a candidate depth image against a reference, over pixels where
    both are valid; completeness is the valid fraction of the candidate among
    reference-valid pixels."""
    reference_mm = np.asarray(reference_mm, dtype=float)
    candidate_mm = np.asarray(candidate_mm, dtype=float)
    ref_valid = reference_mm > 0
    cand_valid = candidate_mm > 0 if candidate_valid is None else np.asarray(candidate_valid, dtype=bool)
    both = ref_valid & cand_valid
    n_ref = int(ref_valid.sum())
    completeness = float(both.sum()) / n_ref if n_ref else 0.0
    if not both.any():
        return DepthComparison(completeness, 0, math.nan, math.nan, math.nan, math.nan)
    err = np.abs(candidate_mm[both] - reference_mm[both])
    near = reference_mm[both] < near_mm
    near_mae = float(err[near].mean()) if near.any() else math.nan
    far_mae = float(err[~near].mean()) if (~near).any() else math.nan
    return DepthComparison(completeness, int(both.sum()), float(err.mean()),
                           float(np.sqrt(np.mean(err ** 2))), near_mae, far_mae)


def write_pgm16(path, depth_mm):
    """16-bit depth image in mm; the format follows the file extension (.pgm, .png)."""
    img = np.clip(np.rint(np.asarray(depth_mm, dtype=float)), 0, 65535).astype(np.uint16)
    try:
        written = cv2.imwrite(str(path), img)
    except cv2.error as e:
        raise DepthFileError(f'cannot write {path}: {e}') from e
    if not written:
        raise DepthFileError(f'cannot write {path}')


def read_pgm16(path):
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DepthFileError(f'cannot read {path}')
    if img.ndim != 2:
        raise DepthFileError(f'{path}: expected a single-channel depth image, got shape {img.shape}')
    return img.astype(float)


_DPTH = struct.Struct('<4sII')


def write_dpth(path, image):
    image = np.asarray(image, dtype='<f4')
    height, width = image.shape
    with open(path, 'wb') as f:
        f.write(_DPTH.pack(b'DPTH', width, height))
        f.write(image.tobytes())


def read_dpth(path):
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise DepthFileError(f'cannot read {path}: {e}') from e
    if len(data) < _DPTH.size:
        raise DepthFileError(f'{path}: missing DPTH header')
    magic, width, height = _DPTH.unpack_from(data)
    if magic != b'DPTH':
        raise DepthFileError(f'{path}: bad magic {magic!r}')
    payload = np.frombuffer(data, dtype='<f4', offset=_DPTH.size)
    if payload.size != width * height:
        raise DepthFileError(f'{path}: expected {width * height} values, found {payload.size}')
    return payload.reshape(height, width).astype(float)
