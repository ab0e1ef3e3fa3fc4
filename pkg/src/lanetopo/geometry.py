"""Analytic geometry: cubic Bezier lanes, pairwise lane relations, sinusoidal
encodings, set/curve distances, and pinhole projection.

Everything here operates on plain numpy arrays and is side-effect free; the
differentiable counterparts used inside the model live in `diffgeom`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

DEGENERATE_CHORD_EPS = 1e-9


@dataclass
class BezierLane:
    """Directed cubic Bezier centerline: 4 control points in meters, start at t=0."""

    control_points: np.ndarray  # (4, 3)
    confidence: float = 1.0
    class_id: int = 0

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=np.float64)
        if cp.shape != (4, 3):
            raise DataError(f"BezierLane needs 4 control points in 3D, got shape {cp.shape}")
        if not np.all(np.isfinite(cp)):
            raise DataError("BezierLane control points must be finite")
        self.control_points = cp

    @property
    def start(self) -> np.ndarray:
        return self.control_points[0]

    @property
    def end(self) -> np.ndarray:
        return self.control_points[3]

    def __eq__(self, other) -> bool:
        return (isinstance(other, BezierLane)
                and np.array_equal(self.control_points, other.control_points)
                and self.confidence == other.confidence
                and self.class_id == other.class_id)


@dataclass
class CameraModel:
    """Pinhole camera: x_cam = R @ x_world + t, u = fx*x/z + cx, v = fy*y/z + cy."""

    intrinsics: np.ndarray   # (3, 3)
    rotation: np.ndarray     # (3, 3) world -> camera
    translation: np.ndarray  # (3,)
    image_size: tuple        # (width, height) pixels
    min_depth: float = 0.1

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))
        R = self.rotation
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise DataError("camera rotation must be orthonormal with determinant +1")
        if self.intrinsics[0, 0] <= 0 or self.intrinsics[1, 1] <= 0:
            raise DataError("camera focal lengths must be positive")

    def __eq__(self, other) -> bool:
        return (isinstance(other, CameraModel)
                and np.array_equal(self.intrinsics, other.intrinsics)
                and np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation)
                and self.image_size == other.image_size)


@dataclass
class SinusoidalConfig:
    output_dim: int = 32
    temperature: float = 10000.0
    input_scale: float = 1.0

    def __post_init__(self):
        if self.output_dim % 2 != 0 or self.output_dim <= 0:
            raise DataError("sinusoidal output_dim must be a positive even integer")
        if self.temperature <= 0:
            raise DataError("sinusoidal temperature must be positive")

    def frequencies(self) -> np.ndarray:
        half = self.output_dim // 2
        return self.temperature ** (-2.0 * np.arange(half) / self.output_dim)


# ----------------------------------------------------------------------
# Bezier curves
# ----------------------------------------------------------------------


def bernstein_matrix(ts: np.ndarray) -> np.ndarray:
    """Cubic Bernstein basis evaluated at each t: rows (K, 4)."""
    t = np.asarray(ts, dtype=np.float64)
    u = 1.0 - t
    return np.stack([u ** 3, 3.0 * u * u * t, 3.0 * u * t * t, t ** 3], axis=-1)


def _control_points(lane) -> np.ndarray:
    if isinstance(lane, BezierLane):
        return lane.control_points
    cp = np.asarray(lane, dtype=np.float64)
    if cp.shape != (4, 3):
        raise DataError(f"expected 4x3 control points, got {cp.shape}")
    return cp


def bezier_eval(lane, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise DataError(f"bezier parameter t={t} outside [0, 1]")
    cp = _control_points(lane)
    return bernstein_matrix(np.array([t]))[0] @ cp


def bezier_sample(lane, k: int) -> np.ndarray:
    """K points at uniform parameters; endpoints reproduced exactly."""
    if k < 2:
        raise DataError(f"bezier_sample needs K >= 2, got {k}")
    cp = _control_points(lane)
    ts = np.arange(k, dtype=np.float64) / (k - 1)
    return bernstein_matrix(ts) @ cp


def fit_bezier(points: np.ndarray) -> np.ndarray:
    """Least-squares cubic fit to a polyline, parametrized uniformly in t.

    Import utility only: scene ground truth is authored as control points
    directly. Exact (to solver precision) when the polyline samples an
    actual cubic at uniform parameters.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 4:
        raise DataError("fit_bezier needs at least 4 points")
    ts = np.arange(pts.shape[0], dtype=np.float64) / (pts.shape[0] - 1)
    basis = bernstein_matrix(ts)
    cp, *_ = np.linalg.lstsq(basis, pts, rcond=None)
    return cp


# ----------------------------------------------------------------------
# pairwise lane relations (BEV x,y plane)
# ----------------------------------------------------------------------


def endpoint_min_distance(a, b) -> float:
    """Minimum BEV distance over the four start/end pairings."""
    ca, cb = _control_points(a), _control_points(b)
    pa = np.stack([ca[0, :2], ca[3, :2]])
    pb = np.stack([cb[0, :2], cb[3, :2]])
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=-1)
    return float(d.min())


def angle_difference(a, b) -> float:
    """Unsigned angle in [0, pi] between BEV chord directions (end - start)."""
    ca, cb = _control_points(a), _control_points(b)
    va = ca[3, :2] - ca[0, :2]
    vb = cb[3, :2] - cb[0, :2]
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na < DEGENERATE_CHORD_EPS or nb < DEGENERATE_CHORD_EPS:
        raise DataError("angle_difference: degenerate lane chord (start == end)")
    cross = va[0] * vb[1] - va[1] * vb[0]
    dot = va @ vb
    return float(np.arctan2(abs(cross), dot))


# ----------------------------------------------------------------------
# encodings
# ----------------------------------------------------------------------


def sinusoidal_encode(values, cfg: SinusoidalConfig) -> np.ndarray:
    """Interleaved sin/cos features per scalar; multiple scalars concatenate."""
    vals = np.atleast_1d(np.asarray(values, dtype=np.float64)) * cfg.input_scale
    phases = vals[:, None] * cfg.frequencies()[None, :]
    inter = np.stack([np.sin(phases), np.cos(phases)], axis=-1)  # (V, D/2, 2)
    return inter.reshape(-1)


# ----------------------------------------------------------------------
# set / curve distances
# ----------------------------------------------------------------------


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean Chamfer distance between two point sets."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise DataError("chamfer_distance: empty point set")
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return float(0.5 * d.min(axis=1).mean() + 0.5 * d.min(axis=0).mean())


def discrete_frechet(a: np.ndarray, b: np.ndarray) -> float:
    """Discrete Frechet distance via dynamic programming over the coupling lattice."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] == 0 or b.shape[0] == 0:
        raise DataError("discrete_frechet: polylines must be non-empty point sequences")
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    n, m = d.shape
    ca = np.empty_like(d)
    ca[0, 0] = d[0, 0]
    for j in range(1, m):
        ca[0, j] = max(ca[0, j - 1], d[0, j])
    for i in range(1, n):
        ca[i, 0] = max(ca[i - 1, 0], d[i, 0])
        for j in range(1, m):
            ca[i, j] = max(min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]), d[i, j])
    return float(ca[n - 1, m - 1])


# ----------------------------------------------------------------------
# projection
# ----------------------------------------------------------------------


def project_to_image(cam: CameraModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World points -> (pixels (n,2), validity (n,)).

    A point is valid iff its camera-frame depth exceeds `min_depth` and its
    pixel falls inside the image; invalid rows carry unspecified pixels.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    xc = pts @ cam.rotation.T + cam.translation
    z = xc[:, 2]
    safe_z = np.where(np.abs(z) < 1e-12, 1e-12, z)
    fx, fy = cam.intrinsics[0, 0], cam.intrinsics[1, 1]
    cx, cy = cam.intrinsics[0, 2], cam.intrinsics[1, 2]
    u = fx * xc[:, 0] / safe_z + cx
    v = fy * xc[:, 1] / safe_z + cy
    w, h = cam.image_size
    valid = (z > cam.min_depth) & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    return np.stack([u, v], axis=1), valid
