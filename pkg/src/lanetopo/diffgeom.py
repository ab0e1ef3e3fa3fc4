"""Tensor-valued geometry used inside the model forward pass.

Mirrors the analytic functions in `geometry` but stays on the tape so
gradients reach control points, queries, and feature grids.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .geometry import CameraModel, SinusoidalConfig, bernstein_matrix
from .tensor import Tensor

# Keeps chord normalization and clamped logits away from singularities.
_EPS = 1e-9


def sin_encode(values: Tensor, cfg: SinusoidalConfig) -> Tensor:
    """values (..., V) -> (..., V * output_dim), interleaved sin/cos."""
    freqs = Tensor(cfg.frequencies())
    phases = (values * cfg.input_scale).reshape(values.shape + (1,)) * freqs
    inter = T.stack([T.sin(phases), T.cos(phases)], axis=-1)
    return inter.reshape(values.shape[:-1] + (values.shape[-1] * cfg.output_dim,))


def bezier_points(cp: Tensor, k: int) -> Tensor:
    """Sample each curve at K uniform parameters: (N, 4, 3) -> (N, K, 3)."""
    ts = np.arange(k, dtype=np.float64) / (k - 1)
    basis = Tensor(bernstein_matrix(ts)[None, :, :])  # (1, K, 4)
    return T.matmul(basis, cp)


def pairwise_endpoint_distance(cp: Tensor) -> Tensor:
    """(N, 4, 3) -> (N, N) minimum BEV endpoint distance, exactly symmetric."""
    starts = cp[:, 0, :2]
    ends = cp[:, 3, :2]
    dists = []
    for pa in (starts, ends):
        for pb in (starts, ends):
            n = pa.shape[0]
            diff = pa.reshape(n, 1, 2) - pb.reshape(1, n, 2)
            dists.append(T.sqrt((diff * diff).sum(axis=-1) + _EPS ** 2))
    return T.stack(dists, axis=0).min(axis=0)


def pairwise_chord_angle(cp: Tensor) -> Tensor:
    """(N, 4, 3) -> (N, N) unsigned angle between BEV chords, in [0, pi]."""
    chord = cp[:, 3, :2] - cp[:, 0, :2]
    norm = T.sqrt((chord * chord).sum(axis=-1, keepdims=True) + _EPS ** 2)
    u = chord / norm  # (N, 2)
    n = u.shape[0]
    ux, uy = u[:, 0], u[:, 1]
    cross = ux.reshape(n, 1) * uy.reshape(1, n) - uy.reshape(n, 1) * ux.reshape(1, n)
    dot = ux.reshape(n, 1) * ux.reshape(1, n) + uy.reshape(n, 1) * uy.reshape(1, n)
    return T.atan2(T.tabs(cross), dot)


def inverse_sigmoid(x: Tensor, eps: float = 1e-6) -> Tensor:
    x = T.clip(x, eps, 1.0 - eps)
    return T.log(x / (1.0 - x))


def project_points(cam: CameraModel, pts: Tensor) -> tuple[Tensor, np.ndarray]:
    """Differentiable pinhole projection of (P, 3) world points.

    Returns (pixels (P, 2), validity mask as plain bool array). Depth is
    clamped below at min_depth so invalid points stay finite; their pixels
    are meaningless and masked off by callers.
    """
    rot = Tensor(cam.rotation)
    trans = Tensor(cam.translation)
    xc = T.matmul(pts, T.transpose(rot, (1, 0))) + trans
    z_raw = xc[:, 2]
    z = T.clip(z_raw, cam.min_depth, None)
    fx, fy = cam.intrinsics[0, 0], cam.intrinsics[1, 1]
    cx, cy = cam.intrinsics[0, 2], cam.intrinsics[1, 2]
    u = xc[:, 0] / z * fx + cx
    v = xc[:, 1] / z * fy + cy
    pix = T.stack([u, v], axis=1)
    w, h = cam.image_size
    ud, vd, zd = u.detach(), v.detach(), z_raw.detach()
    valid = (zd > cam.min_depth) & (ud >= 0) & (ud <= w - 1) & (vd >= 0) & (vd <= h - 1)
    return pix, valid
