"""Topology heads producing adjacency logits.

The lane-to-lane head augments a pairwise relation block with endpoint
positional terms and an end-to-start distance embedding; the lane-to-traffic
head aligns BEV lane queries with front-view features sampled along each
projected curve before pairing them with traffic-element queries.
"""

from __future__ import annotations

import numpy as np

from . import diffgeom, tensor as T
from .errors import ShapeError
from .geometry import CameraModel, SinusoidalConfig
from .nn import MLP, Linear
from .params import ParameterSet
from .tensor import Tensor

_EPS2 = 1e-18


def broadcast_concat(a: Tensor, b: Tensor) -> Tensor:
    """Pair every row feature with every column feature: (N,C),(M,C) -> (N,M,2C)."""
    n, c = a.shape
    m = b.shape[0]
    left = T.broadcast_to(a.reshape(n, 1, c), (n, m, c))
    right = T.broadcast_to(b.reshape(1, m, c), (n, m, c))
    return T.concat([left, right], axis=-1)


class L2LHead:
    """Directed lane-pair logits; entry (i, j) scores "lane j succeeds lane i"."""

    def __init__(self, params: ParameterSet, rng, name: str, dim: int,
                 pe_dim: int = 16, baseline: bool = False):
        self.dim = dim
        self.baseline = baseline
        self.enc_cfg = SinusoidalConfig(output_dim=pe_dim)
        self.pred_side = MLP(params, rng, f"{name}.pred_side", [dim, dim, dim])
        self.succ_side = MLP(params, rng, f"{name}.succ_side", [dim, dim, dim])
        self.pair_proj = Linear(params, rng, f"{name}.pair_proj", 2 * dim, dim)
        if not baseline:
            self.pe_end = Linear(params, rng, f"{name}.pe_end", 2 * pe_dim, dim)
            self.pe_start = Linear(params, rng, f"{name}.pe_start", 2 * pe_dim, dim)
            self.dist_mlp = MLP(params, rng, f"{name}.dist_mlp", [pe_dim, dim, dim])
        self.predict = MLP(params, rng, f"{name}.predict", [dim, dim, 1])

    def relation_embedding(self, queries: Tensor, cp: Tensor) -> Tensor:
        """(N, C) queries and (N, 4, 3) control points -> (N, N, C) block."""
        n = queries.shape[0]
        if n == 0:
            raise ShapeError("relation embedding needs at least one lane")
        g = self.pair_proj(broadcast_concat(self.pred_side(queries), self.succ_side(queries)))
        if self.baseline:
            return g
        ends = diffgeom.sin_encode(cp[:, 3, :2], self.enc_cfg)
        starts = diffgeom.sin_encode(cp[:, 0, :2], self.enc_cfg)
        pe = self.pe_end(ends).reshape(n, 1, self.dim) + self.pe_start(starts).reshape(1, n, self.dim)
        return g + pe

    def dist_embedding(self, cp: Tensor) -> Tensor:
        """Entry (i, j) embeds the BEV gap between lane i's end and lane j's start."""
        n = cp.shape[0]
        ends = cp[:, 3, :2]
        starts = cp[:, 0, :2]
        diff = ends.reshape(n, 1, 2) - starts.reshape(1, n, 2)
        gap = T.sqrt((diff * diff).sum(axis=-1) + _EPS2)       # (N, N)
        enc = diffgeom.sin_encode(gap.reshape(n, n, 1), self.enc_cfg)
        return self.dist_mlp(enc)

    def __call__(self, queries: Tensor, cp: Tensor) -> Tensor:
        g = self.relation_embedding(queries, cp)
        if not self.baseline:
            g = g + self.dist_embedding(cp)
        n = queries.shape[0]
        return self.predict(g).reshape(n, n)


class L2THead:
    """Cross-view lane/traffic-element logits.

    Lane queries are augmented with front-view features sampled at the
    projected on-curve points and a positional term at their mean valid
    pixel; lanes with no visible point keep only the query pathway.
    """

    def __init__(self, params: ParameterSet, rng, name: str, dim: int,
                 pe_dim: int = 16, n_samples: int = 11, baseline: bool = False):
        self.dim = dim
        self.k = n_samples
        self.baseline = baseline
        self.enc_cfg = SinusoidalConfig(output_dim=pe_dim, input_scale=0.02)
        self.lane_side = MLP(params, rng, f"{name}.lane_side", [dim, dim, dim])
        self.te_side = MLP(params, rng, f"{name}.te_side", [dim, dim, dim])
        if not baseline:
            self.pe_lane = Linear(params, rng, f"{name}.pe_lane", 2 * pe_dim, dim)
            self.pe_te = Linear(params, rng, f"{name}.pe_te", 2 * pe_dim, dim)
        self.pair_proj = Linear(params, rng, f"{name}.pair_proj", 2 * dim, dim)
        self.predict = MLP(params, rng, f"{name}.predict", [dim, dim, 1])

    def _aligned_lane_queries(self, q_lane: Tensor, cp: Tensor, cam: CameraModel,
                              fv_grid: Tensor) -> Tensor:
        n = q_lane.shape[0]
        pts = diffgeom.bezier_points(cp, self.k).reshape(n * self.k, 3)
        pix, valid = diffgeom.project_points(cam, pts)
        h, w, _ = fv_grid.shape
        wi, hi = cam.image_size
        rows = pix[:, 1] * ((h - 1) / (hi - 1))
        cols = pix[:, 0] * ((w - 1) / (wi - 1))
        sampled = T.bilinear_sample(fv_grid, T.stack([rows, cols], axis=1))

        mask = Tensor(valid.astype(np.float64).reshape(n, self.k, 1))
        count = valid.reshape(n, self.k).sum(axis=1)
        denom = Tensor(np.maximum(count, 1.0).reshape(n, 1))
        f2d = (sampled.reshape(n, self.k, self.dim) * mask).sum(axis=1) / denom

        mean_pix = (pix.reshape(n, self.k, 2) * mask).sum(axis=1) / denom
        has_any = Tensor((count > 0).astype(np.float64).reshape(n, 1))
        pe2d = self.pe_lane(diffgeom.sin_encode(mean_pix, self.enc_cfg)) * has_any
        return self.lane_side(q_lane) + f2d + pe2d

    def __call__(self, q_lane: Tensor, cp: Tensor, cam: CameraModel, fv_grid: Tensor,
                 q_te: Tensor, te_boxes_px: Tensor) -> Tensor:
        n, m = q_lane.shape[0], q_te.shape[0]
        if self.baseline:
            ql = self.lane_side(q_lane)
            qt = self.te_side(q_te)
        else:
            ql = self._aligned_lane_queries(q_lane, cp, cam, fv_grid)
            qt = self.te_side(q_te) + self.pe_te(diffgeom.sin_encode(te_boxes_px[:, :2], self.enc_cfg))
        g = self.pair_proj(broadcast_concat(ql, qt))
        return self.predict(g).reshape(n, m)
