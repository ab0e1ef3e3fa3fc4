"""Geometry-biased self-attention and curve-guided deformable cross-attention."""

from __future__ import annotations

import numpy as np

from . import diffgeom, tensor as T
from .errors import ShapeError
from .geometry import BezierLane, SinusoidalConfig
from .nn import MLP, Linear
from .params import ParameterSet
from .tensor import Tensor


def _as_control_tensor(lanes) -> Tensor:
    if isinstance(lanes, Tensor):
        return lanes
    cps = np.stack([l.control_points if isinstance(l, BezierLane) else np.asarray(l) for l in lanes])
    return Tensor(cps)


class GeometryBias:
    """Pairwise (min endpoint distance, chord angle) -> per-head attention bias."""

    def __init__(self, params: ParameterSet, rng, name: str, heads: int,
                 pe_dim: int = 16, hidden: int = 32, input_scale: float = 1.0):
        self.heads = heads
        self.enc_cfg = SinusoidalConfig(output_dim=pe_dim, input_scale=input_scale)
        self.mlp = MLP(params, rng, name, [2 * pe_dim, hidden, heads])

    def __call__(self, lanes) -> Tensor:
        """(N lanes) -> bias (heads, N, N); symmetric per head by construction."""
        cp = _as_control_tensor(lanes)
        dist = diffgeom.pairwise_endpoint_distance(cp)
        angle = diffgeom.pairwise_chord_angle(cp)
        feats = T.stack([dist, angle], axis=-1)              # (N, N, 2)
        enc = diffgeom.sin_encode(feats, self.enc_cfg)        # (N, N, 2*pe)
        return T.transpose(self.mlp(enc), (2, 0, 1))          # (heads, N, N)


class SelfAttention:
    """Standard multi-head self-attention with an optional pre-softmax bias."""

    def __init__(self, params: ParameterSet, rng, name: str, dim: int, heads: int):
        if dim % heads != 0:
            raise ShapeError(f"self-attention dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.dh = dim, heads, dim // heads
        self.q = Linear(params, rng, f"{name}.q", dim, dim)
        self.k = Linear(params, rng, f"{name}.k", dim, dim)
        self.v = Linear(params, rng, f"{name}.v", dim, dim)
        self.out = Linear(params, rng, f"{name}.out", dim, dim)

    def __call__(self, x: Tensor, bias: Tensor | None = None) -> Tensor:
        n = x.shape[0]
        if bias is not None and bias.shape[-1] != n:
            raise ShapeError(f"attention bias {bias.shape} does not match {n} queries")
        q = T.transpose(self.q(x).reshape(n, self.heads, self.dh), (1, 0, 2))
        k = T.transpose(self.k(x).reshape(n, self.heads, self.dh), (1, 2, 0))
        v = T.transpose(self.v(x).reshape(n, self.heads, self.dh), (1, 0, 2))
        scores = T.matmul(q, k) * (1.0 / np.sqrt(self.dh))    # (heads, N, N)
        if bias is not None:
            scores = scores + bias
        attn = T.softmax_lastdim(scores)
        mixed = T.matmul(attn, v)                             # (heads, N, dh)
        return self.out(T.transpose(mixed, (1, 0, 2)).reshape(n, self.dim))


def geometry_biased_self_attention(queries: Tensor, lanes, sa: SelfAttention,
                                   gbias: GeometryBias) -> Tensor:
    cp = _as_control_tensor(lanes)
    if cp.shape[0] != queries.shape[0]:
        raise ShapeError(f"{queries.shape[0]} queries vs {cp.shape[0]} lanes")
    return sa(queries, gbias(cp))


class DeformableCrossAttention:
    """One shared query emits offsets and weights for all its reference points.

    Weights are softmax-normalized jointly over the K * N sampling locations
    per head (per-point normalization over N available for ablation). Sampled
    grid values use zero border padding, so out-of-view references contribute
    nothing.
    """

    def __init__(self, params: ParameterSet, rng, name: str, dim: int, heads: int,
                 n_points: int, n_offsets: int, normalize_per_point: bool = False):
        if dim % heads != 0:
            raise ShapeError(f"cross-attention dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.dh = dim, heads, dim // heads
        self.k, self.n_off = n_points, n_offsets
        self.normalize_per_point = normalize_per_point
        total = heads * n_points * n_offsets
        self.offset = Linear(params, rng, f"{name}.offset", dim, total * 2, zero_init=True)
        self.weight = Linear(params, rng, f"{name}.weight", dim, total, zero_init=True)
        self.value = Linear(params, rng, f"{name}.value", dim, dim)
        self.out = Linear(params, rng, f"{name}.out", dim, dim)
        self.offset_scale = params.add(f"{name}.offset_scale", np.ones(heads))
        # spread initial samples like deformable DETR: one ring direction per
        # head, growing magnitude per offset slot
        bias = np.zeros((heads, n_points, n_offsets, 2))
        for m in range(heads):
            ang = 2.0 * np.pi * m / heads
            for i in range(n_offsets):
                bias[m, :, i] = (i + 1) * np.array([np.sin(ang), np.cos(ang)])
        self.offset.bias.data = bias.reshape(-1)

    def __call__(self, queries: Tensor, refs: Tensor, grid: Tensor) -> Tensor:
        """queries (Nq, C), refs (Nq, K, 2) in grid units, grid (H, W, C)."""
        nq = queries.shape[0]
        if refs.shape != (nq, self.k, 2):
            raise ShapeError(f"reference points {refs.shape} do not match "
                             f"(queries={nq}, K={self.k})")
        m, k, n = self.heads, self.k, self.n_off
        off = self.offset(queries).reshape(nq, m, k, n, 2)
        off = off * self.offset_scale.reshape(1, m, 1, 1, 1)
        locs = refs.reshape(nq, 1, k, 1, 2) + off             # (Nq, M, K, N, 2)

        w_logits = self.weight(queries)
        if self.normalize_per_point:
            w = T.softmax_lastdim(w_logits.reshape(nq, m, k, n)) * (1.0 / k)
            w = w.reshape(nq, m, k * n)
        else:
            w = T.softmax_lastdim(w_logits.reshape(nq, m, k * n))

        vgrid = self.value(grid)                              # (H, W, C)
        sampled = T.bilinear_sample(vgrid, locs.reshape(nq * m * k * n, 2))
        sampled = sampled.reshape(nq, m, k * n, self.dim)

        head_outs = []
        for h in range(m):
            vals = sampled[:, h, :, h * self.dh:(h + 1) * self.dh]  # (Nq, KN, dh)
            wh = w[:, h, :].reshape(nq, 1, k * n)
            head_outs.append(T.matmul(wh, vals).reshape(nq, self.dh))
        return self.out(T.concat(head_outs, axis=-1))

    def sampling_weights(self, queries: Tensor) -> Tensor:
        """Normalized (Nq, heads, K*N) weights, for inspection and invariants."""
        nq = queries.shape[0]
        m, k, n = self.heads, self.k, self.n_off
        w_logits = self.weight(queries)
        if self.normalize_per_point:
            w = T.softmax_lastdim(w_logits.reshape(nq, m, k, n)) * (1.0 / k)
            return w.reshape(nq, m, k * n)
        return T.softmax_lastdim(w_logits.reshape(nq, m, k * n))
