"""Lane and traffic-element decoders assembled into one forward pass.

Lane queries run L layers of geometry-biased self-attention (the bias is
refreshed each layer from the current curve estimates), curve-guided
cross-attention against the BEV grid, and a feed-forward block; a
zero-initialized regression head per layer refines normalized control points
in inverse-sigmoid space. The traffic-element decoder is the same machinery
with plain self-attention and a single box-center reference point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffgeom, tensor as T
from .attention import DeformableCrossAttention, GeometryBias, SelfAttention
from .errors import ConfigError, ShapeError
from .geometry import BezierLane, CameraModel
from .nn import MLP, LayerNorm, Linear
from .params import ParameterSet
from .scenes import FeatureGrid, TE_CLASS_NAMES
from .tensor import Tensor


@dataclass
class ModelConfig:
    layers: int = 2
    n_lane: int = 20
    n_te: int = 8
    channels: int = 32
    heads: int = 4
    offsets: int = 2            # sampling offsets per reference point
    samples: int = 11           # on-curve reference points per lane
    ffn: int = 64
    pe_dim: int = 16
    n_te_classes: int = len(TE_CLASS_NAMES)
    bev_channels: int = 4
    fv_channels: int = 3
    z_range: tuple = (-1.0, 1.0)
    geometry_input_scale: float = 0.25
    plain_sa: bool = False
    no_curve_ca: bool = False
    baseline_l2l: bool = False
    baseline_l2t: bool = False
    normalize_per_point: bool = False

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError("model needs at least one decoder layer")
        if self.samples < 2 or self.samples % 2 == 0:
            raise ConfigError(f"curve sample count must be odd and >= 2, got {self.samples}")
        if self.channels % self.heads != 0:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.z_range[1] <= self.z_range[0]:
            raise ConfigError("degenerate z range")


@dataclass
class LanePredictions:
    control_points_norm: list      # per layer: Tensor (N, 4, 3) in [0, 1]
    control_points: list           # per layer: Tensor (N, 4, 3) meters
    class_logits: list             # per layer: Tensor (N, 1)
    queries: Tensor                # final refined lane queries (N, C)

    def final_lanes(self) -> list[BezierLane]:
        cp = self.control_points[-1].detach()
        conf = _sigmoid_np(self.class_logits[-1].detach()[:, 0])
        return [BezierLane(cp[i].copy(), confidence=float(conf[i])) for i in range(cp.shape[0])]


@dataclass
class TePredictions:
    boxes_norm: list               # per layer: Tensor (M, 4) cx cy w h in [0, 1]
    class_logits: list             # per layer: Tensor (M, n_classes)
    queries: Tensor

    def final_boxes_px(self, image_size) -> np.ndarray:
        w, h = image_size
        b = self.boxes_norm[-1].detach().copy()
        return b * np.array([w, h, w, h])

    def final_scores(self) -> np.ndarray:
        return _sigmoid_np(self.class_logits[-1].detach())


@dataclass
class ForwardOutput:
    lanes: LanePredictions
    tes: TePredictions
    t_l2l: Tensor                  # (N, N) adjacency logits
    t_l2t: Tensor                  # (N, M)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


class LaneTopoModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        from .topology import L2LHead, L2THead

        self.cfg = cfg
        self.params = ParameterSet()
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1A5E]))
        p, c = self.params, cfg.channels

        self.bev_proj = Linear(p, rng, "bev_proj", cfg.bev_channels, c)
        self.fv_proj = Linear(p, rng, "fv_proj", cfg.fv_channels, c)

        self.lane_embed = p.add("lane_embed", rng.normal(0.0, 1.0, (cfg.n_lane, c)))
        self.lane_ref_init = Linear(p, rng, "lane_ref_init", c, 12)
        self.lane_layers = []
        ca_points = 4 if cfg.no_curve_ca else cfg.samples
        for i in range(cfg.layers):
            name = f"lane_decoder.layer{i}"
            layer = {
                "sa": SelfAttention(p, rng, f"{name}.sa", c, cfg.heads),
                "ln1": LayerNorm(p, f"{name}.ln1", c),
                "ca": DeformableCrossAttention(p, rng, f"{name}.ca", c, cfg.heads,
                                               ca_points, cfg.offsets,
                                               cfg.normalize_per_point),
                "ln2": LayerNorm(p, f"{name}.ln2", c),
                "ffn": MLP(p, rng, f"{name}.ffn", [c, cfg.ffn, c]),
                "ln3": LayerNorm(p, f"{name}.ln3", c),
                "cls": Linear(p, rng, f"{name}.cls", c, 1),
                "reg": Linear(p, rng, f"{name}.reg", c, 12, zero_init=True),
            }
            if not cfg.plain_sa:
                layer["gbias"] = GeometryBias(p, rng, f"{name}.gbias", cfg.heads,
                                              cfg.pe_dim, input_scale=cfg.geometry_input_scale)
            self.lane_layers.append(layer)

        self.te_embed = p.add("te_embed", rng.normal(0.0, 1.0, (cfg.n_te, c)))
        self.te_ref_init = Linear(p, rng, "te_ref_init", c, 4)
        self.te_layers = []
        for i in range(cfg.layers):
            name = f"te_decoder.layer{i}"
            self.te_layers.append({
                "sa": SelfAttention(p, rng, f"{name}.sa", c, cfg.heads),
                "ln1": LayerNorm(p, f"{name}.ln1", c),
                "ca": DeformableCrossAttention(p, rng, f"{name}.ca", c, cfg.heads,
                                               1, 4),
                "ln2": LayerNorm(p, f"{name}.ln2", c),
                "ffn": MLP(p, rng, f"{name}.ffn", [c, cfg.ffn, c]),
                "ln3": LayerNorm(p, f"{name}.ln3", c),
                "cls": Linear(p, rng, f"{name}.cls", c, cfg.n_te_classes),
                "reg": Linear(p, rng, f"{name}.reg", c, 4, zero_init=True),
            })

        self.l2l = L2LHead(p, rng, "l2l", c, cfg.pe_dim, baseline=cfg.baseline_l2l)
        self.l2t = L2THead(p, rng, "l2t", c, cfg.pe_dim, cfg.samples, baseline=cfg.baseline_l2t)

        # focal-friendly prior: rare positives start at low confidence
        for i in range(cfg.layers):
            self.lane_layers[i]["cls"].bias.data[:] = -2.0
            self.te_layers[i]["cls"].bias.data[:] = -2.0
        self.l2l.predict.layers[-1].bias.data[:] = -2.0
        self.l2t.predict.layers[-1].bias.data[:] = -2.0

    # ------------------------------------------------------------------

    def _denorm_lane(self, cp_norm: Tensor, extent) -> Tensor:
        x0, x1, y0, y1 = extent
        z0, z1 = self.cfg.z_range
        scale = Tensor(np.array([x1 - x0, y1 - y0, z1 - z0]))
        offset = Tensor(np.array([x0, y0, z0]))
        return cp_norm * scale + offset

    def normalize_lane(self, cp_m: np.ndarray, extent) -> np.ndarray:
        x0, x1, y0, y1 = extent
        z0, z1 = self.cfg.z_range
        scale = np.array([x1 - x0, y1 - y0, z1 - z0])
        offset = np.array([x0, y0, z0])
        return (np.asarray(cp_m) - offset) / scale

    def lane_decoder_forward(self, bev: FeatureGrid) -> LanePredictions:
        if bev.frame != "BEV":
            raise ShapeError(f"lane decoder expects a BEV grid, got frame '{bev.frame}'")
        if bev.values.shape[2] != self.cfg.bev_channels:
            raise ShapeError(f"BEV grid has {bev.values.shape[2]} channels, "
                             f"model expects {self.cfg.bev_channels}")
        grid = self.bev_proj(Tensor(bev.values))
        h, w, _ = grid.shape
        x0, x1, y0, y1 = bev.extent
        row_scale, col_scale = (h - 1) / (y1 - y0), (w - 1) / (x1 - x0)

        q = self.lane_embed
        cp_norm = T.sigmoid(self.lane_ref_init(q)).reshape(self.cfg.n_lane, 4, 3)
        out = LanePredictions([], [], [], q)
        for layer in self.lane_layers:
            cp_m = self._denorm_lane(cp_norm, bev.extent)
            bias = layer["gbias"](cp_m) if "gbias" in layer else None
            q = layer["ln1"](q + layer["sa"](q, bias))

            if self.cfg.no_curve_ca:
                ref_xy = cp_m[:, :, :2]                        # raw control points
            else:
                ref_xy = diffgeom.bezier_points(cp_m, self.cfg.samples)[:, :, :2]
            rows = (ref_xy[:, :, 1] - y0) * row_scale
            cols = (ref_xy[:, :, 0] - x0) * col_scale
            refs = T.stack([rows, cols], axis=-1)
            q = layer["ln2"](q + layer["ca"](q, refs, grid))
            q = layer["ln3"](q + layer["ffn"](q))

            delta = layer["reg"](q).reshape(self.cfg.n_lane, 4, 3)
            cp_norm = T.sigmoid(diffgeom.inverse_sigmoid(cp_norm) + delta)
            out.control_points_norm.append(cp_norm)
            out.control_points.append(self._denorm_lane(cp_norm, bev.extent))
            out.class_logits.append(layer["cls"](q))
        out.queries = q
        return out

    def te_decoder_forward(self, fv: FeatureGrid) -> TePredictions:
        if fv.frame != "FV":
            raise ShapeError(f"traffic-element decoder expects an FV grid, got '{fv.frame}'")
        if fv.values.shape[2] != self.cfg.fv_channels:
            raise ShapeError(f"FV grid has {fv.values.shape[2]} channels, "
                             f"model expects {self.cfg.fv_channels}")
        grid = self.fv_proj(Tensor(fv.values))
        h, w, _ = grid.shape

        q = self.te_embed
        box_norm = T.sigmoid(self.te_ref_init(q))              # (M, 4)
        out = TePredictions([], [], q)
        for layer in self.te_layers:
            q = layer["ln1"](q + layer["sa"](q))
            rows = box_norm[:, 1] * (h - 1)
            cols = box_norm[:, 0] * (w - 1)
            refs = T.stack([rows, cols], axis=-1).reshape(self.cfg.n_te, 1, 2)
            q = layer["ln2"](q + layer["ca"](q, refs, grid))
            q = layer["ln3"](q + layer["ffn"](q))
            delta = layer["reg"](q)
            box_norm = T.sigmoid(diffgeom.inverse_sigmoid(box_norm) + delta)
            out.boxes_norm.append(box_norm)
            out.class_logits.append(layer["cls"](q))
        out.queries = q
        return out

    def full_forward(self, bev: FeatureGrid, fv: FeatureGrid,
                     camera: CameraModel) -> ForwardOutput:
        lanes = self.lane_decoder_forward(bev)
        tes = self.te_decoder_forward(fv)
        cp_final = lanes.control_points[-1]
        t_l2l = self.l2l(lanes.queries, cp_final)
        wi, hi = camera.image_size
        te_px = tes.boxes_norm[-1] * Tensor(np.array([wi, hi, wi, hi], dtype=np.float64))
        fv_grid = self.fv_proj(Tensor(fv.values))
        t_l2t = self.l2t(lanes.queries, cp_final, camera, fv_grid, tes.queries, te_px)
        return ForwardOutput(lanes, tes, t_l2l, t_l2t)
