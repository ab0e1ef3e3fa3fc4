"""Deterministic synthetic road scenes and their rasterized feature grids.

A scene is a directed lane graph (corridors split into segments, optional
connectors/merges at junction lines, crossing roads and offset stubs as hard
negatives), traffic elements placed at junctions, a forward-facing camera,
and the L2L / L2T adjacency ground truth. Everything is a pure function of
the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import BezierLane, CameraModel, bezier_sample, project_to_image

SCENE_FORMAT = "lanetopo-scene"
SCENE_VERSION = 1

TE_CLASS_NAMES = ("light", "sign")
# physical (width, height) in meters per TE class, used to size FV boxes;
# generous sizes keep IoU-0.75 matching attainable at toy grid resolution
_TE_PHYSICAL = ((1.4, 3.0), (2.0, 2.0))


@dataclass
class TrafficElement:
    box: np.ndarray  # (4,) center-x, center-y, width, height in FV pixels
    class_id: int

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=np.float64)
        if self.box.shape != (4,):
            raise DataError(f"traffic element box must be (cx, cy, w, h), got shape {self.box.shape}")

    def __eq__(self, other) -> bool:
        return (isinstance(other, TrafficElement)
                and np.array_equal(self.box, other.box)
                and self.class_id == other.class_id)


@dataclass
class FeatureGrid:
    values: np.ndarray  # (H, W, C)
    extent: tuple       # (x_min, x_max, y_min, y_max) meters for BEV, pixel bounds for FV
    frame: str          # "BEV" | "FV"

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] < 2 or self.values.shape[1] < 2:
            raise DataError(f"feature grid must be H x W x C with H, W >= 2, got {self.values.shape}")
        if self.extent[1] <= self.extent[0] or self.extent[3] <= self.extent[2]:
            raise DataError(f"degenerate grid extent {self.extent}")


@dataclass
class SceneConfig:
    lane_count_range: tuple = (4, 12)
    intersection_probability: float = 0.7
    max_curvature_offset: float = 1.2   # lateral bow of interior control points, meters
    te_count_range: tuple = (1, 3)
    noise: float = 0.05
    bev_grid: tuple = (32, 64)          # (H, W); rows span y, columns span x
    fv_grid: tuple = (24, 48)
    bev_extent: tuple = (0.0, 48.0, -16.0, 16.0)
    image_size: tuple = (640, 480)
    focal: float = 560.0
    camera_jitter: float = 0.15

    def __post_init__(self):
        if self.lane_count_range[0] > self.lane_count_range[1] or self.lane_count_range[0] < 1:
            raise DataError(f"invalid lane_count_range {self.lane_count_range}")
        if self.te_count_range[0] > self.te_count_range[1]:
            raise DataError(f"invalid te_count_range {self.te_count_range}")
        if self.noise < 0:
            raise DataError("noise level must be non-negative")


@dataclass
class Scene:
    scene_id: str
    seed: int
    lanes: list            # list[BezierLane], ground truth
    traffic_elements: list  # list[TrafficElement]
    adj_l2l: np.ndarray    # (N, N) uint8, entry (i, j) = 1 iff lane j succeeds lane i
    adj_l2t: np.ndarray    # (N, M) uint8
    camera: CameraModel
    bev_extent: tuple

    def __eq__(self, other) -> bool:
        return (isinstance(other, Scene)
                and self.scene_id == other.scene_id
                and self.seed == other.seed
                and self.lanes == other.lanes
                and self.traffic_elements == other.traffic_elements
                and np.array_equal(self.adj_l2l, other.adj_l2l)
                and np.array_equal(self.adj_l2t, other.adj_l2t)
                and self.camera == other.camera
                and self.bev_extent == other.bev_extent)


def validate_scene(scene: Scene) -> list[str]:
    """Structural invariant check; returns human-readable violations."""
    issues = []
    n, m = len(scene.lanes), len(scene.traffic_elements)
    if scene.adj_l2l.shape != (n, n):
        issues.append(f"adj_l2l shape {scene.adj_l2l.shape} != ({n}, {n})")
        return issues
    if scene.adj_l2t.shape != (n, m):
        issues.append(f"adj_l2t shape {scene.adj_l2t.shape} != ({n}, {m})")
        return issues
    if np.any(np.diag(scene.adj_l2l) != 0):
        issues.append("adj_l2l has nonzero diagonal")
    for i, j in zip(*np.nonzero(scene.adj_l2l)):
        gap = float(np.linalg.norm(scene.lanes[i].end - scene.lanes[j].start))
        if gap >= 0.2:
            issues.append(f"connected pair ({i}, {j}) has end-to-start gap {gap:.3f} m")
    x0, x1, y0, y1 = scene.bev_extent
    for i, lane in enumerate(scene.lanes):
        cp = lane.control_points
        if cp[:, 0].min() < x0 or cp[:, 0].max() > x1 or cp[:, 1].min() < y0 or cp[:, 1].max() > y1:
            issues.append(f"lane {i} control points leave the BEV extent")
    return issues


# ----------------------------------------------------------------------
# generation
# ----------------------------------------------------------------------


def _segment_lane(rng, p_start, p_end, bow: float) -> np.ndarray:
    """Control points for a segment: interior points bow off the chord."""
    p_start = np.asarray(p_start, dtype=np.float64)
    p_end = np.asarray(p_end, dtype=np.float64)
    chord = p_end - p_start
    lateral = np.array([-chord[1], chord[0], 0.0])
    ln = np.linalg.norm(lateral[:2])
    lateral = lateral / ln if ln > 1e-9 else np.zeros(3)
    cp = np.empty((4, 3))
    cp[0] = p_start
    cp[3] = p_end
    for k, frac in ((1, 1.0 / 3.0), (2, 2.0 / 3.0)):
        cp[k] = p_start + frac * chord + lateral * rng.uniform(-bow, bow)
        cp[k, 2] = rng.uniform(-0.3, 0.3)
    return cp


def _make_camera(rng, cfg: SceneConfig) -> CameraModel:
    j = cfg.camera_jitter
    pos = np.array([-4.0 + rng.uniform(-j, j) * 4, rng.uniform(-j, j) * 4, 1.6 + rng.uniform(-j, j)])
    psi = rng.uniform(-j, j) * 0.2  # yaw, radians
    forward = np.array([np.cos(psi), np.sin(psi), 0.0])
    right = np.array([np.sin(psi), -np.cos(psi), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    rot = np.stack([right, down, forward])
    w, h = cfg.image_size
    intr = np.array([[cfg.focal, 0.0, w / 2.0], [0.0, cfg.focal, h / 2.0], [0.0, 0.0, 1.0]])
    return CameraModel(intrinsics=intr, rotation=rot, translation=-rot @ pos, image_size=(w, h))


def _try_generate(cfg: SceneConfig, seed: int, rng) -> Scene | None:
    x0, x1, y0, y1 = cfg.bev_extent
    margin = 0.6
    lo_n, hi_n = cfg.lane_count_range

    n_corr = int(rng.integers(2, 4))
    n_seg = int(rng.integers(2, 4))
    span = min(12.0, (y1 - y0) / 2 - 4)
    ys = np.linspace(-span, span, n_corr) + rng.uniform(-1.2, 1.2, n_corr)

    # shared junction x positions across corridors
    cuts = np.sort(rng.uniform(x0 + 12, x1 - 12, n_seg - 1))
    while n_seg > 2 and np.diff(cuts).min() < 8.0:
        cuts = np.sort(rng.uniform(x0 + 12, x1 - 12, n_seg - 1))
    xs = np.concatenate([[x0 + 2.0], cuts, [x1 - 2.0]])

    lanes: list[np.ndarray] = []
    edges: list[tuple[int, int]] = []
    node_of = {}  # (corridor, segment) -> lane index

    for c in range(n_corr):
        drift = np.cumsum(rng.uniform(-1.5, 1.5, n_seg + 1))
        drift -= drift[0]
        pts = [np.array([xs[k], np.clip(ys[c] + drift[k], y0 + 2, y1 - 2), 0.0]) for k in range(n_seg + 1)]
        for k in range(n_seg):
            node_of[(c, k)] = len(lanes)
            lanes.append(_segment_lane(rng, pts[k], pts[k + 1], cfg.max_curvature_offset))
            if k > 0:
                edges.append((node_of[(c, k - 1)], node_of[(c, k)]))

    junction_in: dict[int, list[int]] = {k: [] for k in range(1, n_seg)}
    for c in range(n_corr):
        for k in range(1, n_seg):
            junction_in[k].append(node_of[(c, k - 1)])

    # connectors: lane changes between adjacent corridors at a junction (split + merge)
    if rng.random() < cfg.intersection_probability and n_corr >= 2 and n_seg >= 2:
        k = int(rng.integers(1, n_seg))
        c = int(rng.integers(0, n_corr - 1))
        c2 = c + 1
        src = node_of[(c, k - 1)]
        dst = node_of[(c2, k)]
        conn = _segment_lane(rng, lanes[src][3].copy(), lanes[dst][0].copy(), cfg.max_curvature_offset)
        idx = len(lanes)
        lanes.append(conn)
        edges.append((src, idx))
        edges.append((idx, dst))
        junction_in[k].append(idx)

    # crossing road: near-perpendicular, connected to nothing
    if rng.random() < cfg.intersection_probability * 0.6:
        xj = float(rng.choice(xs[1:-1])) if n_seg > 1 else float((x0 + x1) / 2)
        sgn = 1.0 if rng.random() < 0.5 else -1.0
        a = np.array([xj + rng.uniform(-1, 1), sgn * (y0 + 2 if sgn > 0 else y1 - 2) * -1, 0.0])
        a[1] = (y0 + 2) if sgn > 0 else (y1 - 2)
        b = np.array([xj + rng.uniform(-1, 1), (y1 - 2) if sgn > 0 else (y0 + 2), 0.0])
        lanes.append(_segment_lane(rng, a, b, cfg.max_curvature_offset))

    # offset stubs: start near a junction but unconnected (hard negatives)
    n_stub = int(rng.integers(0, 3))
    for _ in range(n_stub):
        if len(lanes) >= hi_n or n_seg < 2:
            break
        k = int(rng.integers(1, n_seg))
        c = int(rng.integers(0, n_corr))
        base = lanes[node_of[(c, k - 1)]][3]
        off = rng.uniform(0.6, 2.5) * (1.0 if rng.random() < 0.5 else -1.0)
        a = np.array([base[0] + rng.uniform(-0.5, 0.5), np.clip(base[1] + off, y0 + 2, y1 - 2), 0.0])
        b = np.array([min(a[0] + rng.uniform(8, 14), x1 - 1.5), np.clip(a[1] + rng.uniform(-2, 2), y0 + 2, y1 - 2), 0.0])
        lanes.append(_segment_lane(rng, a, b, cfg.max_curvature_offset))

    if not lo_n <= len(lanes) <= hi_n:
        return None

    cp_all = np.stack(lanes)
    cp_all[..., 0] = np.clip(cp_all[..., 0], x0 + margin, x1 - margin)
    cp_all[..., 1] = np.clip(cp_all[..., 1], y0 + margin, y1 - margin)
    cp_all[..., 2] = np.clip(cp_all[..., 2], -0.5, 0.5)

    camera = _make_camera(rng, cfg)

    # traffic elements at junction stop lines governing the incoming lanes
    n_lanes = len(lanes)
    te_boxes, te_classes, governed = [], [], []
    n_te_target = int(rng.integers(cfg.te_count_range[0], cfg.te_count_range[1] + 1))
    junction_ids = list(junction_in.keys())
    rng.shuffle(junction_ids)
    w_img, h_img = cfg.image_size
    for k in junction_ids + [None] * n_te_target:
        if len(te_boxes) >= n_te_target:
            break
        if k is not None and junction_in[k]:
            incoming = junction_in[k]
            anchor = cp_all[incoming[0], 3]
            pos3d = np.array([xs[k] + rng.uniform(0.0, 1.0), anchor[1] + rng.uniform(-1.5, 1.5),
                              rng.uniform(3.8, 5.0)])
            cls = 0
            gov = list(incoming)
        else:  # roadside sign governing one lane
            li = int(rng.integers(0, n_lanes))
            endp = cp_all[li, 3]
            pos3d = np.array([endp[0] + rng.uniform(-1.0, 1.0), endp[1] + rng.uniform(2.0, 3.5),
                              rng.uniform(1.5, 2.5)])
            cls = 1
            gov = [li]
        pix, valid = project_to_image(camera, pos3d[None, :])
        if not valid[0]:
            continue
        depth = float((camera.rotation @ pos3d + camera.translation)[2])
        pw, ph = _TE_PHYSICAL[cls]
        bw = camera.intrinsics[0, 0] * pw / depth
        bh = camera.intrinsics[1, 1] * ph / depth
        u, v = pix[0]
        if u - bw / 2 < 0 or u + bw / 2 > w_img - 1 or v - bh / 2 < 0 or v + bh / 2 > h_img - 1:
            continue
        te_boxes.append(np.array([u, v, bw, bh]))
        te_classes.append(cls)
        governed.append(gov)

    if not te_boxes:
        return None

    adj_l2l = np.zeros((n_lanes, n_lanes), dtype=np.uint8)
    for i, j in edges:
        adj_l2l[i, j] = 1
    np.fill_diagonal(adj_l2l, 0)
    adj_l2t = np.zeros((n_lanes, len(te_boxes)), dtype=np.uint8)
    for t, gov in enumerate(governed):
        for li in gov:
            adj_l2t[li, t] = 1

    scene = Scene(
        scene_id=f"scene_{seed:08d}",
        seed=seed,
        lanes=[BezierLane(cp_all[i]) for i in range(n_lanes)],
        traffic_elements=[TrafficElement(b, c) for b, c in zip(te_boxes, te_classes)],
        adj_l2l=adj_l2l,
        adj_l2t=adj_l2t,
        camera=camera,
        bev_extent=tuple(float(v) for v in cfg.bev_extent),
    )
    return scene if not validate_scene(scene) else None


def generate_scene(cfg: SceneConfig, seed: int) -> Scene:
    """Deterministic per seed; retries internal draws until constraints hold."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0FFEE]))
    for _ in range(50):
        scene = _try_generate(cfg, seed, rng)
        if scene is not None:
            return scene
    raise DataError(f"scene generation infeasible for config {cfg} (seed {seed})")


# ----------------------------------------------------------------------
# rasterization
# ----------------------------------------------------------------------


def world_to_bev(extent, grid_hw, xy: np.ndarray) -> np.ndarray:
    """(…, 2) world x,y -> continuous (row, col) grid coordinates."""
    x0, x1, y0, y1 = extent
    h, w = grid_hw
    rows = (xy[..., 1] - y0) / (y1 - y0) * (h - 1)
    cols = (xy[..., 0] - x0) / (x1 - x0) * (w - 1)
    return np.stack([rows, cols], axis=-1)


def pixel_to_fv(image_size, grid_hw, uv: np.ndarray) -> np.ndarray:
    wi, hi = image_size
    h, w = grid_hw
    rows = uv[..., 1] / (hi - 1) * (h - 1)
    cols = uv[..., 0] / (wi - 1) * (w - 1)
    return np.stack([rows, cols], axis=-1)


def _splat(acc: np.ndarray, rc: np.ndarray, weights: np.ndarray) -> None:
    """Bilinear scatter-add of per-point weights into a (H, W) accumulator."""
    h, w = acc.shape
    r, c = rc[:, 0], rc[:, 1]
    r0 = np.floor(r).astype(np.intp)
    c0 = np.floor(c).astype(np.intp)
    fr, fc = r - r0, c - c0
    for dr, dc, wt in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                       (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        ri, ci = r0 + dr, c0 + dc
        ok = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        np.add.at(acc, (ri[ok], ci[ok]), weights[ok] * wt[ok])


def rasterize(scene: Scene, cfg: SceneConfig) -> tuple[FeatureGrid, FeatureGrid]:
    """BEV channels: occupancy, heading sin/cos, junction proximity.
    FV channels: per-class TE box coverage, projected lane strokes.
    Seeded Gaussian noise at cfg.noise on every channel."""
    hb, wb = cfg.bev_grid
    bev = np.zeros((hb, wb, 4))
    dense = 96

    occ = np.zeros((hb, wb))
    s_acc = np.zeros((hb, wb))
    c_acc = np.zeros((hb, wb))
    for lane in scene.lanes:
        pts = bezier_sample(lane, dense)
        rc = world_to_bev(scene.bev_extent, (hb, wb), pts[:, :2])
        seg = np.diff(pts[:, :2], axis=0)
        heading = np.arctan2(seg[:, 1], seg[:, 0])
        heading = np.concatenate([heading, heading[-1:]])
        wgt = np.full(dense, 0.6)
        _splat(occ, rc, wgt)
        _splat(s_acc, rc, wgt * np.sin(heading))
        _splat(c_acc, rc, wgt * np.cos(heading))
    denom = np.maximum(occ, 1e-6)
    bev[..., 0] = np.clip(occ, 0.0, 1.0)
    bev[..., 1] = np.clip(s_acc / denom, -1.0, 1.0) * bev[..., 0]
    bev[..., 2] = np.clip(c_acc / denom, -1.0, 1.0) * bev[..., 0]

    junctions = [scene.lanes[i].end[:2] for i, j in zip(*np.nonzero(scene.adj_l2l))]
    if junctions:
        x0, x1, y0, y1 = scene.bev_extent
        gy = y0 + (y1 - y0) * np.arange(hb) / (hb - 1)
        gx = x0 + (x1 - x0) * np.arange(wb) / (wb - 1)
        cell_xy = np.stack(np.meshgrid(gx, gy), axis=-1)  # (hb, wb, 2)
        d2 = np.min([((cell_xy - j) ** 2).sum(axis=-1) for j in junctions], axis=0)
        bev[..., 3] = np.exp(-d2 / (2 * 2.0 ** 2))

    hf, wf = cfg.fv_grid
    n_cls = len(TE_CLASS_NAMES)
    fv = np.zeros((hf, wf, n_cls + 1))
    for te in scene.traffic_elements:
        u, v, bw, bh = te.box
        wi, hi = scene.camera.image_size
        gu = u / (wi - 1) * (wf - 1)
        gv = v / (hi - 1) * (hf - 1)
        gw = bw / (wi - 1) * (wf - 1)
        gh = bh / (hi - 1) * (hf - 1)
        cols = np.arange(wf)
        rows = np.arange(hf)
        cov_c = np.clip(np.minimum(cols + 0.5, gu + gw / 2) - np.maximum(cols - 0.5, gu - gw / 2), 0, 1)
        cov_r = np.clip(np.minimum(rows + 0.5, gv + gh / 2) - np.maximum(rows - 0.5, gv - gh / 2), 0, 1)
        fv[..., te.class_id] += np.outer(cov_r, cov_c)
    fv[..., :n_cls] = np.clip(fv[..., :n_cls], 0.0, 1.0)

    stroke = np.zeros((hf, wf))
    for lane in scene.lanes:
        pts = bezier_sample(lane, dense)
        pix, valid = project_to_image(scene.camera, pts)
        if valid.any():
            rc = pixel_to_fv(scene.camera.image_size, (hf, wf), pix[valid])
            _splat(stroke, rc, np.full(valid.sum(), 0.6))
    fv[..., n_cls] = np.clip(stroke, 0.0, 1.0)

    if cfg.noise > 0:
        rng_b = np.random.default_rng(np.random.SeedSequence([scene.seed, 0xB0]))
        rng_f = np.random.default_rng(np.random.SeedSequence([scene.seed, 0xF0]))
        bev += rng_b.normal(0.0, cfg.noise, bev.shape)
        fv += rng_f.normal(0.0, cfg.noise, fv.shape)

    wi, hi = scene.camera.image_size
    return (FeatureGrid(bev, tuple(scene.bev_extent), "BEV"),
            FeatureGrid(fv, (0.0, float(wi - 1), 0.0, float(hi - 1)), "FV"))


# ----------------------------------------------------------------------
# serialization (17-significant-digit floats for exact round trips)
# ----------------------------------------------------------------------


def _fmt(x: float) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    s = format(float(x), ".17g")
    return s


def _emit(obj) -> str:
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(k)}:{_emit(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_emit(v) for v in obj) + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj)
    raise DataError(f"cannot serialize value of type {type(obj)}")


def scene_to_dict(scene: Scene) -> dict:
    return {
        "format": SCENE_FORMAT,
        "version": SCENE_VERSION,
        "scene_id": scene.scene_id,
        "seed": int(scene.seed),
        "bev_extent": [float(v) for v in scene.bev_extent],
        "lanes": [{
            "control_points": lane.control_points.tolist(),
            "confidence": float(lane.confidence),
            "class_id": int(lane.class_id),
        } for lane in scene.lanes],
        "traffic_elements": [{
            "box": te.box.tolist(),
            "class_id": int(te.class_id),
        } for te in scene.traffic_elements],
        "adj_l2l": scene.adj_l2l.astype(int).tolist(),
        "adj_l2t": scene.adj_l2t.astype(int).tolist(),
        "camera": {
            "intrinsics": scene.camera.intrinsics.tolist(),
            "rotation": scene.camera.rotation.tolist(),
            "translation": scene.camera.translation.tolist(),
            "image_size": [int(v) for v in scene.camera.image_size],
        },
    }


def save_scene(path, scene: Scene) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(_emit(scene_to_dict(scene)))
        f.write("\n")


def _field(d: dict, key: str, kind, path: str):
    if not isinstance(d, dict) or key not in d:
        raise DataError(f"scene file missing field '{path}{key}'")
    val = d[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise DataError(f"scene file field '{path}{key}' must be a number")
        return float(val)
    if kind is int:
        if not isinstance(val, int) or isinstance(val, bool):
            raise DataError(f"scene file field '{path}{key}' must be an integer")
        return val
    if not isinstance(val, kind):
        raise DataError(f"scene file field '{path}{key}' must be {kind.__name__}")
    return val


def scene_from_dict(doc: dict) -> Scene:
    if _field(doc, "format", str, "") != SCENE_FORMAT:
        raise DataError("not a lanetopo scene file (bad 'format' field)")
    version = _field(doc, "version", int, "")
    if version != SCENE_VERSION:
        raise DataError(f"unsupported scene file version {version}, expected {SCENE_VERSION}")
    try:
        lanes = [BezierLane(np.array(_field(L, "control_points", list, f"lanes[{i}].")),
                            _field(L, "confidence", float, f"lanes[{i}]."),
                            _field(L, "class_id", int, f"lanes[{i}]."))
                 for i, L in enumerate(_field(doc, "lanes", list, ""))]
        tes = [TrafficElement(np.array(_field(t, "box", list, f"traffic_elements[{i}].")),
                              _field(t, "class_id", int, f"traffic_elements[{i}]."))
               for i, t in enumerate(_field(doc, "traffic_elements", list, ""))]
        cam_doc = _field(doc, "camera", dict, "")
        camera = CameraModel(
            intrinsics=np.array(_field(cam_doc, "intrinsics", list, "camera.")),
            rotation=np.array(_field(cam_doc, "rotation", list, "camera.")),
            translation=np.array(_field(cam_doc, "translation", list, "camera.")),
            image_size=tuple(_field(cam_doc, "image_size", list, "camera.")),
        )
        scene = Scene(
            scene_id=_field(doc, "scene_id", str, ""),
            seed=_field(doc, "seed", int, ""),
            lanes=lanes,
            traffic_elements=tes,
            adj_l2l=np.array(_field(doc, "adj_l2l", list, ""), dtype=np.uint8),
            adj_l2t=np.array(_field(doc, "adj_l2t", list, ""), dtype=np.uint8),
            camera=camera,
            bev_extent=tuple(_field(doc, "bev_extent", list, "")),
        )
    except DataError:
        raise
    except (ValueError, TypeError) as exc:
        raise DataError(f"malformed scene file: {exc}") from exc
    issues = validate_scene(scene)
    if issues:
        raise DataError(f"scene file violates invariants: {issues[0]}")
    return scene


def load_scene(path) -> Scene:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise DataError(f"scene file {path} is not valid JSON: {exc}") from exc
    return scene_from_dict(doc)


# ----------------------------------------------------------------------
# datasets
# ----------------------------------------------------------------------


def save_dataset(out_dir, scenes: list[Scene]) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, scene in enumerate(scenes):
        fname = f"scene_{i:05d}.json"
        save_scene(os.path.join(out_dir, fname), scene)
        entries.append({"id": scene.scene_id, "seed": int(scene.seed), "file": fname})
    manifest = {"format": "lanetopo-dataset", "version": 1, "count": len(scenes), "scenes": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(path) -> list[Scene]:
    import os

    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"no manifest.json in dataset directory {path}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format") != "lanetopo-dataset" or manifest.get("version") != 1:
        raise DataError(f"unsupported dataset manifest in {path}")
    return [load_scene(os.path.join(path, entry["file"])) for entry in manifest["scenes"]]
