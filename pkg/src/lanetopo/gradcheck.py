"""Central finite-difference verification of every differentiable op.

Each named check builds a fresh seeded case (a ParameterSet plus a scalar
objective over it), computes analytic gradients with one backward sweep, and
probes a random subset of coordinates with central differences at step 1e-5.
`corrupt` deliberately biases one analytic gradient so the negative-control
path (suite must fail and name the op) stays honest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffgeom, tensor as T
from .attention import DeformableCrossAttention, GeometryBias, SelfAttention
from .geometry import SinusoidalConfig
from .losses import (LossWeights, bezier_chamfer_loss, focal_loss,
                     giou_loss_pairs, infonce_topology_loss, total_loss)
from .model import LaneTopoModel, ModelConfig
from .params import ParameterSet
from .scenes import SceneConfig, generate_scene, rasterize
from .tensor import Tensor, backward
from .topology import L2LHead, L2THead

FD_STEP = 1e-5
# probes whose +-1e-5 interval straddles a ReLU/min/max kink are re-verified
# at this step; a real gradient defect fails at every step size
FD_STEP_FINE = 1e-7
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    category: str
    cases: int
    max_rel_err: float
    passed: bool


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def run_check(make_case, n_cases: int, seed: int, max_probes: int = 32,
              corrupt: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients."""
    worst = 0.0
    for case in range(n_cases):
        rng = np.random.default_rng(np.random.SeedSequence([seed, case]))
        params, f = make_case(rng)
        grads = backward(f(), params)
        names = params.names()
        sizes = [params[n].size for n in names]
        offsets = np.cumsum([0] + sizes)
        total = offsets[-1]
        picks = rng.choice(total, size=min(max_probes, total), replace=False)
        if corrupt:
            grads[names[0]].reshape(-1)[0] += 1e-2
        for flat in picks:
            pi = int(np.searchsorted(offsets, flat, side="right") - 1)
            ci = int(flat - offsets[pi])
            p = params[names[pi]]
            analytic = grads[names[pi]].reshape(-1)[ci]
            orig = p.data.reshape(-1)[ci]

            def central(step: float) -> float:
                p.data.reshape(-1)[ci] = orig + step
                up = f().item()
                p.data.reshape(-1)[ci] = orig - step
                down = f().item()
                p.data.reshape(-1)[ci] = orig
                return (up - down) / (2 * step)

            err = _rel_err(analytic, central(FD_STEP))
            if err >= TOLERANCE:
                err = min(err, _rel_err(analytic, central(FD_STEP_FINE)))
            worst = max(worst, err)
    return worst


def _weighted_sum(out: Tensor, rng) -> Tensor:
    w = Tensor(rng.normal(size=out.shape))
    return (out * w).sum()


def _case_params(rng, shapes) -> tuple[ParameterSet, list]:
    ps = ParameterSet()
    ts = [ps.add(f"p{i}", rng.normal(size=s)) for i, s in enumerate(shapes)]
    return ps, ts


# ----------------------------------------------------------------------
# primitive cases
# ----------------------------------------------------------------------


def _binary_case(op):
    def make(rng):
        shape = tuple(rng.integers(1, 5, size=int(rng.integers(1, 4))))
        ps, (a, b) = _case_params(rng, [shape, shape])
        w = rng.normal(size=shape)
        return ps, lambda: (op(a, b) * Tensor(w)).sum()
    return make


def _unary_case(op, positive=False, margin=0.0):
    def make(rng):
        shape = tuple(rng.integers(1, 5, size=int(rng.integers(1, 4))))
        ps = ParameterSet()
        raw = rng.normal(size=shape)
        if positive:
            raw = np.abs(raw) + 0.5
        if margin:
            raw = raw + np.sign(raw) * margin
        a = ps.add("p0", raw)
        w = rng.normal(size=shape)
        return ps, lambda: (op(a) * Tensor(w)).sum()
    return make


def _matmul_case(rng):
    if rng.random() < 0.5:
        m, k, n = rng.integers(1, 5, size=3)
        ps, (a, b) = _case_params(rng, [(m, k), (k, n)])
    else:
        b_, m, k, n = rng.integers(1, 4, size=4)
        ps, (a, b) = _case_params(rng, [(b_, m, k), (b_, k, n)])
    w = rng.normal(size=np.matmul(a.data, b.data).shape)
    return ps, lambda: (T.matmul(a, b) * Tensor(w)).sum()


def _softmax_case(rng):
    shape = (int(rng.integers(1, 4)), int(rng.integers(2, 6)))
    ps, (a,) = _case_params(rng, [shape])
    w = rng.normal(size=shape)
    return ps, lambda: (T.softmax_lastdim(a) * Tensor(w)).sum()


def _layer_norm_case(rng):
    shape = (int(rng.integers(1, 4)), int(rng.integers(3, 8)))
    ps, (a,) = _case_params(rng, [shape])
    w = rng.normal(size=shape)
    return ps, lambda: (T.layer_norm(a) * Tensor(w)).sum()


def _reduce_case(kind):
    def make(rng):
        shape = tuple(rng.integers(2, 5, size=int(rng.integers(1, 4))))
        ps, (a,) = _case_params(rng, [shape])
        axis = int(rng.integers(0, len(shape)))
        if kind == "sum":
            out_fn = lambda: a.sum(axis=axis)  # noqa: E731
        elif kind == "mean":
            out_fn = lambda: a.mean(axis=axis)  # noqa: E731
        elif kind == "max":
            out_fn = lambda: a.max(axis=axis)  # noqa: E731
        else:
            out_fn = lambda: a.min(axis=axis)  # noqa: E731
        def f():
            out = out_fn()
            w = np.ones(out.shape)
            return (out * Tensor(w)).sum()
        return ps, f
    return make


def _shape_case(rng):
    m, n, k = (int(v) for v in rng.integers(2, 5, size=3))
    ps, (a, b) = _case_params(rng, [(m, n, k), (m, n, k)])
    w1 = rng.normal(size=(m * n, k))
    w2 = rng.normal(size=(k, n, m))

    def f():
        joined = T.concat([a, b], axis=1)                      # (m, 2n, k)
        part = joined[:, :n, :]
        s1 = (part.reshape(m * n, k) * Tensor(w1)).sum()
        s2 = (T.transpose(part, (2, 1, 0)) * Tensor(w2)).sum()
        st = T.stack([part, part], axis=0).sum()
        bc = T.broadcast_to(part[:1, :, :], (m, n, k)).mean()
        return s1 + s2 + st + bc
    return ps, f


def _take_case(rng):
    n = int(rng.integers(4, 12))
    ps, (a,) = _case_params(rng, [(n,)])
    idx = rng.integers(0, n, size=6)
    w = rng.normal(size=6)
    return ps, lambda: (T.take_flat(a, idx) * Tensor(w)).sum()


def _bilinear_case(rng):
    h, w_, c = int(rng.integers(3, 7)), int(rng.integers(3, 7)), int(rng.integers(1, 4))
    p = int(rng.integers(2, 8))
    ps = ParameterSet()
    grid = ps.add("grid", rng.normal(size=(h, w_, c)))
    # keep probes off integer lattice lines and the border-crossing band
    coords = np.stack([rng.uniform(-2, h + 1, size=p), rng.uniform(-2, w_ + 1, size=p)], axis=1)
    coords = np.where(np.abs(coords - np.round(coords)) < 0.05, coords + 0.15, coords)
    ct = ps.add("coords", coords)
    w = rng.normal(size=(p, c))
    return ps, lambda: (T.bilinear_sample(grid, ct) * Tensor(w)).sum()


def _atan2_case(rng):
    shape = (int(rng.integers(2, 5)),)
    ps = ParameterSet()
    y = ps.add("p0", rng.normal(size=shape) + np.sign(rng.normal(size=shape)) * 0.3)
    x = ps.add("p1", rng.normal(size=shape) + np.sign(rng.normal(size=shape)) * 0.3)
    w = rng.normal(size=shape)
    return ps, lambda: (T.atan2(y, x) * Tensor(w)).sum()


# ----------------------------------------------------------------------
# composite cases
# ----------------------------------------------------------------------

_ENC = SinusoidalConfig(output_dim=8)


def _sin_encode_case(rng):
    n = int(rng.integers(1, 4))
    ps, (v,) = _case_params(rng, [(n, 2)])
    w = rng.normal(size=(n, 16))
    return ps, lambda: (diffgeom.sin_encode(v, _ENC) * Tensor(w)).sum()


def _random_control_points(rng, n: int) -> np.ndarray:
    cp = rng.uniform(2, 30, size=(n, 4, 3))
    cp[..., 1] = rng.uniform(-10, 10, size=(n, 4))
    cp[..., 2] = rng.uniform(-0.4, 0.4, size=(n, 4))
    cp[:, 3, :2] += 4.0  # non-degenerate chords
    return cp


def _pairwise_geometry_case(rng):
    n = int(rng.integers(2, 5))
    ps = ParameterSet()
    cp = ps.add("cp", _random_control_points(rng, n))
    w1 = rng.normal(size=(n, n))
    w2 = rng.normal(size=(n, n))

    def f():
        d = diffgeom.pairwise_endpoint_distance(cp)
        a = diffgeom.pairwise_chord_angle(cp)
        return (d * Tensor(w1)).sum() + (a * Tensor(w2)).sum()
    return ps, f


def _geometry_bias_case(rng):
    n = int(rng.integers(2, 5))
    ps = ParameterSet()
    gb = GeometryBias(ps, rng, "gb", heads=2, pe_dim=8, hidden=8)
    cp = ps.add("cp", _random_control_points(rng, n))
    w = rng.normal(size=(2, n, n))
    return ps, lambda: (gb(cp) * Tensor(w)).sum()


def _biased_sa_case(rng):
    n, c = int(rng.integers(2, 5)), 8
    ps = ParameterSet()
    sa = SelfAttention(ps, rng, "sa", c, heads=2)
    gb = GeometryBias(ps, rng, "gb", heads=2, pe_dim=8, hidden=8)
    q = ps.add("q", rng.normal(size=(n, c)))
    cp = ps.add("cp", _random_control_points(rng, n))
    w = rng.normal(size=(n, c))
    return ps, lambda: (sa(q, gb(cp)) * Tensor(w)).sum()


def _curve_ca_case(rng):
    n, c, k = int(rng.integers(2, 4)), 8, 3
    h, w_ = 6, 8
    ps = ParameterSet()
    ca = DeformableCrossAttention(ps, rng, "ca", c, heads=2, n_points=k, n_offsets=2)
    q = ps.add("q", rng.normal(size=(n, c)))
    cp = ps.add("cp", _random_control_points(rng, n))
    grid = ps.add("grid", rng.normal(size=(h, w_, c)))
    w = rng.normal(size=(n, c))

    def f():
        pts = diffgeom.bezier_points(cp, k)[:, :, :2]
        rows = (pts[:, :, 1] + 12.0) * ((h - 1) / 24.0)
        cols = pts[:, :, 0] * ((w_ - 1) / 32.0)
        refs = T.stack([rows, cols], axis=-1)
        return (ca(q, refs, grid) * Tensor(w)).sum()
    return ps, f


def _point_ca_case(rng):
    n, c = int(rng.integers(2, 4)), 8
    h, w_ = 5, 6
    ps = ParameterSet()
    ca = DeformableCrossAttention(ps, rng, "ca", c, heads=2, n_points=1, n_offsets=3)
    q = ps.add("q", rng.normal(size=(n, c)))
    refs_np = np.stack([rng.uniform(0.7, h - 1.7, size=n), rng.uniform(0.7, w_ - 1.7, size=n)], axis=1)
    refs = ps.add("refs", refs_np.reshape(n, 1, 2))
    grid = ps.add("grid", rng.normal(size=(h, w_, c)))
    w = rng.normal(size=(n, c))
    return ps, lambda: (ca(q, refs, grid) * Tensor(w)).sum()


def _l2l_case(rng):
    n, c = int(rng.integers(2, 5)), 8
    ps = ParameterSet()
    head = L2LHead(ps, rng, "l2l", c, pe_dim=8)
    q = ps.add("q", rng.normal(size=(n, c)))
    cp = ps.add("cp", _random_control_points(rng, n))
    w = rng.normal(size=(n, n))
    return ps, lambda: (head(q, cp) * Tensor(w)).sum()


def _l2t_camera():
    from .geometry import CameraModel

    rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    pos = np.array([-4.0, 0.0, 1.6])
    intr = np.array([[560.0, 0.0, 320.0], [0.0, 560.0, 240.0], [0.0, 0.0, 1.0]])
    return CameraModel(intr, rot, -rot @ pos, (640, 480))


def _l2t_case(rng):
    n, m, c, k = 2, 2, 8, 3
    ps = ParameterSet()
    head = L2THead(ps, rng, "l2t", c, pe_dim=8, n_samples=k)
    cam = _l2t_camera()
    ql = ps.add("ql", rng.normal(size=(n, c)))
    qt = ps.add("qt", rng.normal(size=(m, c)))
    # lanes well inside the view frustum so FD never crosses a validity edge
    cp = rng.uniform(12, 30, size=(n, 4, 3))
    cp[..., 1] = rng.uniform(-3, 3, size=(n, 4))
    cp[..., 2] = rng.uniform(-0.3, 0.3, size=(n, 4))
    cpt = ps.add("cp", cp)
    boxes = ps.add("boxes", np.stack([rng.uniform(100, 500, size=m), rng.uniform(100, 350, size=m),
                                      rng.uniform(10, 30, size=m), rng.uniform(10, 30, size=m)], axis=1))
    grid = ps.add("grid", rng.normal(size=(5, 6, c)))
    w = rng.normal(size=(n, m))
    return ps, lambda: (head(ql, cpt, cam, grid, qt, boxes) * Tensor(w)).sum()


def _focal_case(rng):
    shape = (int(rng.integers(2, 6)), int(rng.integers(1, 3)))
    ps, (x,) = _case_params(rng, [shape])
    targets = (rng.random(shape) < 0.4).astype(np.float64)
    return ps, lambda: focal_loss(x, targets)


def _giou_case(rng):
    n = int(rng.integers(1, 4))
    ps = ParameterSet()
    pred = ps.add("pred", np.stack([rng.uniform(0.3, 0.7, n), rng.uniform(0.3, 0.7, n),
                                    rng.uniform(0.2, 0.4, n), rng.uniform(0.2, 0.4, n)], axis=1))
    gt = np.stack([rng.uniform(0.3, 0.7, n), rng.uniform(0.3, 0.7, n),
                   rng.uniform(0.2, 0.4, n), rng.uniform(0.2, 0.4, n)], axis=1)
    return ps, lambda: giou_loss_pairs(pred, gt)


def _chamfer_case(rng):
    n = int(rng.integers(1, 3))
    ps = ParameterSet()
    pred = ps.add("pred", _random_control_points(rng, n))
    gt = _random_control_points(rng, n)
    return ps, lambda: bezier_chamfer_loss(pred, gt, k=5)


def _infonce_case(rng):
    shape = (int(rng.integers(2, 5)), int(rng.integers(2, 5)))
    ps, (x,) = _case_params(rng, [shape])
    gt = (rng.random(shape) < 0.4).astype(np.float64)
    if gt.sum() == 0:
        gt[0, 0] = 1.0
    return ps, lambda: infonce_topology_loss(x, gt, n_neg=2)


_TINY_MODEL_CFG = ModelConfig(layers=1, n_lane=8, n_te=4, channels=8, heads=2,
                              offsets=1, samples=3, ffn=8, pe_dim=4)
_TINY_SCENE_CFG = SceneConfig(bev_grid=(8, 14), fv_grid=(6, 10), noise=0.02)


def _total_loss_case(rng):
    seed = int(rng.integers(0, 10000))
    scene = generate_scene(SceneConfig(lane_count_range=(4, 8), bev_grid=(8, 14),
                                       fv_grid=(6, 10), noise=0.02), seed)
    bev, fv = rasterize(scene, _TINY_SCENE_CFG)
    model = LaneTopoModel(_TINY_MODEL_CFG, seed=seed)
    weights = LossWeights()

    def f():
        out = model.full_forward(bev, fv, scene.camera)
        return total_loss(out, scene, weights, chamfer_k=3)[0]
    return model.params, f


# ----------------------------------------------------------------------
# registry
# ----------------------------------------------------------------------


def build_checks() -> list:
    """(name, category, make_case, n_cases, max_probes) tuples."""
    checks = [
        ("add", "primitive", _binary_case(T.add), 20, 16),
        ("mul", "primitive", _binary_case(T.mul), 20, 16),
        ("div", "primitive", _binary_case(lambda a, b: a / (b * b + 0.5)), 20, 16),
        ("maximum", "primitive", _binary_case(T.maximum), 20, 16),
        ("minimum", "primitive", _binary_case(T.minimum), 20, 16),
        ("matmul", "primitive", _matmul_case, 20, 16),
        ("exp", "primitive", _unary_case(T.exp), 20, 16),
        ("log", "primitive", _unary_case(T.log, positive=True), 20, 16),
        ("sqrt", "primitive", _unary_case(T.sqrt, positive=True), 20, 16),
        ("sin", "primitive", _unary_case(T.sin), 20, 16),
        ("cos", "primitive", _unary_case(T.cos), 20, 16),
        ("abs", "primitive", _unary_case(T.tabs, margin=0.2), 20, 16),
        ("relu", "primitive", _unary_case(T.relu, margin=0.2), 20, 16),
        ("sigmoid", "primitive", _unary_case(T.sigmoid), 20, 16),
        ("power", "primitive", _unary_case(lambda a: T.power(a, 1.7), positive=True), 20, 16),
        ("clip", "primitive", _unary_case(lambda a: T.clip(a, -0.8, 0.8), margin=0.05), 20, 16),
        ("atan2", "primitive", _atan2_case, 20, 16),
        ("softmax_lastdim", "primitive", _softmax_case, 20, 16),
        ("layer_norm", "primitive", _layer_norm_case, 20, 16),
        ("sum", "primitive", _reduce_case("sum"), 20, 16),
        ("mean", "primitive", _reduce_case("mean"), 20, 16),
        ("max_reduce", "primitive", _reduce_case("max"), 20, 16),
        ("min_reduce", "primitive", _reduce_case("min"), 20, 16),
        ("shape_ops", "primitive", _shape_case, 20, 16),
        ("take_flat", "primitive", _take_case, 20, 16),
        ("bilinear_sample", "primitive", _bilinear_case, 20, 24),
        ("sinusoidal_encode", "composite", _sin_encode_case, 20, 16),
        ("pairwise_geometry", "composite", _pairwise_geometry_case, 20, 24),
        ("geometry_bias_matrix", "composite", _geometry_bias_case, 20, 24),
        ("geometry_biased_self_attention", "composite", _biased_sa_case, 20, 32),
        ("curve_guided_cross_attention", "composite", _curve_ca_case, 20, 32),
        ("point_cross_attention", "composite", _point_ca_case, 20, 32),
        ("l2l_head", "composite", _l2l_case, 20, 32),
        ("l2t_head", "composite", _l2t_case, 20, 32),
        ("focal_loss", "loss", _focal_case, 20, 16),
        ("giou_loss", "loss", _giou_case, 20, 16),
        ("bezier_chamfer_loss", "loss", _chamfer_case, 20, 24),
        ("infonce_loss", "loss", _infonce_case, 20, 16),
        ("total_loss", "loss", _total_loss_case, 5, 24),
    ]
    return checks


def run_all(names=None, corrupt_name: str | None = None, seed: int = 20240811) -> list[CheckResult]:
    results = []
    for i, (name, category, make_case, n_cases, probes) in enumerate(build_checks()):
        if names is not None and name not in names:
            continue
        err = run_check(make_case, n_cases, seed + i * 1000, max_probes=probes,
                        corrupt=(name == corrupt_name))
        results.append(CheckResult(name, category, n_cases, err, err < TOLERANCE))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results) + 2
    lines = [f"{'op'.ljust(width)}{'kind':<11}{'cases':>6}  {'max_rel_err':>12}  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name.ljust(width)}{r.category:<11}{r.cases:>6}  {r.max_rel_err:>12.3e}  {status}")
    return "\n".join(lines)
