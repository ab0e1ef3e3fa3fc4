"""Detection and topology metrics, pooled over frames.

DET_l matches lanes greedily in confidence order under a discrete-Frechet
gate and averages AP over the {1, 2, 3} m thresholds; DET_t is per-class AP
at IoU >= 0.75. TOP scores re-match instances (Frechet @ 1 m, IoU @ 0.75),
route predicted edge scores onto the ground-truth graph (unmatched -> 0),
and average per-vertex AP of each vertex's ranked candidate partners. OLS
combines the four with square-rooted topology terms. Equal scores rank by
ascending index: determinism over optimism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .geometry import BezierLane, bezier_sample, discrete_frechet
from .scenes import Scene, SceneConfig, TrafficElement, rasterize

LANE_THRESHOLDS = (1.0, 2.0, 3.0)
TE_IOU_THRESHOLD = 0.75
TOP_LANE_THRESHOLD = 1.0
SAMPLES_PER_LANE = 11


@dataclass
class TeDetection:
    box: np.ndarray      # (4,) cx, cy, w, h pixels
    class_id: int
    score: float


@dataclass
class FramePredictions:
    lanes: list                  # list[BezierLane] with confidence
    te: list                     # list[TeDetection]
    lane_adjacency: np.ndarray   # (n_pred_lanes, n_pred_lanes) scores in [0, 1]
    te_adjacency: np.ndarray     # (n_pred_lanes, n_pred_te_queries) scores
    te_query_of: np.ndarray | None = None  # detection index -> decoder query index


@dataclass
class MetricsReport:
    det_l: float
    det_t: float
    top_ll: float
    top_lt: float
    ols: float
    det_l_per_threshold: dict
    det_t_per_class: dict
    counts: dict
    flags: list

    def to_text(self) -> str:
        lines = [
            f"DET_l = {self.det_l!r}",
            f"DET_t = {self.det_t!r}",
            f"TOP_ll = {self.top_ll!r}",
            f"TOP_lt = {self.top_lt!r}",
            f"OLS = {self.ols!r}",
        ]
        for thr in sorted(self.det_l_per_threshold):
            lines.append(f"DET_l@{thr} = {self.det_l_per_threshold[thr]!r}")
        for cls in sorted(self.det_t_per_class):
            lines.append(f"DET_t.class{cls} = {self.det_t_per_class[cls]!r}")
        for key in sorted(self.counts):
            lines.append(f"count.{key} = {self.counts[key]}")
        for flag in self.flags:
            lines.append(f"flag = {flag}")
        return "\n".join(lines) + "\n"

    def csv_row(self) -> str:
        return ",".join(repr(v) for v in (self.det_l, self.det_t, self.top_ll, self.top_lt, self.ols))


def ols(det_l: float, det_t: float, top_ll: float, top_lt: float) -> float:
    for name, v in (("DET_l", det_l), ("DET_t", det_t), ("TOP_ll", top_ll), ("TOP_lt", top_lt)):
        if not 0.0 <= v <= 1.0:
            raise DataError(f"ols: {name}={v} outside [0, 1]")
    return 0.25 * (det_l + det_t + np.sqrt(top_ll) + np.sqrt(top_lt))


# ----------------------------------------------------------------------
# ranked-list machinery
# ----------------------------------------------------------------------


def _rank_order(scores: np.ndarray) -> np.ndarray:
    """Descending score, ties broken by ascending index."""
    return np.lexsort((np.arange(len(scores)), -np.asarray(scores)))


def average_precision(tp_flags: np.ndarray, n_gt: int) -> float:
    """All-point-interpolation AP of a ranked binary list against n_gt positives."""
    if n_gt == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(1 - tp_flags)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    mrec = np.concatenate([[0.0], recall, [recall[-1] if len(recall) else 0.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def _greedy_match(scores: np.ndarray, dist: np.ndarray, threshold: float,
                  smaller_is_better: bool) -> np.ndarray:
    """Confidence-ordered one-to-one matching; returns pred -> gt index or -1.

    A prediction takes the best-distance unmatched ground truth it clears
    the threshold against.
    """
    n_pred, n_gt = dist.shape
    assign = np.full(n_pred, -1, dtype=np.intp)
    taken = np.zeros(n_gt, dtype=bool)
    for p in _rank_order(scores):
        d = dist[p].copy()
        d[taken] = np.inf if smaller_is_better else -np.inf
        if n_gt == 0:
            continue
        g = int(np.argmin(d)) if smaller_is_better else int(np.argmax(d))
        ok = d[g] < threshold if smaller_is_better else d[g] >= threshold
        if np.isfinite(d[g]) and ok:
            assign[p] = g
            taken[g] = True
    return assign


def _lane_distance_matrix(pred_lanes: list, gt_lanes: list, k: int = SAMPLES_PER_LANE) -> np.ndarray:
    pred_pts = [bezier_sample(l, k) for l in pred_lanes]
    gt_pts = [bezier_sample(l, k) for l in gt_lanes]
    d = np.empty((len(pred_lanes), len(gt_lanes)))
    for i, pp in enumerate(pred_pts):
        for j, gp in enumerate(gt_pts):
            d[i, j] = discrete_frechet(pp, gp)
    return d


def box_iou(a: np.ndarray, b: np.ndarray) -> float:
    ax1, ay1, ax2, ay2 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1, bx2, by2 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


# ----------------------------------------------------------------------
# detection metrics
# ----------------------------------------------------------------------


def det_l(pred_frames: list, gt_frames: list,
          thresholds=LANE_THRESHOLDS) -> tuple[float, dict, list]:
    """Frechet-gated lane AP, pooled over frames and averaged over thresholds.

    pred_frames: per frame, a list of BezierLane carrying confidence;
    gt_frames: per frame, a list of ground-truth BezierLane.
    """
    flags = []
    per_threshold = {}
    n_gt_total = sum(len(g) for g in gt_frames)
    n_pred_total = sum(len(p) for p in pred_frames)
    if n_gt_total == 0:
        value = 1.0 if n_pred_total == 0 else 0.0
        flags.append("det_l: empty ground truth")
        return value, {thr: value for thr in thresholds}, flags

    dists, scores = [], []
    for preds, gts in zip(pred_frames, gt_frames):
        dists.append(_lane_distance_matrix(preds, gts) if preds and gts
                     else np.empty((len(preds), len(gts))))
        scores.append(np.array([l.confidence for l in preds]))

    for thr in thresholds:
        pooled_scores, pooled_tp = [], []
        for frame_scores, d in zip(scores, dists):
            assign = _greedy_match(frame_scores, d, thr, smaller_is_better=True)
            pooled_scores.append(frame_scores)
            pooled_tp.append(assign >= 0)
        all_scores = np.concatenate(pooled_scores) if pooled_scores else np.array([])
        all_tp = np.concatenate(pooled_tp) if pooled_tp else np.array([], dtype=bool)
        order = _rank_order(all_scores)
        per_threshold[thr] = average_precision(all_tp[order].astype(np.float64), n_gt_total)
    return float(np.mean(list(per_threshold.values()))), per_threshold, flags


def lane_pr_curves(pred_frames: list, gt_frames: list,
                   thresholds=LANE_THRESHOLDS) -> dict:
    """Pooled (recall, precision) arrays per Frechet threshold, for plotting."""
    n_gt_total = sum(len(g) for g in gt_frames)
    dists = [(_lane_distance_matrix(p, g) if p and g else np.empty((len(p), len(g))))
             for p, g in zip(pred_frames, gt_frames)]
    scores = [np.array([l.confidence for l in p]) for p in pred_frames]
    curves = {}
    for thr in thresholds:
        pooled_scores, pooled_tp = [], []
        for sc, d in zip(scores, dists):
            assign = _greedy_match(sc, d, thr, smaller_is_better=True)
            pooled_scores.append(sc)
            pooled_tp.append(assign >= 0)
        all_scores = np.concatenate(pooled_scores) if pooled_scores else np.array([])
        tp = np.concatenate(pooled_tp)[_rank_order(all_scores)] if len(all_scores) else np.array([])
        cum_tp = np.cumsum(tp)
        recall = cum_tp / max(n_gt_total, 1)
        precision = cum_tp / np.arange(1, len(tp) + 1) if len(tp) else np.array([])
        curves[thr] = (recall, precision)
    return curves


def det_t(pred_frames: list, gt_frames: list,
          iou_threshold: float = TE_IOU_THRESHOLD) -> tuple[float, dict, list]:
    """Per-class AP at the IoU gate, averaged over classes present in GT."""
    flags = []
    classes = sorted({te.class_id for frame in gt_frames for te in frame})
    if not classes:
        empty_preds = all(len(p) == 0 for p in pred_frames)
        flags.append("det_t: empty ground truth")
        value = 1.0 if empty_preds else 0.0
        return value, {}, flags
    per_class = {}
    for cls in classes:
        pooled_scores, pooled_tp = [], []
        n_gt = 0
        for preds, gts in zip(pred_frames, gt_frames):
            gt_boxes = [te.box for te in gts if te.class_id == cls]
            n_gt += len(gt_boxes)
            dets = [d for d in preds if d.class_id == cls]
            if not dets:
                continue
            sc = np.array([d.score for d in dets])
            iou = np.array([[box_iou(d.box, gb) for gb in gt_boxes] for d in dets]) \
                if gt_boxes else np.empty((len(dets), 0))
            assign = _greedy_match(sc, iou, iou_threshold, smaller_is_better=False)
            pooled_scores.append(sc)
            pooled_tp.append(assign >= 0)
        if n_gt == 0:
            continue
        all_scores = np.concatenate(pooled_scores) if pooled_scores else np.array([])
        all_tp = np.concatenate(pooled_tp) if pooled_tp else np.array([], dtype=bool)
        order = _rank_order(all_scores)
        per_class[cls] = average_precision(all_tp[order].astype(np.float64), n_gt)
    return float(np.mean(list(per_class.values()))), per_class, flags


# ----------------------------------------------------------------------
# topology metrics
# ----------------------------------------------------------------------


def vertex_ap(scores: np.ndarray, positives: np.ndarray) -> float:
    """AP of one vertex's ranked candidate list (mean precision at each hit)."""
    order = _rank_order(scores)
    rel = np.asarray(positives, dtype=bool)[order]
    if rel.sum() == 0:
        return 0.0
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float((hits[rel] / ranks[rel]).mean())


def top_score(frames: list, kind: str) -> tuple[float, dict, list]:
    """Mean per-vertex edge AP.

    `frames` items are dicts with keys: gt_adjacency, gt_scores (predicted
    edge scores already routed onto the GT index space, zeros where either
    endpoint went unmatched).
    """
    flags = []
    aps = []
    for frame in frames:
        adj = np.asarray(frame["gt_adjacency"])
        sc = np.asarray(frame["gt_scores"], dtype=np.float64)
        n_rows = adj.shape[0]
        for i in range(n_rows):
            mask = np.ones(adj.shape[1], dtype=bool)
            if kind == "ll":
                mask[i] = False  # a lane is not its own candidate successor
            if adj[i][mask].sum() == 0:
                continue
            aps.append(vertex_ap(sc[i][mask], adj[i][mask]))
    counts = {"vertices": len(aps)}
    if not aps:
        flags.append(f"top_{kind}: no ground-truth edges")
        return 0.0, counts, flags
    return float(np.mean(aps)), counts, flags


def route_scores_to_gt(pred_adjacency: np.ndarray, row_assign: np.ndarray,
                       col_assign: np.ndarray, n_gt_rows: int, n_gt_cols: int) -> np.ndarray:
    """gt_scores[i, j] = predicted score between the predictions matched to
    GT i and GT j; zero wherever a side is unmatched."""
    scores = np.zeros((n_gt_rows, n_gt_cols))
    row_of_gt = {g: p for p, g in enumerate(row_assign) if g >= 0}
    col_of_gt = {g: p for p, g in enumerate(col_assign) if g >= 0}
    for gi, pi in row_of_gt.items():
        for gj, pj in col_of_gt.items():
            scores[gi, gj] = pred_adjacency[pi, pj]
    return scores


# ----------------------------------------------------------------------
# dataset-level evaluation
# ----------------------------------------------------------------------


def extract_predictions(out, image_size) -> FramePredictions:
    """Final-layer predictions of a ForwardOutput as plain evaluation inputs."""
    lanes = out.lanes.final_lanes()
    boxes = out.tes.final_boxes_px(image_size)
    scores = out.tes.final_scores()
    dets = []
    query_of = []
    for q in range(boxes.shape[0]):
        for cls in range(scores.shape[1]):
            dets.append(TeDetection(boxes[q].copy(), cls, float(scores[q, cls])))
            query_of.append(q)
    sig = lambda x: np.where(x >= 0, 1 / (1 + np.exp(-np.abs(x))),  # noqa: E731
                             np.exp(-np.abs(x)) / (1 + np.exp(-np.abs(x))))
    return FramePredictions(
        lanes=lanes,
        te=dets,
        lane_adjacency=sig(out.t_l2l.detach()),
        te_adjacency=sig(out.t_l2t.detach()),
        te_query_of=np.array(query_of, dtype=np.intp),
    )


def _match_te_queries(pred: FramePredictions, gts: list) -> np.ndarray:
    """Class-aware greedy matching of decoder TE queries to GT elements.

    Each query enters with its best class; returns query -> gt index or -1.
    """
    n_query = pred.te_adjacency.shape[1]
    best_cls = np.full(n_query, -1, dtype=np.intp)
    best_score = np.zeros(n_query)
    best_box = {}
    for d, q in zip(pred.te, pred.te_query_of):
        if d.score > best_score[q] or best_cls[q] < 0:
            best_score[q] = d.score
            best_cls[q] = d.class_id
            best_box[q] = d.box
    if not gts:
        return np.full(n_query, -1, dtype=np.intp)
    iou = np.zeros((n_query, len(gts)))
    for q in range(n_query):
        for j, te in enumerate(gts):
            if q in best_box and best_cls[q] == te.class_id:
                iou[q, j] = box_iou(best_box[q], te.box)
    return _greedy_match(best_score, iou, TE_IOU_THRESHOLD, smaller_is_better=False)


def evaluate_frames(pred_frames: list, scenes: list[Scene]) -> MetricsReport:
    gt_lane_frames = [s.lanes for s in scenes]
    gt_te_frames = [s.traffic_elements for s in scenes]

    d_l, per_thr, flags_l = det_l([p.lanes for p in pred_frames], gt_lane_frames)
    d_t, per_cls, flags_t = det_t([p.te for p in pred_frames], gt_te_frames)

    ll_frames, lt_frames = [], []
    for pred, scene in zip(pred_frames, scenes):
        lane_scores = np.array([l.confidence for l in pred.lanes])
        dist = _lane_distance_matrix(pred.lanes, scene.lanes) if pred.lanes and scene.lanes \
            else np.empty((len(pred.lanes), len(scene.lanes)))
        lane_assign = _greedy_match(lane_scores, dist, TOP_LANE_THRESHOLD, smaller_is_better=True)
        te_assign = _match_te_queries(pred, scene.traffic_elements)
        n_l, n_t = len(scene.lanes), len(scene.traffic_elements)
        ll_frames.append({
            "gt_adjacency": scene.adj_l2l,
            "gt_scores": route_scores_to_gt(pred.lane_adjacency, lane_assign, lane_assign, n_l, n_l),
        })
        lt_frames.append({
            "gt_adjacency": scene.adj_l2t,
            "gt_scores": route_scores_to_gt(pred.te_adjacency, lane_assign, te_assign, n_l, n_t),
        })
    t_ll, counts_ll, flags_ll = top_score(ll_frames, "ll")
    t_lt, counts_lt, flags_lt = top_score(lt_frames, "lt")

    counts = {
        "frames": len(scenes),
        "gt_lanes": sum(len(s.lanes) for s in scenes),
        "gt_traffic_elements": sum(len(s.traffic_elements) for s in scenes),
        "ll_vertices": counts_ll["vertices"],
        "lt_vertices": counts_lt["vertices"],
    }
    return MetricsReport(
        det_l=d_l, det_t=d_t, top_ll=t_ll, top_lt=t_lt,
        ols=ols(d_l, d_t, t_ll, t_lt),
        det_l_per_threshold=per_thr, det_t_per_class=per_cls,
        counts=counts, flags=flags_l + flags_t + flags_ll + flags_lt,
    )


def evaluate_model(model, scenes: list[Scene], scfg: SceneConfig) -> MetricsReport:
    preds = []
    for scene in scenes:
        bev, fv = rasterize(scene, scfg)
        out = model.full_forward(bev, fv, scene.camera)
        preds.append(extract_predictions(out, scene.camera.image_size))
    return evaluate_frames(preds, scenes)
