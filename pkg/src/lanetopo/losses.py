"""Set-prediction matching and every training loss term.

Deep supervision: each decoder layer's predictions are matched and supervised
independently; topology losses use the final layer's matching, with ground
truth adjacency routed through the matched prediction slots (unmatched slots
carry all-zero relations).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import diffgeom, tensor as T
from .errors import DataError, ShapeError
from .geometry import bernstein_matrix, bezier_sample, chamfer_distance
from .model import ForwardOutput, _sigmoid_np
from .scenes import Scene
from .tensor import Tensor

_EPS2 = 1e-18


@dataclass
class LossWeights:
    """lam1..lam3 weight TE classification / L1 / GIoU, lam4..lam6 lane
    classification / control-point L1 / on-curve Chamfer, lam7 topology
    focal, lam8 topology contrastive."""

    lam1: float = 2.0
    lam2: float = 5.0
    lam3: float = 2.0
    lam4: float = 1.5
    lam5: float = 0.05
    lam6: float = 0.02
    lam7: float = 5.0
    lam8: float = 0.1

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise DataError(f"loss weight {name} must be non-negative, got {v}")

    def as_list(self):
        return [self.lam1, self.lam2, self.lam3, self.lam4,
                self.lam5, self.lam6, self.lam7, self.lam8]


@dataclass
class MatchResult:
    assignment: list    # prediction index -> ground-truth index, -1 if unmatched
    total_cost: float

    def pairs(self) -> list[tuple[int, int]]:
        return [(p, g) for p, g in enumerate(self.assignment) if g >= 0]


def hungarian_match(cost: np.ndarray) -> MatchResult:
    """Minimum-cost injective assignment on a rectangular cost matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeError(f"hungarian_match: cost must be 2-d, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise DataError("hungarian_match: cost matrix contains non-finite entries")
    assignment = [-1] * cost.shape[0]
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return MatchResult(assignment, 0.0)
    rows, cols = scipy.optimize.linear_sum_assignment(cost)
    for r, c in zip(rows, cols):
        assignment[r] = int(c)
    return MatchResult(assignment, float(cost[rows, cols].sum()))


# ----------------------------------------------------------------------
# individual losses
# ----------------------------------------------------------------------


def _softplus(x: Tensor) -> Tensor:
    # log(1 + e^x), stable in both tails
    return T.relu(x) + T.log(1.0 + T.exp(-T.tabs(x)))


def focal_loss(logits: Tensor, targets: np.ndarray, alpha: float = 0.25,
               gamma: float = 2.0, reduction: str = "mean") -> Tensor:
    """Binary focal loss on raw logits against {0, 1} targets."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError(f"focal_loss: targets {targets.shape} vs logits {logits.shape}")
    if not np.all((targets == 0) | (targets == 1)):
        raise DataError("focal_loss: targets must be 0 or 1")
    y = Tensor(targets)
    p = T.sigmoid(logits)
    log_p = -_softplus(-logits)
    log_1mp = -_softplus(logits)
    pos = T.power(1.0 - p, gamma) * log_p * (-alpha)
    neg = T.power(p, gamma) * log_1mp * (-(1.0 - alpha))
    loss = y * pos + (1.0 - y) * neg
    if reduction == "mean":
        return loss.mean()
    if reduction == "sum":
        return loss.sum()
    raise DataError(f"focal_loss: unknown reduction '{reduction}'")


def _boxes_to_corners(b: Tensor) -> tuple:
    cx, cy, w, h = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5


def giou_loss_pairs(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Mean (1 - GIoU) over aligned (n, 4) center-format box pairs."""
    gt = np.asarray(gt, dtype=np.float64)
    if np.any(gt[:, 2:] <= 0):
        raise DataError("giou: ground-truth boxes must have positive width and height")
    gt_t = Tensor(gt)
    px1, py1, px2, py2 = _boxes_to_corners(pred)
    gx1, gy1, gx2, gy2 = _boxes_to_corners(gt_t)
    iw = T.clip(T.minimum(px2, gx2) - T.maximum(px1, gx1), 0.0, None)
    ih = T.clip(T.minimum(py2, gy2) - T.maximum(py1, gy1), 0.0, None)
    inter = iw * ih
    area_p = T.clip(px2 - px1, 0.0, None) * T.clip(py2 - py1, 0.0, None)
    union = area_p + (gx2 - gx1) * (gy2 - gy1) - inter
    hull = (T.maximum(px2, gx2) - T.minimum(px1, gx1)) * (T.maximum(py2, gy2) - T.minimum(py1, gy1))
    giou = inter / union - (hull - union) / hull
    return (1.0 - giou).mean()


def giou_loss(pred_box, gt_box) -> float | Tensor:
    """1 - GIoU for a single box pair (cx, cy, w, h)."""
    pred_arr = pred_box.detach() if isinstance(pred_box, Tensor) else np.asarray(pred_box, dtype=np.float64)
    if np.any(pred_arr[2:] <= 0):
        raise DataError("giou: predicted box must have positive width and height")
    pred_t = pred_box if isinstance(pred_box, Tensor) else Tensor(pred_arr)
    out = giou_loss_pairs(pred_t.reshape(1, 4), np.asarray(gt_box, dtype=np.float64).reshape(1, 4))
    return out if isinstance(pred_box, Tensor) else out.item()


def bezier_chamfer_loss(pred_cp, gt_cp, k: int = 11) -> Tensor:
    """Chamfer distance between the K-point samplings of two curve sets.

    pred_cp: Tensor (4, 3) or (n, 4, 3); gt_cp: matching numpy array.
    """
    pred_t = pred_cp if isinstance(pred_cp, Tensor) else Tensor(np.asarray(pred_cp, dtype=np.float64))
    pred_pts = diffgeom.bezier_points(pred_t.reshape(-1, 4, 3), k)   # (n, K, 3)
    gt_arr = np.asarray(gt_cp, dtype=np.float64).reshape(-1, 4, 3)
    ts = np.arange(k, dtype=np.float64) / (k - 1)
    gt_pts = bernstein_matrix(ts)[None] @ gt_arr                     # (n, K, 3)
    n = gt_pts.shape[0]
    diff = pred_pts.reshape(n, k, 1, 3) - Tensor(gt_pts.reshape(n, 1, k, 3))
    d = T.sqrt((diff * diff).sum(axis=-1) + _EPS2)                   # (n, K, K)
    return 0.5 * d.min(axis=2).mean() + 0.5 * d.min(axis=1).mean()


def infonce_topology_loss(logits: Tensor, gt_adjacency: np.ndarray, n_neg: int = 3) -> Tensor:
    """Contrastive loss over an adjacency-logit matrix, computed in both the
    row and the column direction.

    Per line that holds at least one positive and one negative, the positives
    are paired with the top-`n_neg` highest-scoring negatives and accumulated
    as log(1 + sum exp(neg - pos)). Each direction averages its contributing
    lines; the final loss averages the directions that had any. Degenerate
    lines and directions drop out rather than contributing infinities.
    """
    gt = np.asarray(gt_adjacency)
    if gt.shape != logits.shape:
        raise ShapeError(f"infonce: adjacency {gt.shape} vs logits {logits.shape}")
    if not np.all((gt == 0) | (gt == 1)):
        raise DataError("infonce: ground-truth adjacency must be 0/1")

    raw = logits.detach()
    n_rows, n_cols = gt.shape
    flat = logits.reshape(n_rows * n_cols)
    direction_means = []
    for direction in range(2):
        line_losses = []
        n_lines = n_rows if direction == 0 else n_cols
        for line in range(n_lines):
            mask = gt[line] if direction == 0 else gt[:, line]
            pos_idx = np.nonzero(mask == 1)[0]
            neg_idx = np.nonzero(mask == 0)[0]
            if len(pos_idx) == 0 or len(neg_idx) == 0:
                continue
            vals = raw[line] if direction == 0 else raw[:, line]
            hardest = neg_idx[np.argsort(-vals[neg_idx], kind="stable")[:n_neg]]
            if direction == 0:
                pflat = line * n_cols + pos_idx
                nflat = line * n_cols + hardest
            else:
                pflat = pos_idx * n_cols + line
                nflat = hardest * n_cols + line
            pos = T.take_flat(flat, pflat)
            neg = T.take_flat(flat, nflat)
            d = neg.reshape(1, -1) - pos.reshape(-1, 1)
            m = T.maximum(d.max(axis=1).max(axis=0), Tensor(0.0))
            z = T.exp(d - m).sum() + T.exp(-m)
            line_losses.append(m + T.log(z))
        if line_losses:
            total = line_losses[0]
            for term in line_losses[1:]:
                total = total + term
            direction_means.append(total * (1.0 / len(line_losses)))
    if not direction_means:
        return Tensor(0.0)
    out = direction_means[0]
    for term in direction_means[1:]:
        out = out + term
    return out * (1.0 / len(direction_means))


# ----------------------------------------------------------------------
# matching costs
# ----------------------------------------------------------------------


def _focal_cost(prob: np.ndarray, alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    prob = np.clip(prob, 1e-8, 1 - 1e-8)
    pos = alpha * (1 - prob) ** gamma * (-np.log(prob))
    neg = (1 - alpha) * prob ** gamma * (-np.log(1 - prob))
    return pos - neg


def lane_match_cost(cp_m: np.ndarray, logits: np.ndarray, gt_cps: np.ndarray,
                    w: LossWeights, k: int) -> np.ndarray:
    """(P, G) cost: focal-style classification + control-point L1 + Chamfer."""
    n_pred, n_gt = cp_m.shape[0], gt_cps.shape[0]
    cls = _focal_cost(_sigmoid_np(logits[:, 0]))[:, None]
    l1 = np.abs(cp_m.reshape(n_pred, 1, 12) - gt_cps.reshape(1, n_gt, 12)).mean(axis=2)
    basis = bernstein_matrix(np.arange(k, dtype=np.float64) / (k - 1))
    pred_pts = basis @ cp_m                                    # (P, K, 3)
    gt_pts = basis @ gt_cps                                    # (G, K, 3)
    diff = pred_pts[:, None, :, None, :] - gt_pts[None, :, None, :, :]
    d = np.sqrt((diff * diff).sum(axis=-1))                    # (P, G, K, K)
    cd = 0.5 * d.min(axis=3).mean(axis=2) + 0.5 * d.min(axis=2).mean(axis=2)
    return w.lam4 * cls + w.lam5 * l1 + w.lam6 * cd


def te_match_cost(boxes: np.ndarray, logits: np.ndarray, gt_boxes: np.ndarray,
                  gt_classes: np.ndarray, w: LossWeights) -> np.ndarray:
    n_pred, n_gt = boxes.shape[0], gt_boxes.shape[0]
    prob = _sigmoid_np(logits)
    cls = _focal_cost(prob)[:, gt_classes]
    l1 = np.abs(boxes.reshape(n_pred, 1, 4) - gt_boxes.reshape(1, n_gt, 4)).mean(axis=2)
    giou = np.empty((n_pred, n_gt))
    for j in range(n_gt):
        giou[:, j] = _giou_np(boxes, gt_boxes[j])
    return w.lam1 * cls + w.lam2 * l1 + w.lam3 * (1.0 - giou)


def _giou_np(boxes: np.ndarray, gt: np.ndarray) -> np.ndarray:
    px1, py1 = boxes[:, 0] - boxes[:, 2] / 2, boxes[:, 1] - boxes[:, 3] / 2
    px2, py2 = boxes[:, 0] + boxes[:, 2] / 2, boxes[:, 1] + boxes[:, 3] / 2
    gx1, gy1, gx2, gy2 = gt[0] - gt[2] / 2, gt[1] - gt[3] / 2, gt[0] + gt[2] / 2, gt[1] + gt[3] / 2
    iw = np.clip(np.minimum(px2, gx2) - np.maximum(px1, gx1), 0, None)
    ih = np.clip(np.minimum(py2, gy2) - np.maximum(py1, gy1), 0, None)
    inter = iw * ih
    union = (px2 - px1) * (py2 - py1) + (gx2 - gx1) * (gy2 - gy1) - inter
    hull = (np.maximum(px2, gx2) - np.minimum(px1, gx1)) * (np.maximum(py2, gy2) - np.minimum(py1, gy1))
    return inter / union - (hull - union) / hull


# ----------------------------------------------------------------------
# total loss
# ----------------------------------------------------------------------


def route_adjacency(gt_adj: np.ndarray, lane_assign: list, te_assign: list | None,
                    n_pred_rows: int, n_pred_cols: int) -> np.ndarray:
    """Move GT adjacency onto prediction slots through the matchings."""
    routed = np.zeros((n_pred_rows, n_pred_cols), dtype=np.float64)
    col_assign = lane_assign if te_assign is None else te_assign
    for pi, gi in enumerate(lane_assign):
        if gi < 0:
            continue
        for pj, gj in enumerate(col_assign):
            if gj < 0 or (te_assign is None and pi == pj):
                continue
            routed[pi, pj] = gt_adj[gi, gj]
    return routed


def total_loss(out: ForwardOutput, scene: Scene, weights: LossWeights,
               n_neg: int = 3, chamfer_k: int = 11,
               no_contrastive: bool = False) -> tuple[Tensor, dict]:
    """Weighted training objective plus a per-term float breakdown."""
    gt_lane_cps = np.stack([l.control_points for l in scene.lanes])
    wi, hi = scene.camera.image_size
    box_scale = np.array([wi, hi, wi, hi], dtype=np.float64)
    gt_boxes_n = np.stack([te.box for te in scene.traffic_elements]) / box_scale
    gt_te_classes = np.array([te.class_id for te in scene.traffic_elements])

    terms: dict[str, Tensor] = {
        "lane_cls": Tensor(0.0), "lane_l1": Tensor(0.0), "lane_cd": Tensor(0.0),
        "te_cls": Tensor(0.0), "te_l1": Tensor(0.0), "te_giou": Tensor(0.0),
        "topo_cls": Tensor(0.0), "topo_con": Tensor(0.0),
    }
    lane_match = te_match = None

    for li in range(len(out.lanes.control_points)):
        cp_t = out.lanes.control_points[li]
        logits_t = out.lanes.class_logits[li]
        cost = lane_match_cost(cp_t.detach(), logits_t.detach(), gt_lane_cps, weights, chamfer_k)
        match = hungarian_match(cost)
        lane_match = match
        targets = np.zeros(logits_t.shape)
        rows = np.array([p for p, g in match.pairs()], dtype=np.intp)
        gts = np.array([g for p, g in match.pairs()], dtype=np.intp)
        targets[rows, 0] = 1.0
        terms["lane_cls"] = terms["lane_cls"] + focal_loss(logits_t, targets)
        matched_cp = cp_t[rows]
        terms["lane_l1"] = terms["lane_l1"] + T.tabs(matched_cp - Tensor(gt_lane_cps[gts])).mean()
        terms["lane_cd"] = terms["lane_cd"] + bezier_chamfer_loss(matched_cp, gt_lane_cps[gts], chamfer_k)

    for li in range(len(out.tes.boxes_norm)):
        boxes_t = out.tes.boxes_norm[li]
        logits_t = out.tes.class_logits[li]
        cost = te_match_cost(boxes_t.detach(), logits_t.detach(), gt_boxes_n, gt_te_classes, weights)
        match = hungarian_match(cost)
        te_match = match
        targets = np.zeros(logits_t.shape)
        rows = np.array([p for p, g in match.pairs()], dtype=np.intp)
        gts = np.array([g for p, g in match.pairs()], dtype=np.intp)
        targets[rows, gt_te_classes[gts]] = 1.0
        terms["te_cls"] = terms["te_cls"] + focal_loss(logits_t, targets)
        matched = boxes_t[rows]
        terms["te_l1"] = terms["te_l1"] + T.tabs(matched - Tensor(gt_boxes_n[gts])).mean()
        terms["te_giou"] = terms["te_giou"] + giou_loss_pairs(matched, gt_boxes_n[gts])

    routed_ll = route_adjacency(scene.adj_l2l.astype(np.float64), lane_match.assignment,
                                None, out.t_l2l.shape[0], out.t_l2l.shape[1])
    routed_lt = route_adjacency(scene.adj_l2t.astype(np.float64), lane_match.assignment,
                                te_match.assignment, out.t_l2t.shape[0], out.t_l2t.shape[1])
    terms["topo_cls"] = focal_loss(out.t_l2l, routed_ll) + focal_loss(out.t_l2t, routed_lt)
    if not no_contrastive:
        terms["topo_con"] = (infonce_topology_loss(out.t_l2l, routed_ll, n_neg)
                             + infonce_topology_loss(out.t_l2t, routed_lt, n_neg))

    lam = weights
    total = (lam.lam1 * terms["te_cls"] + lam.lam2 * terms["te_l1"] + lam.lam3 * terms["te_giou"]
             + lam.lam4 * terms["lane_cls"] + lam.lam5 * terms["lane_l1"] + lam.lam6 * terms["lane_cd"]
             + lam.lam7 * terms["topo_cls"] + lam.lam8 * terms["topo_con"])
    weighted = {
        "te_cls": lam.lam1 * terms["te_cls"].item(), "te_l1": lam.lam2 * terms["te_l1"].item(),
        "te_giou": lam.lam3 * terms["te_giou"].item(), "lane_cls": lam.lam4 * terms["lane_cls"].item(),
        "lane_l1": lam.lam5 * terms["lane_l1"].item(), "lane_cd": lam.lam6 * terms["lane_cd"].item(),
        "topo_cls": lam.lam7 * terms["topo_cls"].item(), "topo_con": lam.lam8 * terms["topo_con"].item(),
    }
    return total, weighted
