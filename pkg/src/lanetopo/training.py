"""Seeded training loop: per-step matching, loss, backward, AdamW with cosine
annealing; appends one key=value record per step to a line-delimited log."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .losses import LossWeights, total_loss
from .model import LaneTopoModel
from .optim import AdamW
from .scenes import Scene, SceneConfig, rasterize
from .tensor import backward


@dataclass
class TrainConfig:
    steps: int = 500
    base_lr: float = 2e-3
    min_lr: float = 1e-5
    weight_decay: float = 0.01
    seed: int = 0
    n_neg: int = 3
    chamfer_k: int = 11
    log_every: int = 25
    no_contrastive: bool = False


def train(model: LaneTopoModel, scenes: list[Scene], tcfg: TrainConfig,
          weights: LossWeights, scfg: SceneConfig, log_path=None,
          progress: bool = False) -> list[dict]:
    """Returns the per-step history; identical seeds yield identical runs."""
    if not scenes:
        raise NumericalError("train: empty dataset")
    rng = np.random.default_rng(np.random.SeedSequence([int(tcfg.seed), 0x7EA1]))
    grids = [rasterize(s, scfg) for s in scenes]
    opt = AdamW(model.params, tcfg.base_lr, tcfg.weight_decay,
                total_steps=max(tcfg.steps, 1), min_lr=tcfg.min_lr)
    order = np.array([], dtype=np.intp)
    history = []
    log_f = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for step in range(tcfg.steps):
            if order.size == 0:
                order = rng.permutation(len(scenes))
            idx = int(order[0])
            order = order[1:]
            scene, (bev, fv) = scenes[idx], grids[idx]

            out = model.full_forward(bev, fv, scene.camera)
            loss, breakdown = total_loss(out, scene, weights, tcfg.n_neg,
                                         tcfg.chamfer_k, tcfg.no_contrastive)
            total = loss.item()
            if not np.isfinite(total):
                bad = [k for k, v in breakdown.items() if not np.isfinite(v)]
                first = bad[0] if bad else "total"
                raise NumericalError(f"training aborted at step {step}: "
                                     f"loss term '{first}' is non-finite")
            grads = backward(loss, model.params)
            lr = opt.current_lr()
            opt.step(model.params, grads, lr=lr)

            record = {"step": step, "lr": lr, "total": total, "scene": scene.scene_id}
            record.update(breakdown)
            history.append(record)
            if log_f is not None:
                fields = [f"step={step}", f"lr={lr:.8e}"]
                fields += [f"{k}={breakdown[k]:.8e}" for k in sorted(breakdown)]
                fields.append(f"total={total:.8e}")
                log_f.write(" ".join(fields) + "\n")
            if progress and (step % tcfg.log_every == 0 or step == tcfg.steps - 1):
                print(f"step {step:5d}  lr {lr:.2e}  loss {total:.4f}")
    finally:
        if log_f is not None:
            log_f.close()
    return history
