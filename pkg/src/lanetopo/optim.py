"""AdamW with decoupled weight decay and the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, ShapeError
from .params import ParameterSet


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    if total_steps <= 0:
        raise ConfigError("cosine_lr: total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"cosine_lr: step {step} outside [0, {total_steps}]")
    return min_lr + (base_lr - min_lr) * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


class AdamW:
    """Decoupled-weight-decay Adam; moments keyed by parameter name."""

    def __init__(self, params: ParameterSet, base_lr: float, weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 total_steps: int | None = None, min_lr: float = 0.0):
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.total_steps = total_steps
        self.min_lr = min_lr
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def current_lr(self) -> float:
        if self.total_steps is None:
            return self.base_lr
        step = min(self.step_count, self.total_steps)
        return cosine_lr(step, self.total_steps, self.base_lr, self.min_lr)

    def step(self, params: ParameterSet, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        """One update; `grads` must cover every parameter."""
        missing = [k for k, _ in params.items() if k not in grads]
        if missing:
            raise ShapeError(f"adamw step: missing gradients for {missing}")
        if lr is None:
            lr = self.current_lr()
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, p in params.items():
            g = np.asarray(grads[k], dtype=np.float64)
            if g.shape != p.shape:
                raise ShapeError(f"adamw step: gradient for '{k}' has shape {g.shape}, expected {p.shape}")
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
