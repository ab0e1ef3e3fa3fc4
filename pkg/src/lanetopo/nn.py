"""Small layer building blocks registered against a ParameterSet."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ParameterSet
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, params: ParameterSet, rng: np.random.Generator, name: str,
                 d_in: int, d_out: int, zero_init: bool = False):
        if zero_init:
            w = np.zeros((d_in, d_out))
            b = np.zeros(d_out)
        else:
            w = uniform_init(rng, d_in, (d_in, d_out))
            b = uniform_init(rng, d_in, (d_out,))
        self.weight = params.add(f"{name}.weight", w)
        self.bias = params.add(f"{name}.bias", b)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            return (T.matmul(x.reshape(1, -1), self.weight) + self.bias).reshape(self.bias.shape)
        return T.matmul(x, self.weight) + self.bias


class MLP:
    """Linear stack with ReLU between layers, linear output."""

    def __init__(self, params: ParameterSet, rng: np.random.Generator, name: str,
                 dims: list[int], zero_init_last: bool = False):
        self.layers = []
        for i in range(len(dims) - 1):
            zero = zero_init_last and i == len(dims) - 2
            self.layers.append(Linear(params, rng, f"{name}.fc{i}", dims[i], dims[i + 1], zero_init=zero))

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


class LayerNorm:
    def __init__(self, params: ParameterSet, name: str, dim: int, eps: float = 1e-5):
        self.gain = params.add(f"{name}.gain", np.ones(dim))
        self.bias = params.add(f"{name}.bias", np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.eps) * self.gain + self.bias
