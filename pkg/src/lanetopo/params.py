"""Named parameter registry and the flat binary checkpoint format."""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError, ShapeError
from .tensor import Tensor

MAGIC = b"LANETOPO"
VERSION = 1


class ParameterSet:
    """Ordered map from dot-separated names to trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeError(f"parameter '{name}' already registered")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = [k for k in self._params if k not in state]
        unexpected = [k for k in state if k not in self._params]
        if missing or unexpected:
            raise DataError(f"checkpoint mismatch: missing={missing} unexpected={unexpected}")
        for k, t in self._params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise DataError(f"checkpoint parameter '{k}' has shape {arr.shape}, expected {t.shape}")
            t.data = arr.copy()

    def clone(self) -> "ParameterSet":
        other = ParameterSet()
        for k, t in self._params.items():
            other.add(k, t.data.copy())
        return other


def save_checkpoint(path, params: ParameterSet) -> None:
    """Header (magic, version, count), then per parameter:
    u32 name length, UTF-8 name, u32 rank, u32 dims, little-endian f64 values."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(params)))
        for name, t in params.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", t.ndim))
            for d in t.shape:
                f.write(struct.pack("<I", d))
            f.write(t.data.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise DataError(f"checkpoint truncated while reading {what}")
        out = blob[off:off + n]
        off += n
        return out

    if take(len(MAGIC), "magic") != MAGIC:
        raise DataError("not a lanetopo checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}, expected {VERSION}")
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims")) if rank else ()
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(take(8 * n, f"values of '{name}'"), dtype="<f8").reshape(dims)
        state[name] = arr.astype(np.float64)
    if off != len(blob):
        raise DataError("checkpoint has trailing bytes")
    return state
