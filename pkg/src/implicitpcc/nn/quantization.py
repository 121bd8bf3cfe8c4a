"""Uniform scalar quantization of network parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkArch, NetworkParams, split_flat

_INT32 = np.iinfo(np.int32)


def round_half_away(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True, eq=False)
class QuantizedParams:
    arch: NetworkArch
    step_size: float
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int32)
        if idx.shape != (self.arch.num_params,):
            raise ValueError("index count does not match architecture")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        object.__setattr__(self, "indices", idx)

    def arrays(self) -> dict:
        return split_flat(self.arch, self.indices)

    def __eq__(self, other):
        if not isinstance(other, QuantizedParams):
            return NotImplemented
        return (self.arch == other.arch and self.step_size == other.step_size
                and np.array_equal(self.indices, other.indices))

    __hash__ = None


def quantize_array(values: np.ndarray, step_size: float) -> np.ndarray:
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    q = round_half_away(np.asarray(values) / step_size)
    return np.clip(q, _INT32.min, _INT32.max).astype(np.int32)


def quantize(params: NetworkParams, step_size: float) -> QuantizedParams:
    return QuantizedParams(params.arch, step_size,
                           quantize_array(params.flat, step_size))


def dequantize(q: QuantizedParams) -> NetworkParams:
    return NetworkParams(q.arch, q.indices.astype(np.float64) * q.step_size)
