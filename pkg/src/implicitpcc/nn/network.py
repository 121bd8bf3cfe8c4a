"""Coordinate networks built from residual blocks.

Layout (``H`` = hidden width between blocks, ``h`` = width inside a block)::

    encoded input -> Linear(H)
      -> [Linear(h) -> LN -> core act -> Linear(H) -> LN -> +skip -> ReLU] x B
    -> Linear(out) -> sigmoid

The core activation is ReLU or ``sin(omega0 * z)``. Layer norms are
optional. Two forward paths exist: :func:`forward` (row-independent
kernels, used by the decoder and for every reconstruction) and
:func:`forward_with_cache` (BLAS, keeps activations for :func:`backward`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import kernels

LN_EPS = 1e-5
ACTIVATIONS = ("relu", "sine")


@dataclass(frozen=True)
class NetworkArch:
    input_dim: int = 3
    levels_spatial: int = 12
    levels_temporal: int = 0
    residual_blocks: int = 2
    hidden_width: int = 512
    block_width: int = 128
    output_dim: int = 1
    activation: str = "relu"
    omega0: float = 64.0
    layer_norm: bool = True

    def __post_init__(self):
        if self.input_dim not in (3, 4):
            raise ValueError("input_dim must be 3 or 4")
        if self.output_dim not in (1, 3):
            raise ValueError("output_dim must be 1 or 3")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.input_dim == 3 and self.levels_temporal != 0:
            raise ValueError("levels_temporal requires input_dim=4")
        if min(self.levels_spatial, self.levels_temporal) < 0:
            raise ValueError("encoding levels must be >= 0")
        if self.residual_blocks < 0 or min(self.hidden_width,
                                           self.block_width) < 1:
            raise ValueError("invalid layer sizes")

    @property
    def levels(self) -> tuple:
        """Encoding levels per input component."""
        return (self.levels_spatial,) * 3 + (self.levels_temporal,) * (
            self.input_dim - 3)

    @property
    def encoded_width(self) -> int:
        return 3 * (2 * self.levels_spatial + 1) + (self.input_dim - 3) * (
            2 * self.levels_temporal + 1)

    def tensor_specs(self) -> list:
        """Ordered ``(name, shape)`` of every parameter tensor."""
        H, h = self.hidden_width, self.block_width
        specs = [("in.weight", (self.encoded_width, H)), ("in.bias", (H,))]
        for b in range(self.residual_blocks):
            p = f"block{b}."
            specs += [(p + "fc1.weight", (H, h)), (p + "fc1.bias", (h,))]
            if self.layer_norm:
                specs += [(p + "ln1.gain", (h,)), (p + "ln1.shift", (h,))]
            specs += [(p + "fc2.weight", (h, H)), (p + "fc2.bias", (H,))]
            if self.layer_norm:
                specs += [(p + "ln2.gain", (H,)), (p + "ln2.shift", (H,))]
        specs += [("out.weight", (H, self.output_dim)),
                  ("out.bias", (self.output_dim,))]
        return specs

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.tensor_specs())


class NetworkParams:
    """All parameters of one network stored in a single flat float64 vector.

    ``tensors`` exposes named views into that vector, so optimizers and
    quantizers can work on the flat form while layers use shaped arrays.
    """

    def __init__(self, arch: NetworkArch, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (arch.num_params,):
            raise ValueError(
                f"expected {arch.num_params} parameters, got {flat.shape}")
        self.arch = arch
        self.flat = flat

    @property
    def tensors(self) -> dict:
        return split_flat(self.arch, self.flat)

    def flatten(self) -> np.ndarray:
        return self.flat.copy()

    @classmethod
    def unflatten(cls, arch: NetworkArch, flat) -> "NetworkParams":
        return cls(arch, np.array(flat, dtype=np.float64))

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, self.flat.copy())

    def __eq__(self, other):
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.flat,
                                                          other.flat)

    __hash__ = None

    def __repr__(self):
        return f"NetworkParams({self.arch}, n={len(self.flat)})"


def split_flat(arch: NetworkArch, flat: np.ndarray) -> dict:
    out, pos = {}, 0
    for name, shape in arch.tensor_specs():
        size = int(np.prod(shape))
        out[name] = flat[pos:pos + size].reshape(shape)
        pos += size
    return out


def zeros(arch: NetworkArch) -> NetworkParams:
    return NetworkParams(arch, np.zeros(arch.num_params))


def init_params(arch: NetworkArch, rng: np.random.Generator) -> NetworkParams:
    """Random initialization.

    ReLU-facing weights are Kaiming-uniform. For the sine core the input
    projection uses ``U(-1/fan_in, 1/fan_in)`` and the layers feeding a
    sine use ``U(+-sqrt(6)/(omega0*sqrt(fan_in)))``. A layer norm that
    feeds a sine starts with gain ``1/omega0`` so the initial argument of
    the sine has unit scale. Biases and shifts start at zero.
    """
    params = zeros(arch)
    t = params.tensors
    sine = arch.activation == "sine"

    def uniform(name, bound):
        t[name][...] = rng.uniform(-bound, bound, size=t[name].shape)

    def kaiming(name):
        uniform(name, np.sqrt(6.0 / t[name].shape[0]))

    fan_in = arch.encoded_width
    if sine:
        uniform("in.weight", 1.0 / fan_in)
    else:
        kaiming("in.weight")
    for b in range(arch.residual_blocks):
        p = f"block{b}."
        if sine:
            w = t[p + "fc1.weight"]
            uniform(p + "fc1.weight", np.sqrt(6.0 / w.shape[0]) / arch.omega0)
        else:
            kaiming(p + "fc1.weight")
        kaiming(p + "fc2.weight")
        if arch.layer_norm:
            t[p + "ln1.gain"][...] = 1.0 / arch.omega0 if sine else 1.0
            t[p + "ln2.gain"][...] = 1.0
    uniform("out.weight", 1.0 / np.sqrt(arch.hidden_width))
    return params


# --------------------------------------------------------------------------
# inputs

def normalize_coords(voxels: np.ndarray, resolution_bits: int,
                     frame=None, group_size: int = 1) -> np.ndarray:
    """Map voxel coordinates to ``[-1, 1]``; append a time column if given.

    ``frame`` is a scalar or per-row array of frame indices in a group of
    ``group_size`` frames; a one-frame group maps to time 0.
    """
    v = np.asarray(voxels, dtype=np.float64).reshape(-1, 3)
    x = 2.0 * v / ((1 << resolution_bits) - 1) - 1.0
    if frame is None:
        return x
    if group_size > 1:
        t = 2.0 * np.asarray(frame, dtype=np.float64) / (group_size - 1) - 1.0
    else:
        t = np.zeros(1)
    t = np.broadcast_to(t, (len(x),)).reshape(-1, 1)
    return np.concatenate([x, t], axis=1)


def positional_encode(coord: Sequence[float], levels: Sequence[int]
                      ) -> np.ndarray:
    """Encode one coordinate vector; component ``c`` with ``L`` levels maps to
    ``(c, sin(pi c), cos(pi c), ..., sin(2**(L-1) pi c), cos(2**(L-1) pi c))``.
    """
    c = np.asarray(coord, dtype=np.float64).reshape(1, -1)
    return encode_batch(c, levels)[0]


def encode_batch(coords: np.ndarray, levels: Sequence[int]) -> np.ndarray:
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != len(levels):
        raise ValueError(
            f"coords of shape {coords.shape} do not match {len(levels)} levels")
    if coords.size and np.abs(coords).max() > 1.0 + 1e-9:
        raise ValueError("coordinates must be normalized to [-1, 1]")
    return kernels.positional_encode_rows(coords, levels)


# --------------------------------------------------------------------------
# inference path

def _check_width(arch, x):
    if x.ndim != 2 or x.shape[1] != arch.encoded_width:
        raise ValueError(
            f"input width {x.shape[-1]} does not match encoded width "
            f"{arch.encoded_width}")


def forward(params: NetworkParams, batch: np.ndarray) -> np.ndarray:
    """Network outputs in (0, 1) for encoded inputs, shape (n, output_dim).

    Each row is computed independently of the others, bit-for-bit.
    """
    arch = params.arch
    x = np.ascontiguousarray(batch, dtype=np.float64)
    _check_width(arch, x)
    t = params.tensors
    h = kernels.dense(x, t["in.weight"], t["in.bias"])
    for b in range(arch.residual_blocks):
        p = f"block{b}."
        z = kernels.dense(h, t[p + "fc1.weight"], t[p + "fc1.bias"])
        if arch.layer_norm:
            z = kernels.layer_norm(z, t[p + "ln1.gain"], t[p + "ln1.shift"],
                                   LN_EPS)
        if arch.activation == "sine":
            c = kernels.sine(z, arch.omega0)
        else:
            c = np.maximum(z, 0.0)
        z = kernels.dense(c, t[p + "fc2.weight"], t[p + "fc2.bias"])
        if arch.layer_norm:
            z = kernels.layer_norm(z, t[p + "ln2.gain"], t[p + "ln2.shift"],
                                   LN_EPS)
        h = np.maximum(h + z, 0.0)
    z = kernels.dense(h, t["out.weight"], t["out.bias"])
    return kernels.sigmoid(z)


def predict_coords(params: NetworkParams, coords: np.ndarray,
                   chunk: int = 16384) -> np.ndarray:
    """Encode normalized coordinates and run :func:`forward` in chunks."""
    levels = params.arch.levels
    outs = [forward(params, encode_batch(coords[i:i + chunk], levels))
            for i in range(0, len(coords), chunk)]
    if not outs:
        return np.empty((0, params.arch.output_dim))
    return np.concatenate(outs)


# --------------------------------------------------------------------------
# training path

def _ln_forward(z, gain, shift):
    mean = z.mean(axis=1, keepdims=True)
    d = z - mean
    inv = 1.0 / np.sqrt((d * d).mean(axis=1, keepdims=True) + LN_EPS)
    zhat = d * inv
    return zhat * gain + shift, (zhat, inv)


def _ln_backward(dy, gain, cache):
    zhat, inv = cache
    dgain = (dy * zhat).sum(axis=0)
    dshift = dy.sum(axis=0)
    dzhat = dy * gain
    m = dzhat.shape[1]
    dz = inv * (dzhat - dzhat.mean(axis=1, keepdims=True)
                - zhat * (dzhat * zhat).sum(axis=1, keepdims=True) / m)
    return dz, dgain, dshift


def forward_with_cache(params: NetworkParams, batch: np.ndarray,
                       dtype=np.float64):
    """BLAS forward pass that records what :func:`backward` needs."""
    arch = params.arch
    x = np.asarray(batch, dtype=dtype)
    _check_width(arch, x)
    t = split_flat(arch, params.flat.astype(dtype, copy=False))
    cache = {"x": x, "t": t, "blocks": []}
    h = x @ t["in.weight"] + t["in.bias"]
    for b in range(arch.residual_blocks):
        p = f"block{b}."
        bc = {"h_in": h}
        z1 = h @ t[p + "fc1.weight"] + t[p + "fc1.bias"]
        if arch.layer_norm:
            z1, bc["ln1"] = _ln_forward(z1, t[p + "ln1.gain"],
                                        t[p + "ln1.shift"])
        bc["a1"] = z1
        if arch.activation == "sine":
            c = np.sin(arch.omega0 * z1)
        else:
            c = np.maximum(z1, 0)
        bc["c"] = c
        z2 = c @ t[p + "fc2.weight"] + t[p + "fc2.bias"]
        if arch.layer_norm:
            z2, bc["ln2"] = _ln_forward(z2, t[p + "ln2.gain"],
                                        t[p + "ln2.shift"])
        h = np.maximum(h + z2, 0)
        bc["h_out"] = h
        cache["blocks"].append(bc)
    cache["h"] = h
    out = expit(h @ t["out.weight"] + t["out.bias"])
    cache["out"] = out
    return out, cache


def backward(params: NetworkParams, batch: np.ndarray,
             output_grad: np.ndarray, cache=None,
             dtype=np.float64) -> np.ndarray:
    """Gradient of ``sum(output_grad * forward(batch))`` w.r.t. every
    parameter, returned as a flat array aligned with ``params.flat``.
    """
    arch = params.arch
    if cache is None:
        _, cache = forward_with_cache(params, batch, dtype)
    out = cache["out"]
    g_out = np.asarray(output_grad, dtype=out.dtype).reshape(out.shape)
    t = cache["t"]
    grad_flat = np.zeros(arch.num_params, dtype=out.dtype)
    g = split_flat(arch, grad_flat)

    dz = g_out * out * (1 - out)
    g["out.weight"][...] = cache["h"].T @ dz
    g["out.bias"][...] = dz.sum(axis=0)
    dh = dz @ t["out.weight"].T
    for b in reversed(range(arch.residual_blocks)):
        p = f"block{b}."
        bc = cache["blocks"][b]
        dsum = dh * (bc["h_out"] > 0)
        d2 = dsum
        if arch.layer_norm:
            d2, g[p + "ln2.gain"][...], g[p + "ln2.shift"][...] = _ln_backward(
                d2, t[p + "ln2.gain"], bc["ln2"])
        g[p + "fc2.weight"][...] = bc["c"].T @ d2
        g[p + "fc2.bias"][...] = d2.sum(axis=0)
        dc = d2 @ t[p + "fc2.weight"].T
        if arch.activation == "sine":
            d1 = dc * arch.omega0 * np.cos(arch.omega0 * bc["a1"])
        else:
            d1 = dc * (bc["a1"] > 0)
        if arch.layer_norm:
            d1, g[p + "ln1.gain"][...], g[p + "ln1.shift"][...] = _ln_backward(
                d1, t[p + "ln1.gain"], bc["ln1"])
        g[p + "fc1.weight"][...] = bc["h_in"].T @ d1
        g[p + "fc1.bias"][...] = d1.sum(axis=0)
        dh = dsum + d1 @ t[p + "fc1.weight"].T
    g["in.weight"][...] = cache["x"].T @ dh
    g["in.bias"][...] = dh.sum(axis=0)
    return grad_flat
