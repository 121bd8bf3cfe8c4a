"""Shared optimization loop for the occupancy and color networks.

One loop covers every coding mode. A network is trained either as a
single parameter vector or as a Bézier curve of ``P`` control vectors;
in the latter case each step draws a frame ``t`` and trains the point
of the curve that belongs to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional

import numpy as np

from .nn.network import NetworkArch, NetworkParams, backward, forward_with_cache
from .nn.optim import make_optimizer, adam_update

MAX_CURVE_DEGREE = 8


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one (seed, frame, ...) stream."""
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def bernstein_weights(degree: int, t: int, group_size: int) -> np.ndarray:
    """Weights of the ``degree + 1`` control points at frame ``t``."""
    if group_size < 2:
        raise ValueError("curve mode needs at least two frames per group")
    if not 1 <= degree <= MAX_CURVE_DEGREE:
        raise ValueError(f"curve degree must lie in [1, {MAX_CURVE_DEGREE}]")
    if not 0 <= t < group_size:
        raise ValueError(f"frame {t} outside group of {group_size}")
    s = t / (group_size - 1)
    return np.array([comb(degree, i) * s ** i * (1.0 - s) ** (degree - i)
                     for i in range(degree + 1)], dtype=np.float64)


def combine_controls(controls: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_i w_i * C_i`` accumulated in a fixed order."""
    out = weights[0] * controls[0]
    for w, c in zip(weights[1:], controls[1:]):
        out = out + w * c
    return out


@dataclass(frozen=True)
class Schedule:
    steps: int
    batch_size: int
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainResult:
    controls: np.ndarray
    losses: list = field(default_factory=list)

    def params(self, arch: NetworkArch, index: int = 0) -> NetworkParams:
        return NetworkParams(arch, self.controls[index].copy())


# draw(rng, frame) -> (encoded inputs, targets); frame is None unless curved
Draw = Callable[[np.random.Generator, Optional[int]], tuple]
# loss(outputs, targets) -> (mean loss, d mean loss / d outputs)
Loss = Callable[[np.ndarray, np.ndarray], tuple]


def run_training(arch: NetworkArch, init: np.ndarray, schedule: Schedule,
                 rng: np.random.Generator, draw: Draw, loss: Loss,
                 l1_weight: float = 0.0,
                 reference: Optional[np.ndarray] = None,
                 group_size: int = 1, dtype=np.float32,
                 log_every: int = 0) -> TrainResult:
    """Adam over ``schedule.steps`` batches.

    ``init`` has shape ``(P, num_params)``. With ``P == 1`` the single
    vector is trained directly and ``reference`` (if given) anchors the L1
    term. With ``P > 1`` the rows are Bézier control points over a group
    of ``group_size`` frames.
    """
    controls = np.array(init, dtype=np.float64, ndmin=2)
    n_ctrl = controls.shape[0]
    if controls.shape[1] != arch.num_params:
        raise ValueError("initial parameters do not match the architecture")
    if n_ctrl > 1 and reference is not None:
        raise ValueError("a reference anchor applies to single networks only")
    state = make_optimizer(controls.shape, schedule.steps,
                           schedule.learning_rate, schedule.lr_decay,
                           schedule.weight_decay)
    degree = n_ctrl - 1
    ref = None if reference is None else np.asarray(reference, np.float64)
    result = TrainResult(controls)
    running = 0.0
    for step in range(schedule.steps):
        if n_ctrl > 1:
            t = int(rng.integers(0, group_size))
            w = bernstein_weights(degree, t, group_size)
            flat = combine_controls(controls, w)
        else:
            t, w, flat = None, None, controls[0]
        inputs, targets = draw(rng, t)
        params = NetworkParams(arch, flat)
        out, cache = forward_with_cache(params, inputs, dtype)
        value, dout = loss(out, targets)
        g = backward(params, inputs, dout, cache, dtype).astype(np.float64)
        if n_ctrl > 1:
            grad = w[:, None] * g[None, :]
        else:
            grad = g[None, :]
        if l1_weight:
            anchor = controls if ref is None else controls - ref
            grad = grad + l1_weight * np.sign(anchor)
        adam_update(controls, grad, state)
        running += float(value)
        if log_every and (step + 1) % log_every == 0:
            result.losses.append((step + 1, running / log_every))
            running = 0.0
    return result
