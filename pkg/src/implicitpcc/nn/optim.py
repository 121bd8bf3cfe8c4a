"""Adam with decoupled weight decay, step-decay schedule and L1 subgradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkParams

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    initial_lr: float = 1e-3
    decay: float = 0.1
    boundaries: tuple = ()
    weight_decay: float = 1e-4
    step: int = 0

    def learning_rate(self, step: int | None = None) -> float:
        """Piecewise-constant rate: multiplied by ``decay`` at each boundary."""
        s = self.step if step is None else step
        crossed = sum(1 for b in self.boundaries if s >= b)
        return self.initial_lr * self.decay ** crossed


def quarter_boundaries(total_steps: int) -> tuple:
    """Steps at which a quarter, half and three quarters of training end."""
    return tuple(sorted({total_steps * k // 4 for k in (1, 2, 3)} - {0}))


def make_optimizer(shape, total_steps: int, lr: float = 1e-3,
                   decay: float = 0.1, weight_decay: float = 1e-4
                   ) -> OptimizerState:
    return OptimizerState(np.zeros(shape), np.zeros(shape), lr, decay,
                          quarter_boundaries(total_steps), weight_decay)


def adam_update(theta: np.ndarray, grad: np.ndarray,
                state: OptimizerState) -> None:
    """In-place AdamW update of a float64 array."""
    lr = state.learning_rate()
    t = state.step + 1
    if state.weight_decay:
        theta -= lr * state.weight_decay * theta
    state.m *= BETA1
    state.m += (1 - BETA1) * grad
    state.v *= BETA2
    state.v += (1 - BETA2) * grad * grad
    mhat = state.m / (1 - BETA1 ** t)
    vhat = state.v / (1 - BETA2 ** t)
    theta -= lr * mhat / (np.sqrt(vhat) + EPS)
    state.step = t


def adam_step(params: NetworkParams, grads: np.ndarray,
              state: OptimizerState):
    """Update ``params`` in place and return ``(params, state)``."""
    if grads.shape != params.flat.shape or state.m.shape != grads.shape:
        raise ValueError("gradient, moment and parameter shapes differ")
    adam_update(params.flat, np.asarray(grads, dtype=np.float64), state)
    return params, state


def l1_subgradient(params: NetworkParams,
                   reference: NetworkParams | None = None) -> np.ndarray:
    """``sign(theta - reference)`` elementwise; the reference is a constant."""
    if reference is None:
        return np.sign(params.flat)
    if reference.flat.shape != params.flat.shape:
        raise ValueError("reference does not match parameter shape")
    return np.sign(params.flat - reference.flat)
