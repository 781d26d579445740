"""First-order optimizer steps and global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

KINDS = ("sgd", "heavy-ball", "adam")


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}; expected one of {KINDS}")
        if not self.lr > 0:
            raise ValueError("step size must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def optimizer_step(
    state: OptimizerState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
) -> dict[str, np.ndarray]:
    """Return updated parameters; moment buffers in ``state`` advance in place.

    heavy-ball: m <- beta*m + g; x <- x - lr*m
    """
    state.step += 1
    out = {}
    for name, x in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        if g.shape != x.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {x.shape}")
        if state.kind == "sgd":
            out[name] = x - state.lr * g
        elif state.kind == "heavy-ball":
            m = state.buffers.get(name)
            m = g if m is None else state.beta * m + g
            state.buffers[name] = m
            out[name] = x - state.lr * m
        else:
            m, v = state.buffers.get(name, (np.zeros_like(x), np.zeros_like(x)))
            m = state.beta * m + (1.0 - state.beta) * g
            v = state.beta2 * v + (1.0 - state.beta2) * g * g
            state.buffers[name] = (m, v)
            mhat = m / (1.0 - state.beta ** state.step)
            vhat = v / (1.0 - state.beta2 ** state.step)
            out[name] = x - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return out


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    # the relative slack makes a second application a no-op despite rounding
    if norm <= max_norm * (1.0 + 1e-12):
        return dict(grads)
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}
