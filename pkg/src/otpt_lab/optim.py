from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidSpec, NonFiniteGradient
from .model import PromptState


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if not self.lr >= 0:
            raise InvalidSpec("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidSpec("betas must lie in [0, 1)")
        if not self.eps > 0:
            raise InvalidSpec("eps must be > 0")
        if not self.weight_decay >= 0:
            raise InvalidSpec("weight_decay must be >= 0")


def adamw_step(state: PromptState, grad, cfg: AdamWConfig) -> PromptState:
    """One AdamW update; returns a new state and leaves ``state`` untouched."""
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != state.context.shape:
        raise DimensionMismatch(f"gradient shape {g.shape} != context shape {state.context.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    t = state.step_count + 1
    # decoupled decay comes first
    theta = state.context - cfg.lr * cfg.weight_decay * state.context
    m = cfg.beta1 * state.adam_m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.adam_v + (1.0 - cfg.beta2) * (g * g)
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    theta = theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return PromptState(theta, m, v, t)
