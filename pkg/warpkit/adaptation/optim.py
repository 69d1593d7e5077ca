from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .config import TrainConfig


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> AdamState:
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))


def adamw_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    cfg: TrainConfig,
) -> tuple[np.ndarray, AdamState]:
    """One AdamW update with decoupled weight decay and bias-corrected moments."""
    if not (param.shape == grad.shape == state.m.shape == state.v.shape):
        raise ShapeError(
            f"AdamW shapes disagree: param {param.shape}, grad {grad.shape}, "
            f"m {state.m.shape}, v {state.v.shape}"
        )
    beta1, beta2 = cfg.betas
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    bias1 = 1.0 - beta1**step
    bias2 = 1.0 - beta2**step
    updated = param * (1.0 - lr * cfg.weight_decay)
    denom = np.sqrt(v) / math.sqrt(bias2) + cfg.eps
    updated = updated - (lr / bias1) * (m / denom)
    return updated.astype(param.dtype, copy=False), AdamState(m=m, v=v, step=step)
