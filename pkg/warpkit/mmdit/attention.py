from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..errors import InjectionError
from ..numerics import Tensor, as_tensor, concat, matmul, narrow, reshape, scale, softmax, transpose


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[L, d] -> [heads, L, d / heads]."""
    rows, dim = x.shape
    return transpose(reshape(x, (rows, heads, dim // heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    """[heads, L, hd] -> [L, heads * hd]."""
    heads, rows, head_dim = x.shape
    return reshape(transpose(x, (1, 0, 2)), (rows, heads * head_dim))


def attention_logits(q: Tensor, k: Tensor) -> Tensor:
    return scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(q.shape[-1]))


def joint_attention(q: Tensor, k: Tensor, v: Tensor, *, where: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """``softmax(q k^T / sqrt(hd)) v`` per head; returns (output, probabilities)."""
    probs = softmax(attention_logits(q, k), axis=-1, where=where)
    return matmul(probs, v), probs


@dataclass(frozen=True)
class AttentionState:
    """What an override sees of one block: per-head projections of the live pass."""

    layer: int
    q: Tensor
    k: Tensor
    v: Tensor
    q_rope: Tensor
    k_rope: Tensor
    n_video: int
    positions: np.ndarray


@dataclass(frozen=True)
class AttentionPatch:
    """Replacement inputs for one block's attention.

    ``video_values`` swaps the video rows of V (merged heads, [N, d]) and keeps
    the text rows; ``output`` replaces the attention output ([L, d], merged
    heads) altogether.
    """

    video_values: Tensor | np.ndarray | None = None
    output: Tensor | np.ndarray | None = None


class AttentionOverride(Protocol):
    def __call__(self, layer: int, state: AttentionState) -> AttentionPatch | None: ...


def patched_values(v: Tensor, video_values: Tensor | np.ndarray, n_video: int) -> Tensor:
    """Merged V with its first ``n_video`` rows replaced."""
    video_values = as_tensor(video_values, like=v)
    if video_values.shape != (n_video, v.shape[1]):
        raise InjectionError(
            f"Value override has shape {video_values.shape}, expected {(n_video, v.shape[1])} "
            "(video tokens x model dim)."
        )
    return concat([video_values, narrow(v, 0, n_video, v.shape[0])], axis=0)
