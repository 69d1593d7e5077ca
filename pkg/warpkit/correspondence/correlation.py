from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import BranchError, ShapeError
from ..numerics import Tensor, as_tensor, matmul, reshape, scale, softmax, transpose


@dataclass(frozen=True)
class Correlation:
    """Per-frame matching matrices, rows from one branch and columns from the other.

    ``matrices[f, i, j]`` relates token ``i`` of the row branch to token ``j``
    of the column branch in frame ``f``; tokens are flattened ``row * W + col``.
    """

    matrices: np.ndarray
    grid: tuple[int, int]
    symmetric: bool = False

    def __post_init__(self) -> None:
        matrices = np.array(self.matrices, copy=True)
        if matrices.ndim != 3:
            raise ShapeError(f"Correlation must be [frames, rows, cols], got {matrices.shape}")
        matrices.flags.writeable = False
        object.__setattr__(self, "matrices", matrices)

    @property
    def frames(self) -> int:
        return self.matrices.shape[0]

    @property
    def lattice(self) -> tuple[int, int, int]:
        return (self.frames, *self.grid)


def _frames(x: Tensor, grid: tuple[int, int], branch: str) -> Tensor:
    tokens = grid[0] * grid[1]
    if x.ndim != 2 or x.shape[0] % tokens:
        raise ShapeError(f"{branch} descriptors {x.shape} are not whole frames of {grid[0]}x{grid[1]} tokens")
    return reshape(x, (x.shape[0] // tokens, tokens, x.shape[1]))


def directional_correlation(
    query: Tensor | np.ndarray,
    key: Tensor | np.ndarray,
    grid: tuple[int, int],
) -> Correlation:
    """Row-wise ``softmax(q k^T / sqrt(D))`` between same-index frames of two branches."""
    q = _frames(as_tensor(query), grid, "Query")
    k = _frames(as_tensor(key, like=q), grid, "Key")
    if q.shape[0] != k.shape[0]:
        raise BranchError(
            f"Branches disagree on frame count: {q.shape[0]} query frames vs {k.shape[0]} key frames.\n"
            "Repeat the reference image along the generated frames before matching."
        )
    if q.shape[2] != k.shape[2]:
        raise ShapeError(f"Descriptor widths differ: {q.shape[2]} vs {k.shape[2]}")
    logits = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(q.shape[2]))
    return Correlation(matrices=softmax(logits, axis=-1).data, grid=tuple(grid))


def symmetric_correlation(forward: Correlation, backward: Correlation) -> Correlation:
    """Average a gen->ref matrix with the transpose of its ref->gen partner."""
    flipped = np.transpose(backward.matrices, (0, 2, 1))
    if forward.matrices.shape != flipped.shape or forward.grid != backward.grid:
        raise ShapeError(
            f"Correlations are not transpose-compatible: {forward.matrices.shape} vs {backward.matrices.shape}"
        )
    return Correlation(matrices=(forward.matrices + flipped) * 0.5, grid=forward.grid, symmetric=True)
