from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from ..numerics import Tensor, concat, narrow, rotate_pairs


@dataclass(frozen=True)
class RopeFrequencies:
    """Axial rotary tables for (frame, row, col) lattice positions.

    Each axis owns a contiguous block of the head dimension. Pairs inside a
    block are interleaved ``(even, odd)`` and rotate at
    ``theta ** (-2i / block)``. All heads share the same tables.
    """

    split: tuple[int, int, int]
    theta: float = 10000.0
    inv_freq: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if any(part % 2 or part < 0 for part in self.split):
            raise ConfigError(f"Rotary sub-dimensions must be even and non-negative, got {self.split}")
        freqs = tuple(self.theta ** -(np.arange(0, part, 2, dtype=np.float64) / part) for part in self.split)
        object.__setattr__(self, "inv_freq", freqs)

    @property
    def head_dim(self) -> int:
        return sum(self.split)

    def angles(self, positions: np.ndarray) -> np.ndarray:
        """Rotation angle of every pair for each position, shape [P, head_dim / 2]."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        return np.concatenate(
            [np.outer(positions[:, axis], self.inv_freq[axis]) for axis in range(3)],
            axis=1,
        )

    def tables(self, positions: np.ndarray, dtype: np.dtype) -> tuple[np.ndarray, np.ndarray]:
        angles = self.angles(positions)
        return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def apply_rope(q: Tensor, k: Tensor, positions: np.ndarray, rope: RopeFrequencies) -> tuple[Tensor, Tensor]:
    """Rotate the first ``len(positions)`` rows of per-head ``q`` and ``k``.

    Rows past the video block (text tokens) are returned untouched. Inputs are
    ``[..., rows, head_dim]``.
    """
    if q.shape[-1] != rope.head_dim or k.shape[-1] != rope.head_dim:
        raise ConfigError(
            f"Head dimension {q.shape[-1]} does not match the rotary split {rope.split} "
            f"(sum {rope.head_dim})."
        )
    count = len(positions)
    cos, sin = rope.tables(positions, q.dtype)
    return _rotate_rows(q, count, cos, sin), _rotate_rows(k, count, cos, sin)


def _rotate_rows(x: Tensor, count: int, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    rows = x.shape[-2]
    if count > rows:
        raise ShapeError(f"{count} positions given for a tensor with {rows} rows")
    axis = x.ndim - 2
    if count == rows:
        return rotate_pairs(x, cos, sin)
    rotated = rotate_pairs(narrow(x, axis, 0, count), cos, sin)
    return concat([rotated, narrow(x, axis, count, rows)], axis=axis)
