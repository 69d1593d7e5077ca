from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import DomainError, ShapeError


class FlowDirection(str, Enum):
    GEN_TO_REF = "gen_to_ref"
    REF_TO_GEN = "ref_to_gen"

    @property
    def opposite(self) -> FlowDirection:
        return FlowDirection.REF_TO_GEN if self is FlowDirection.GEN_TO_REF else FlowDirection.GEN_TO_REF


@dataclass(frozen=True)
class FlowField:
    """Hard same-frame correspondence between the two branches.

    ``match[f, r, c]`` is the flat in-frame index (``row * W + col``) of the
    token in the other branch matched to token ``(f, r, c)`` of the source
    branch (generation for ``GEN_TO_REF``, reference for ``REF_TO_GEN``).
    Displacements are ``position(match) - position(token)`` in token units.

    Value warping is a gather: every generation token pulls the reference value
    its ``GEN_TO_REF`` match names. ``REF_TO_GEN`` fields only serve the cycle
    check and are rejected by :func:`warpkit.injection.warp_values`.
    """

    match: np.ndarray
    direction: FlowDirection

    def __post_init__(self) -> None:
        match = np.array(self.match, dtype=np.int64, copy=True)
        if match.ndim != 3:
            raise ShapeError(f"Flow match map must be [frames, rows, cols], got {match.shape}")
        frames, rows, cols = match.shape
        if match.size and (match.min() < 0 or match.max() >= rows * cols):
            raise DomainError(f"Flow match index outside the {rows}x{cols} frame")
        match.flags.writeable = False
        object.__setattr__(self, "match", match)
        object.__setattr__(self, "direction", FlowDirection(self.direction))

    @property
    def lattice(self) -> tuple[int, int, int]:
        return self.match.shape  # type: ignore[return-value]

    @property
    def displacement(self) -> np.ndarray:
        """[F, H, W, 2] integer (drow, dcol)."""
        _, rows, cols = self.match.shape
        grid_r, grid_c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
        drow = self.match // cols - grid_r
        dcol = self.match % cols - grid_c
        return np.stack([drow, dcol], axis=-1)

    @classmethod
    def identity(cls, lattice: tuple[int, int, int], direction: FlowDirection) -> FlowField:
        frames, rows, cols = lattice
        match = np.broadcast_to(np.arange(rows * cols).reshape(rows, cols), (frames, rows, cols))
        return cls(match=match, direction=direction)

    @classmethod
    def from_displacement(
        cls,
        displacement: np.ndarray,
        direction: FlowDirection,
        *,
        wrap: bool = True,
    ) -> FlowField:
        displacement = np.asarray(displacement, dtype=np.int64)
        frames, rows, cols, _ = displacement.shape
        grid_r, grid_c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
        target_r = grid_r + displacement[..., 0]
        target_c = grid_c + displacement[..., 1]
        if wrap:
            target_r, target_c = target_r % rows, target_c % cols
        elif target_r.min() < 0 or target_r.max() >= rows or target_c.min() < 0 or target_c.max() >= cols:
            raise DomainError("Displacement leaves the frame and wrapping is disabled")
        return cls(match=target_r * cols + target_c, direction=direction)

    def global_indices(self) -> np.ndarray:
        """Sequence index of every matched token, flattened like the video block."""
        frames, rows, cols = self.match.shape
        offsets = (np.arange(frames) * rows * cols)[:, None, None]
        return (self.match + offsets).reshape(-1)

    def rows(self) -> list[tuple[int, int, int, int, int]]:
        """(frame, row, col, drow, dcol) per token, in lattice order."""
        displacement = self.displacement
        frames, rows, cols = self.match.shape
        return [
            (f, r, c, int(displacement[f, r, c, 0]), int(displacement[f, r, c, 1]))
            for f in range(frames)
            for r in range(rows)
            for c in range(cols)
        ]
