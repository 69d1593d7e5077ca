from __future__ import annotations

import numpy as np

from ..correspondence.flow import FlowField
from ..errors import ShapeError, UsageError
from ..numerics import Tensor
from .config import MaskConfig
from .mask import Mask, MaskKind


def cycle_error(forward: FlowField, backward: FlowField, *, toroidal: bool = False) -> Tensor:
    """Round-trip distance per source token of ``forward``, [F, H, W].

    Euclidean distance in token units between a token and where its round
    trip lands. ``toroidal`` measures it on the wrapped lattice instead, for
    flows of scenes whose sprites wrap around the borders.
    """
    if forward.direction is backward.direction:
        raise UsageError(
            f"Cycle error needs flows in opposite directions, both are {forward.direction.value}.\n"
            "Pass the gen->ref flow first and the ref->gen flow second (or the reverse)."
        )
    if forward.lattice != backward.lattice:
        raise ShapeError(f"Flow lattices differ: {forward.lattice} vs {backward.lattice}")
    frames, rows, cols = forward.lattice
    there = forward.match.reshape(frames, -1)
    back = np.take_along_axis(backward.match.reshape(frames, -1), there, axis=1)
    origin = np.arange(rows * cols)[None, :]
    drow = np.abs(back // cols - origin // cols)
    dcol = np.abs(back % cols - origin % cols)
    if toroidal:
        drow = np.minimum(drow, rows - drow)
        dcol = np.minimum(dcol, cols - dcol)
    return Tensor(np.sqrt(drow**2 + dcol**2).reshape(forward.lattice), dtype=np.float64)


def cycle_mask(error: Tensor | np.ndarray, foreground: Mask, cfg: MaskConfig | None = None) -> Mask:
    """Tokens whose round trip lands within ``tau_cc * H * (|fg| / (H * W))`` of the start, per frame."""
    cfg = cfg or MaskConfig()
    error = error.data if isinstance(error, Tensor) else np.asarray(error)
    if error.shape != foreground.shape:
        raise ShapeError(f"Cycle error {error.shape} does not match the foreground mask {foreground.shape}")
    _, rows, _ = foreground.shape
    share = foreground.values.reshape(foreground.shape[0], -1).mean(axis=1)
    theta = cfg.tau_cc * rows * share
    return Mask(values=error < theta[:, None, None], kind=MaskKind.CYCLE)


def combine(foreground: Mask, cycle: Mask) -> Mask:
    if foreground.shape != cycle.shape:
        raise ShapeError(f"Cannot combine masks of shapes {foreground.shape} and {cycle.shape}")
    return Mask(
        values=foreground.values & cycle.values,
        kind=MaskKind.COMBINED,
        degenerate=foreground.degenerate,
    )
