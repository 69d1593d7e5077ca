from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ShapeError, TraceError
from ..mmdit import ForwardTrace
from .config import MaskConfig
from .mask import Mask, MaskKind

logger = logging.getLogger(__name__)

_FLAT = 1e-12


@dataclass
class SubjectAttention:
    """Running record of video-to-subject attention, one map per sampler step."""

    lattice: tuple[int, int, int]
    maps: dict[int, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.maps)

    def add(
        self,
        step: int,
        trace: ForwardTrace,
        layers: Iterable[int] | None = None,
        subject_index: int | None = None,
    ) -> np.ndarray:
        if trace.lattice != self.lattice:
            raise ShapeError(f"Trace lattice {trace.lattice} does not match {self.lattice}")
        values = trace.subject_attention(layers, subject_index)
        self.maps[step] = values
        return values

    def mean(self, steps: Iterable[int] | None = None) -> np.ndarray:
        chosen = sorted(self.maps) if steps is None else [step for step in steps if step in self.maps]
        if not chosen:
            raise TraceError("No denoising step with subject attention has been recorded yet.")
        return np.mean([self.maps[step] for step in chosen], axis=0)


def threshold_map(values: np.ndarray, lattice: tuple[int, int, int], cfg: MaskConfig) -> Mask:
    """Binarize a per-token map frame by frame.

    A frame whose map is flat carries no signal and stays empty; when every
    frame is flat the mask is flagged degenerate.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size != int(np.prod(lattice)):
        raise ShapeError(f"Map of {values.size} values does not cover the lattice {lattice}")
    frames = values.reshape(lattice)
    out = np.zeros(lattice, dtype=bool)
    flat_frames = 0
    for f, frame in enumerate(frames):
        low, high = frame.min(), frame.max()
        if high - low <= _FLAT:
            flat_frames += 1
            continue
        scaled = (frame - low) / (high - low) if cfg.mode == "normalized" else frame
        out[f] = scaled > cfg.tau_fg
    degenerate = flat_frames == lattice[0]
    if degenerate:
        logger.warning("Subject attention map is flat in every frame; foreground mask is empty")
    elif flat_frames:
        logger.debug(f"Subject attention map is flat in {flat_frames} of {lattice[0]} frames")
    return Mask(values=out, kind=MaskKind.FOREGROUND, degenerate=degenerate)


def foreground_mask(
    traces: Sequence[ForwardTrace] | Mapping[int, ForwardTrace],
    cfg: MaskConfig | None = None,
    *,
    subject_index: int | None = None,
    layers: Iterable[int] | None = None,
) -> Mask:
    """Foreground of the subject from video-to-subject attention over several steps.

    ``traces`` maps sampler steps to traced passes (a sequence is indexed by
    position). Layers come from ``cfg.layers``, then ``layers``, then every
    traced layer.
    """
    cfg = cfg or MaskConfig()
    by_step = dict(traces) if isinstance(traces, Mapping) else dict(enumerate(traces))
    if not by_step:
        raise TraceError("Foreground masking needs at least one traced denoising step.")
    lattice = next(iter(by_step.values())).lattice
    chosen_layers = cfg.layers if cfg.layers is not None else layers
    record = SubjectAttention(lattice=lattice)
    for step, trace in by_step.items():
        record.add(step, trace, chosen_layers, subject_index)
    return threshold_map(record.mean(cfg.steps), lattice, cfg)
