from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from ..errors import TraceError


class DescriptorKind(str, Enum):
    INTERMEDIATE = "intermediate"
    QK = "qk"
    QK_ROPEFREE = "qk_ropefree"


@dataclass(frozen=True)
class TraceOptions:
    """Which layers a forward pass snapshots. ``None`` means every layer."""

    layers: frozenset[int] | None = None

    @classmethod
    def of(cls, layers: Iterable[int] | None) -> TraceOptions:
        return cls(None if layers is None else frozenset(int(layer) for layer in layers))

    def wants(self, layer: int) -> bool:
        return self.layers is None or layer in self.layers


@dataclass(frozen=True)
class LayerTrace:
    """Write-once snapshot of one joint-attention block.

    Projections are merged across heads, ``[L, d]``; probabilities are
    per head, ``[heads, L, L]``.
    """

    layer: int
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    q_rope: np.ndarray
    k_rope: np.ndarray
    probs: np.ndarray
    output: np.ndarray
    """Attention output after any override, merged heads."""

    activations: np.ndarray
    """Block output, the residual stream after attention and MLP."""


@dataclass
class ForwardTrace:
    n_video: int
    text_len: int
    lattice: tuple[int, int, int]
    """(frames, rows, cols) of the video tokens."""

    subject_index: int | None = None
    layers: dict[int, LayerTrace] = field(default_factory=dict)

    def record(self, trace: LayerTrace) -> None:
        if trace.layer in self.layers:
            raise TraceError(f"Layer {trace.layer} was already traced in this pass.")
        self.layers[trace.layer] = trace

    def layer(self, index: int) -> LayerTrace:
        try:
            return self.layers[index]
        except KeyError:
            raise TraceError(
                f"Layer {index} was not traced in this pass (traced: {sorted(self.layers)}).\n"
                "Enable tracing for it with TraceOptions.of([...])."
            ) from None

    def subject_attention(self, layers: Iterable[int] | None = None, subject_index: int | None = None) -> np.ndarray:
        """Mean over layers and heads of video-row attention to the subject column, [N]."""
        subject_index = self.subject_index if subject_index is None else subject_index
        if subject_index is None:
            raise TraceError("This pass had no subject token.")
        if not 0 <= subject_index < self.text_len:
            raise TraceError(f"Subject index {subject_index} is outside the {self.text_len}-token prompt.")
        chosen = sorted(self.layers) if layers is None else list(layers)
        column = self.n_video + subject_index
        maps = [self.layer(index).probs[:, : self.n_video, column].mean(axis=0) for index in chosen]
        if not maps:
            raise TraceError("No traced layers to aggregate subject attention over.")
        return np.mean(maps, axis=0)


@dataclass(frozen=True)
class Descriptors:
    """Per-token matching features of the video block, ``[N, D]``."""

    query: np.ndarray
    key: np.ndarray
    kind: DescriptorKind
    layer: int
    lattice: tuple[int, int, int]


def extract_descriptors(
    trace: ForwardTrace | None,
    layer: int,
    kind: DescriptorKind | str,
) -> Descriptors:
    """Video-token descriptors of ``layer``.

    ``qk`` returns rotated Q/K, ``qk_ropefree`` the pre-rotation Q/K, and
    ``intermediate`` the block activations as both query and key.
    """
    if trace is None:
        raise TraceError("The forward pass ran without tracing; pass TraceOptions to capture descriptors.")
    kind = DescriptorKind(kind)
    snapshot = trace.layer(layer)
    rows = slice(0, trace.n_video)
    if kind is DescriptorKind.QK:
        query, key = snapshot.q_rope[rows], snapshot.k_rope[rows]
    elif kind is DescriptorKind.QK_ROPEFREE:
        query, key = snapshot.q[rows], snapshot.k[rows]
    else:
        query = key = snapshot.activations[rows]
    return Descriptors(query=query, key=key, kind=kind, layer=layer, lattice=trace.lattice)
