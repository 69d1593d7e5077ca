from __future__ import annotations

from typing import Iterable

import numpy as np

from ..correspondence.flow import FlowField
from ..masking.mask import Mask
from ..mmdit import ForwardTrace

_EPS = 1e-12


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    norms = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    return np.sum(a * b, axis=-1) / np.maximum(norms, _EPS)


def _fidelity(
    field: str,
    generation: ForwardTrace,
    reference: ForwardTrace,
    layers: Iterable[int],
    flow: FlowField,
    foreground: Mask,
) -> float | None:
    tokens = foreground.flat()
    if not tokens.any():
        return None
    n_video = generation.n_video
    matched = flow.global_indices()[tokens]
    scores = []
    for layer in layers:
        gen = getattr(generation.layer(layer), field)[:n_video][tokens]
        ref = getattr(reference.layer(layer), field)[:n_video][matched]
        scores.append(float(_cosine(gen, ref).mean()))
    return float(np.mean(scores)) if scores else None


def value_fidelity(
    generation: ForwardTrace,
    reference: ForwardTrace,
    layers: Iterable[int],
    flow: FlowField,
    foreground: Mask,
) -> float | None:
    """Mean cosine between generation values and the reference values at their true match.

    Averaged over ``foreground`` tokens and then over ``layers``; ``None`` when
    the foreground is empty.
    """
    return _fidelity("v", generation, reference, layers, flow, foreground)


def output_fidelity(
    generation: ForwardTrace,
    reference: ForwardTrace,
    layers: Iterable[int],
    flow: FlowField,
    foreground: Mask,
) -> float | None:
    """Like :func:`value_fidelity`, on attention outputs."""
    return _fidelity("output", generation, reference, layers, flow, foreground)


def background_leakage(original: np.ndarray, patched: np.ndarray, foreground: Mask) -> int:
    """Video rows outside ``foreground`` that an override changed."""
    changed = np.any(np.asarray(original) != np.asarray(patched), axis=-1)
    return int(np.sum(changed & ~foreground.flat()))
