from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import MetricError, ParamError, ShapeError, UsageError
from ..masking.mask import Mask
from ..mmdit import Descriptors
from ..numerics import argmax
from .correlation import Correlation, directional_correlation, symmetric_correlation
from .flow import FlowDirection, FlowField

logger = logging.getLogger(__name__)

PCK_ALPHA = 0.05


def extract_flow(correlation: Correlation, direction: FlowDirection | str) -> FlowField:
    """Hard matches from a correlation; ties go to the smallest index.

    ``GEN_TO_REF`` takes the best column of every row, ``REF_TO_GEN`` the best
    row of every column.
    """
    direction = FlowDirection(direction)
    axis = -1 if direction is FlowDirection.GEN_TO_REF else -2
    match = argmax(correlation.matrices, axis=axis)
    return FlowField(match=match.reshape(correlation.lattice), direction=direction)


def brute_force_match(correlation: Correlation, direction: FlowDirection | str) -> FlowField:
    """Exhaustive-scan reference for :func:`extract_flow`."""
    direction = FlowDirection(direction)
    frames, rows, cols = correlation.matrices.shape
    sources = rows if direction is FlowDirection.GEN_TO_REF else cols
    targets = cols if direction is FlowDirection.GEN_TO_REF else rows
    match = np.zeros((frames, sources), dtype=np.int64)
    for f in range(frames):
        matrix = correlation.matrices[f]
        for source in range(sources):
            best, best_value = 0, None
            for target in range(targets):
                value = matrix[source, target] if direction is FlowDirection.GEN_TO_REF else matrix[target, source]
                if best_value is None or value > best_value:
                    best, best_value = target, value
            match[f, source] = best
    return FlowField(match=match.reshape(correlation.lattice), direction=direction)


@dataclass(frozen=True)
class MatchResult:
    gen_to_ref: FlowField
    ref_to_gen: FlowField
    correlation: Correlation
    """The symmetric map both flows were read from."""


def match_descriptors(generation: Descriptors, reference: Descriptors) -> MatchResult:
    """Bidirectional flows between two branches' descriptors of one layer."""
    if generation.lattice != reference.lattice:
        raise ShapeError(f"Branch lattices differ: {generation.lattice} vs {reference.lattice}")
    grid = generation.lattice[1:]
    forward = directional_correlation(generation.query, reference.key, grid)
    backward = directional_correlation(reference.query, generation.key, grid)
    combined = symmetric_correlation(forward, backward)
    return MatchResult(
        gen_to_ref=extract_flow(combined, FlowDirection.GEN_TO_REF),
        ref_to_gen=extract_flow(combined, FlowDirection.REF_TO_GEN),
        correlation=combined,
    )


def pck(
    predicted: FlowField,
    truth: FlowField,
    foreground: Mask,
    alpha: float = PCK_ALPHA,
    patch_size: int = 1,
) -> float:
    """Fraction of foreground tokens whose displacement error is within ``alpha`` of the frame size.

    Errors and the threshold are measured in latent pixels: token offsets
    times ``patch_size`` against ``alpha * max(H, W) * patch_size``.
    """
    if not 0.0 < alpha <= 1.0:
        raise ParamError(f"PCK alpha must be in (0, 1], got {alpha}")
    if predicted.direction is not truth.direction:
        raise UsageError(
            f"Cannot score a {predicted.direction.value} flow against {truth.direction.value} ground truth"
        )
    if predicted.lattice != truth.lattice or foreground.shape != truth.lattice:
        raise ShapeError(
            f"PCK inputs disagree on the lattice: {predicted.lattice}, {truth.lattice}, mask {foreground.shape}"
        )
    if foreground.count == 0:
        raise MetricError("PCK is undefined on an empty foreground mask")
    _, rows, cols = truth.lattice
    error = np.linalg.norm((predicted.displacement - truth.displacement) * patch_size, axis=-1)
    threshold = alpha * max(rows, cols) * patch_size
    correct = (error <= threshold) & foreground.values
    return float(correct.sum()) / foreground.count


def modal_displacement(flow: FlowField, mask: Mask) -> tuple[tuple[int, int], float]:
    """Most frequent (drow, dcol) over ``mask`` and the share of tokens that have it."""
    if mask.count == 0:
        raise MetricError("No tokens to take a modal displacement over")
    displacements = flow.displacement[mask.values]
    values, counts = np.unique(displacements, axis=0, return_counts=True)
    best = int(np.argmax(counts))
    return (int(values[best, 0]), int(values[best, 1])), float(counts[best]) / mask.count
