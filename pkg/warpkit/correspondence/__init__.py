from .correlation import Correlation, directional_correlation, symmetric_correlation
from .flow import FlowDirection, FlowField
from .matching import (
    PCK_ALPHA,
    MatchResult,
    brute_force_match,
    extract_flow,
    match_descriptors,
    modal_displacement,
    pck,
)
from .sweep import SWEEP_STEPS, MatchEvalReport, SweepCell, descriptor_sweep

__all__ = [
    "Correlation",
    "directional_correlation",
    "symmetric_correlation",
    "FlowDirection",
    "FlowField",
    "PCK_ALPHA",
    "MatchResult",
    "extract_flow",
    "brute_force_match",
    "match_descriptors",
    "modal_displacement",
    "pck",
    "SWEEP_STEPS",
    "SweepCell",
    "MatchEvalReport",
    "descriptor_sweep",
]
