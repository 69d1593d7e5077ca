from .attention import (
    AttentionOverride,
    AttentionPatch,
    AttentionState,
    attention_logits,
    joint_attention,
    merge_heads,
    patched_values,
    split_heads,
)
from .config import ModelConfig
from .model import ForwardResult, MMDiT, TextOverride, WeightDelta, load_model, save_model, timestep_features
from .rope import RopeFrequencies, apply_rope
from .tokens import (
    PAD_ID,
    SUBJECT_ID,
    SUBJECT_WORD,
    TokenSequence,
    lattice_positions,
    patchify,
    subject_index,
    tokenize,
    unpatchify,
)
from .trace import DescriptorKind, Descriptors, ForwardTrace, LayerTrace, TraceOptions, extract_descriptors
from .weights import (
    PROJECTIONS,
    check_content_identity,
    checksum,
    content_routing,
    init_weights,
    layer_key,
    signature_dims,
    weight_shapes,
)

__all__ = [
    "ModelConfig",
    "MMDiT",
    "ForwardResult",
    "WeightDelta",
    "TextOverride",
    "save_model",
    "load_model",
    "timestep_features",
    "AttentionOverride",
    "AttentionPatch",
    "AttentionState",
    "attention_logits",
    "joint_attention",
    "merge_heads",
    "split_heads",
    "patched_values",
    "RopeFrequencies",
    "apply_rope",
    "PAD_ID",
    "SUBJECT_ID",
    "SUBJECT_WORD",
    "TokenSequence",
    "lattice_positions",
    "patchify",
    "unpatchify",
    "subject_index",
    "tokenize",
    "DescriptorKind",
    "Descriptors",
    "ForwardTrace",
    "LayerTrace",
    "TraceOptions",
    "extract_descriptors",
    "PROJECTIONS",
    "check_content_identity",
    "checksum",
    "content_routing",
    "init_weights",
    "layer_key",
    "signature_dims",
    "weight_shapes",
]
