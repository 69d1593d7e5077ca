from .config import InjectionConfig, StrategyName, resolve_band
from .diagnostics import background_leakage, output_fidelity, value_fidelity
from .ops import blend_values, injected_mma, kv_replacement_attention, token_concat_attention, warp_values
from .sampler import DualBranchResult, DualBranchSampler, StepRecord, initial_noise, run_dual_branch
from .strategies import (
    InjectionOverride,
    InjectionStrategy,
    KeyValueReplacement,
    NoInjection,
    StepContext,
    TokenConcat,
    ValueWarp,
    make_strategy,
)

__all__ = [
    "InjectionConfig",
    "StrategyName",
    "resolve_band",
    "warp_values",
    "blend_values",
    "injected_mma",
    "kv_replacement_attention",
    "token_concat_attention",
    "value_fidelity",
    "output_fidelity",
    "background_leakage",
    "InjectionStrategy",
    "NoInjection",
    "ValueWarp",
    "KeyValueReplacement",
    "TokenConcat",
    "StepContext",
    "InjectionOverride",
    "make_strategy",
    "StepRecord",
    "DualBranchResult",
    "DualBranchSampler",
    "initial_noise",
    "run_dual_branch",
]
