from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import ClassVar, Iterable

import numpy as np

from ..correspondence.matching import MatchResult
from ..errors import InjectionError
from ..masking.mask import Mask
from ..mmdit import AttentionPatch, AttentionState, ForwardTrace, joint_attention, merge_heads, split_heads
from ..numerics import Tensor, narrow
from .config import StrategyName
from .diagnostics import background_leakage
from .ops import blend_values, kv_replacement_attention, token_concat_attention, warp_values

logger = logging.getLogger(__name__)


@dataclass
class StepContext:
    """Everything an injection strategy needs for one denoising step."""

    step: int
    flows: MatchResult
    foreground: Mask
    """Generation-branch foreground, M_fg."""

    reference_foreground: Mask
    mask: Mask
    """Injection gate M_t."""

    cycle: Mask | None
    reference: ForwardTrace
    """Reference-branch pass at the same timestep."""

    leakage: dict[int, int] = field(default_factory=dict)
    """Background rows changed, per injected layer."""


class InjectionStrategy(ABC):
    name: ClassVar[StrategyName]

    def __init__(self) -> None:
        self._label = f"{type(self).__module__}.{type(self).__name__}"

    @property
    def label(self) -> str:
        return self._label

    @abstractmethod
    def patch(self, layer: int, state: AttentionState, context: StepContext) -> AttentionPatch | None:
        """Replacement attention inputs for ``layer``, or ``None`` to leave it alone."""

    def _reference_heads(self, layer: int, state: AttentionState, context: StepContext) -> tuple[Tensor, Tensor]:
        snapshot = context.reference.layer(layer)
        heads, n_video = state.q.shape[0], state.n_video
        keys = split_heads(Tensor(snapshot.k_rope[:n_video]), heads)
        values = split_heads(Tensor(snapshot.v[:n_video]), heads)
        return keys, values

    def _record_output_leakage(self, layer: int, state: AttentionState, output: Tensor, context: StepContext) -> None:
        baseline, _ = joint_attention(state.q_rope, state.k_rope, state.v)
        n_video = state.n_video
        context.leakage[layer] = background_leakage(
            merge_heads(baseline).data[:n_video], output.data[:n_video], context.foreground
        )


class NoInjection(InjectionStrategy):
    name = StrategyName.NONE

    def patch(self, layer: int, state: AttentionState, context: StepContext) -> AttentionPatch | None:
        return None


class ValueWarp(InjectionStrategy):
    """Warp reference values along the flow and blend them in under the gate."""

    name = StrategyName.VALUE_WARP

    def __init__(self, masked: bool = True) -> None:
        super().__init__()
        self.masked = masked

    def patch(self, layer: int, state: AttentionState, context: StepContext) -> AttentionPatch | None:
        n_video = state.n_video
        generated = narrow(merge_heads(state.v), 0, 0, n_video)
        reference = context.reference.layer(layer).v[:n_video]
        warped = warp_values(Tensor(reference, dtype=generated.dtype), context.flows.gen_to_ref)
        gate = context.mask.flat() if self.masked else np.ones(n_video, dtype=bool)
        blended = blend_values(warped, generated, gate)
        context.leakage[layer] = background_leakage(generated.data, blended.data, context.foreground)
        return AttentionPatch(video_values=blended)


class KeyValueReplacement(InjectionStrategy):
    """Masked attention to reference keys for foreground rows, to generation background for the rest."""

    name = StrategyName.KV_REPLACE

    def patch(self, layer: int, state: AttentionState, context: StepContext) -> AttentionPatch | None:
        keys, values = self._reference_heads(layer, state, context)
        output = kv_replacement_attention(
            state.q_rope,
            state.k_rope,
            state.v,
            keys,
            values,
            context.reference_foreground,
            context.mask,
            state.n_video,
        )
        self._record_output_leakage(layer, state, output, context)
        return AttentionPatch(output=output)


class TokenConcat(InjectionStrategy):
    """Widen the key axis with the reference video tokens."""

    name = StrategyName.TOKEN_CONCAT

    def patch(self, layer: int, state: AttentionState, context: StepContext) -> AttentionPatch | None:
        keys, values = self._reference_heads(layer, state, context)
        output, _ = token_concat_attention(state.q_rope, state.k_rope, state.v, keys, values, state.n_video)
        self._record_output_leakage(layer, state, output, context)
        return AttentionPatch(output=output)


def make_strategy(name: StrategyName | str, *, masking: bool = True) -> InjectionStrategy:
    name = StrategyName(name)
    if name is StrategyName.VALUE_WARP:
        return ValueWarp(masked=masking)
    if name is StrategyName.KV_REPLACE:
        return KeyValueReplacement()
    if name is StrategyName.TOKEN_CONCAT:
        return TokenConcat()
    return NoInjection()


class InjectionOverride:
    """Model override that applies a strategy inside the layer band for one step.

    ``applied`` is shared across steps; patching the same (step, layer) twice
    is rejected.
    """

    def __init__(
        self,
        strategy: InjectionStrategy,
        context: StepContext,
        layers: Iterable[int],
        applied: set[tuple[int, int]] | None = None,
    ) -> None:
        self.strategy = strategy
        self.context = context
        self.layers = frozenset(layers)
        self.applied = set() if applied is None else applied

    def __call__(self, layer: int, state: AttentionState) -> AttentionPatch | None:
        if layer not in self.layers:
            return None
        key = (self.context.step, layer)
        if key in self.applied:
            raise InjectionError(f"Layer {layer} was already injected at step {self.context.step}.")
        self.applied.add(key)
        patch = self.strategy.patch(layer, state, self.context)
        logger.debug(f"{self.strategy.name.value} at step {self.context.step}, layer {layer}")
        return patch
