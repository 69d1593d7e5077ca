from __future__ import annotations

import math
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import ConfigError
from ..masking.config import MaskConfig
from ..mmdit import DescriptorKind

_ROUNDING = 1e-9


class StrategyName(str, Enum):
    NONE = "none"
    VALUE_WARP = "value_warp"
    KV_REPLACE = "kv_replace"
    TOKEN_CONCAT = "token_concat"


def resolve_band(band: tuple[float, float], total: int) -> range:
    """Inclusive integer band ``ceil(start * total) .. floor(end * total)``."""
    start = math.ceil(band[0] * total - _ROUNDING)
    stop = math.floor(band[1] * total + _ROUNDING)
    return range(start, stop + 1)


class InjectionConfig(BaseModel):
    """Where and how reference appearance enters the generation branch.

    Bands are fractions of the step count and of the depth, so one config
    serves both the desk-scale model and the full-scale mapping (steps 3-19 of
    50, layers 20-29 of 42).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    strategy: StrategyName = StrategyName.VALUE_WARP
    step_band: tuple[float, float] = (3 / 50, 19 / 50)
    layer_band: tuple[float, float] = (20 / 42, 29 / 42)
    masking: bool = True
    """Gate value warping with the foreground and cycle masks."""

    descriptor_layer: int | None = None
    """Layer whose descriptors drive matching; ``None`` picks ``layers // 2 - 1``."""

    descriptor_kind: DescriptorKind = DescriptorKind.QK_ROPEFREE
    mask: MaskConfig = Field(default_factory=MaskConfig)

    @model_validator(mode="after")
    def _check(self) -> InjectionConfig:
        for name in ("step_band", "layer_band"):
            start, end = getattr(self, name)
            if not 0.0 <= start < end <= 1.0:
                raise ConfigError(f"{name} must satisfy 0 <= start < end <= 1, got {(start, end)}")
        if self.descriptor_layer is not None and self.descriptor_layer < 0:
            raise ConfigError(f"descriptor_layer must be non-negative, got {self.descriptor_layer}")
        return self

    def steps(self, total: int) -> range:
        return resolve_band(self.step_band, total)

    def layers(self, depth: int) -> range:
        band = resolve_band(self.layer_band, depth)
        return range(band.start, min(band.stop, depth))

    def matching_layer(self, depth: int) -> int:
        layer = max(0, depth // 2 - 1) if self.descriptor_layer is None else self.descriptor_layer
        if layer >= depth:
            raise ConfigError(f"descriptor_layer {layer} does not exist in a {depth}-layer model")
        return layer

    def aggregation_layers(self, depth: int) -> tuple[int, ...]:
        if self.mask.layers is not None:
            return self.mask.layers
        return tuple(self.layers(depth))
