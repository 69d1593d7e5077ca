from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, model_validator

from ..errors import ConfigError


class MaskConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    tau_fg: float = 0.3
    """Foreground threshold on the (normalized) subject attention map."""

    tau_cc: float = 0.1
    """Cycle tolerance, as a fraction of the foreground's share of the frame height."""

    mode: Literal["normalized", "raw"] = "normalized"
    """``normalized`` min-max scales each frame before thresholding."""

    layers: tuple[int, ...] | None = None
    """Layers to average attention over; ``None`` follows the injection layer band."""

    steps: tuple[int, ...] | None = None
    """Sampler steps to average over; ``None`` uses every step seen so far."""

    @model_validator(mode="after")
    def _check(self) -> MaskConfig:
        if not 0.0 < self.tau_fg < 1.0:
            raise ConfigError(f"tau_fg must be in (0, 1), got {self.tau_fg}")
        if self.tau_cc <= 0.0:
            raise ConfigError(f"tau_cc must be positive, got {self.tau_cc}")
        return self
