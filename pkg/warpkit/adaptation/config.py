from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, model_validator

from ..errors import ConfigError
from ..mmdit import SUBJECT_WORD


class TrainConfig(BaseModel):
    """Coarse appearance adaptation: adapters on K/V/O plus the subject embedding."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    adapter_lr: float = 1e-4
    token_lr: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2

    steps: int = 100
    batch: int = 2
    """Noise draws per reference image in every step."""

    seed: int = 0

    rank: int = 128
    """Requested adapter rank; clipped to ``dim // 2`` for narrow models."""

    alpha: float | None = None
    """Adapter scale numerator; ``None`` means ``alpha = rank`` (scale 1)."""

    noise: Literal["bank", "fresh"] = "bank"
    """``bank`` samples (t, eps) once per reference and reuses it every step."""

    prompt: str = f"a photo of {SUBJECT_WORD}"

    log_every: int = 10

    @model_validator(mode="after")
    def _check(self) -> TrainConfig:
        if self.adapter_lr < 0 or self.token_lr < 0:
            raise ConfigError(f"Learning rates must be non-negative, got {self.adapter_lr} and {self.token_lr}")
        if self.steps < 0 or self.batch < 1:
            raise ConfigError(f"Need steps >= 0 and batch >= 1, got steps={self.steps}, batch={self.batch}")
        if not all(0.0 <= beta < 1.0 for beta in self.betas) or self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("AdamW needs betas in [0, 1), eps > 0 and weight_decay >= 0")
        if self.rank < 1:
            raise ConfigError(f"Adapter rank must be at least 1, got {self.rank}")
        if SUBJECT_WORD not in self.prompt.split():
            raise ConfigError(f"Training prompt {self.prompt!r} must contain {SUBJECT_WORD}")
        return self

    def effective_rank(self, dim: int) -> int:
        return max(1, min(self.rank, dim // 2))
