from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from ..errors import ConfigError, DomainError


class ScheduleConfig(BaseModel):
    """Linear beta schedule for epsilon-prediction DDPM/DDIM."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: int = 50
    """Number of diffusion timesteps T, also the sampler step count."""

    beta_start: float = 1e-4

    beta_end: float = 2e-2

    @model_validator(mode="after")
    def _check(self) -> ScheduleConfig:
        if self.steps < 1:
            raise ConfigError(f"ScheduleConfig.steps must be at least 1, got {self.steps}")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ConfigError(
                f"Betas must satisfy 0 < beta_start <= beta_end < 1, got {self.beta_start} and {self.beta_end}"
            )
        return self


@dataclass(frozen=True)
class Schedule:
    """Noise levels for timesteps ``0..T``; index 0 is the clean latent (alpha_bar = 1)."""

    config: ScheduleConfig = field(default_factory=ScheduleConfig)
    betas: np.ndarray = field(init=False, repr=False)
    alphas_cumprod: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        betas = np.concatenate(
            [[0.0], np.linspace(self.config.beta_start, self.config.beta_end, self.config.steps, dtype=np.float64)]
        )
        alphas_cumprod = np.cumprod(1.0 - betas)
        betas.flags.writeable = False
        alphas_cumprod.flags.writeable = False
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas_cumprod", alphas_cumprod)

    @property
    def steps(self) -> int:
        return self.config.steps

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    def check(self, t: int) -> int:
        if not 0 <= int(t) <= self.steps or int(t) != t:
            raise DomainError(f"Timestep {t} is outside 0..{self.steps}")
        return int(t)

    def alpha_bar(self, t: int) -> float:
        return float(self.alphas_cumprod[self.check(t)])

    def coefficients(self, t: int) -> tuple[float, float]:
        """(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)) as Python floats."""
        alpha_bar = self.alpha_bar(t)
        return math.sqrt(alpha_bar), math.sqrt(1.0 - alpha_bar)

    def fraction(self, t: int) -> float:
        """Normalized timestep fed to the model."""
        return self.check(t) / self.steps

    def timestep_of(self, step_index: int) -> int:
        """Timestep denoised at sampler step ``i`` (step 0 starts from ``T``)."""
        if not 0 <= step_index < self.steps:
            raise DomainError(f"Sampler step {step_index} is outside 0..{self.steps - 1}")
        return self.steps - step_index

    def hash(self) -> str:
        payload = json.dumps(self.config.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()
