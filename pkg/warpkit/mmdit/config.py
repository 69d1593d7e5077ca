from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, model_validator

from ..errors import ConfigError


class ModelConfig(BaseModel):
    """Shape of the toy multi-modal diffusion transformer."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    layers: int = 8
    """Number of joint-attention blocks."""

    dim: int = 64
    """Model width shared by video and text tokens."""

    heads: int = 4

    frames: int = 4
    """Frames in a generated clip. Reference images are single-frame clips."""

    grid_h: int = 8
    """Token rows per frame."""

    grid_w: int = 8
    """Token columns per frame."""

    text_len: int = 8
    """Prompt length after padding or truncation."""

    vocab_size: int = 64

    latent_channels: int = 4

    patch_size: int = 2
    """Latent pixels per token side; one token covers ``patch_size**2`` latent pixels."""

    rope_split: tuple[int, int, int] = (6, 6, 4)
    """Per-head dimensions rotated by the frame, row and column axes."""

    rope_theta: float = 10000.0

    mlp_ratio: int = 2

    init: Literal["random", "content_identity"] = "random"
    """Weight initialization scheme. ``content_identity`` is a test-mode construction."""

    @model_validator(mode="after")
    def _check_shapes(self) -> ModelConfig:
        names = ("layers", "dim", "heads", "frames", "grid_h", "grid_w", "text_len", "latent_channels", "patch_size")
        for name in names:
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelConfig.{name} must be at least 1, got {getattr(self, name)}")
        if self.vocab_size < 3:
            raise ConfigError("ModelConfig.vocab_size must leave room for the pad and subject ids (>= 3).")
        if self.dim % self.heads:
            raise ConfigError(
                f"Model dim {self.dim} is not divisible by {self.heads} heads.\n"
                "Pick a head count that divides the model width."
            )
        if any(part % 2 for part in self.rope_split):
            raise ConfigError(f"Every rotary sub-dimension must be even, got {self.rope_split}")
        if sum(self.rope_split) != self.head_dim:
            raise ConfigError(
                f"Rotary split {self.rope_split} sums to {sum(self.rope_split)}, "
                f"but the head dimension is {self.head_dim}."
            )
        return self

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def patch_dim(self) -> int:
        """Length of one flattened latent patch, ``channels * patch_size**2``."""
        return self.latent_channels * self.patch_size**2

    @property
    def tokens_per_frame(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def video_tokens(self) -> int:
        return self.frames * self.tokens_per_frame

    def latent_shape(self, frames: int | None = None) -> tuple[int, int, int, int]:
        return (
            frames or self.frames,
            self.grid_h * self.patch_size,
            self.grid_w * self.patch_size,
            self.latent_channels,
        )
