from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, model_validator

from ..errors import ParamError


class SceneParams(BaseModel):
    """Layout of a synthetic sprite scene, in token units."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    frames: int = 4
    grid_h: int = 8
    grid_w: int = 8
    channels: int = 4
    patch_size: int = 2
    sprite_size: int = 3
    velocity: tuple[int, int] = (1, 0)
    """Per-frame sprite motion (rows, cols)."""

    start_offset: tuple[int, int] = (0, 0)
    """Offset of the frame-0 sprite from its canonical position."""

    canonical: tuple[int, int] = (2, 2)
    """Top-left of the sprite in the reference image."""

    appearance_gap: float = 0.6
    """Texture gain of the generated sprite relative to the reference (1 = identical)."""

    signature_fraction: float = 0.5
    """Share of a sprite token's energy carried by the last latent channel."""

    mode: Literal["toroidal", "clamped"] = "toroidal"
    pan_background: bool = True

    @model_validator(mode="after")
    def _check(self) -> SceneParams:
        for name in ("frames", "grid_h", "grid_w", "patch_size", "sprite_size"):
            if getattr(self, name) < 1:
                raise ParamError(f"Scene {name} must be at least 1, got {getattr(self, name)}")
        if self.channels < 2:
            raise ParamError(f"Scenes need at least two latent channels (texture + signature), got {self.channels}")
        if self.sprite_size > min(self.grid_h, self.grid_w):
            raise ParamError(
                f"Sprite of {self.sprite_size}x{self.sprite_size} tokens does not fit the "
                f"{self.grid_h}x{self.grid_w} grid.\nLower sprite_size or enlarge the grid."
            )
        if self.mode == "clamped" and not (
            0 <= self.canonical[0] <= self.grid_h - self.sprite_size
            and 0 <= self.canonical[1] <= self.grid_w - self.sprite_size
        ):
            raise ParamError(f"Canonical sprite position {self.canonical} leaves the grid in clamped mode")
        if not 0.0 < self.appearance_gap <= 1.0:
            raise ParamError(f"appearance_gap must be in (0, 1], got {self.appearance_gap}")
        if not 0.0 < self.signature_fraction < 1.0:
            raise ParamError(f"signature_fraction must be in (0, 1), got {self.signature_fraction}")
        return self

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size**2

    @property
    def lattice(self) -> tuple[int, int, int]:
        return (self.frames, self.grid_h, self.grid_w)

    @property
    def pixel_size(self) -> tuple[int, int]:
        return (self.grid_h * self.patch_size, self.grid_w * self.patch_size)
