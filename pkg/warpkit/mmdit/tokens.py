from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InputError, ShapeError
from ..numerics import Tensor, reshape, transpose
from .config import ModelConfig

PAD_ID = 0
SUBJECT_ID = 1
SUBJECT_WORD = "<sks>"


def tokenize(prompt: str, config: ModelConfig) -> np.ndarray:
    """Map a prompt to ``config.text_len`` integer ids.

    ``<sks>`` maps to the reserved subject id; other words hash into the
    remaining vocabulary. Longer prompts are truncated, shorter ones padded.
    """
    ids: list[int] = []
    for word in prompt.strip().split():
        if word == SUBJECT_WORD:
            ids.append(SUBJECT_ID)
        else:
            ids.append(2 + zlib.crc32(word.lower().encode("utf-8")) % (config.vocab_size - 2))
    ids = ids[: config.text_len]
    ids += [PAD_ID] * (config.text_len - len(ids))
    return np.asarray(ids, dtype=np.int64)


def subject_index(token_ids: Sequence[int] | np.ndarray) -> int:
    """Position of the single subject id inside the text segment."""
    positions = np.flatnonzero(np.asarray(token_ids) == SUBJECT_ID)
    if positions.size != 1:
        raise InputError(
            f"Prompt must contain the subject token {SUBJECT_WORD} exactly once, found {positions.size}.\n"
            f"Example: 'a photo of {SUBJECT_WORD}'."
        )
    return int(positions[0])


def lattice_positions(frames: int, grid_h: int, grid_w: int) -> np.ndarray:
    """(frame, row, col) of every video token in sequence order, shape [F*H*W, 3]."""
    f, h, w = np.meshgrid(np.arange(frames), np.arange(grid_h), np.arange(grid_w), indexing="ij")
    return np.stack([f.ravel(), h.ravel(), w.ravel()], axis=1)


def patchify(latent: Tensor, config: ModelConfig) -> Tensor:
    """Flatten a latent video [F, H*p, W*p, c] into patch vectors [F*H*W, c*p*p].

    Entry ``(pr * p + pc) * c + ch`` of a patch vector holds channel ``ch`` of
    the latent pixel at offset ``(pr, pc)`` inside the patch.
    """
    p = config.patch_size
    if latent.ndim != 4:
        raise ShapeError(f"Latent must be [frames, height, width, channels], got {latent.shape}")
    frames, height, width, channels = latent.shape
    expected = (config.grid_h * p, config.grid_w * p, config.latent_channels)
    if (height, width, channels) != expected:
        raise ShapeError(
            f"Latent frame shape {(height, width, channels)} does not match the model, expected {expected}."
        )
    x = reshape(latent, (frames, config.grid_h, p, config.grid_w, p, channels))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (frames * config.tokens_per_frame, config.patch_dim))


def unpatchify(patches: Tensor, frames: int, config: ModelConfig) -> Tensor:
    p = config.patch_size
    if patches.shape != (frames * config.tokens_per_frame, config.patch_dim):
        raise ShapeError(
            f"Patch tensor {patches.shape} does not hold {frames} frames of "
            f"{config.tokens_per_frame} tokens x {config.patch_dim} values."
        )
    x = reshape(patches, (frames, config.grid_h, config.grid_w, p, p, config.latent_channels))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, config.latent_shape(frames))


@dataclass(frozen=True)
class TokenSequence:
    """Joint token layout ``[video; text]`` for one forward pass."""

    video: Tensor
    """Embedded video tokens [N, d]."""

    text: Tensor
    """Embedded text tokens [M, d]."""

    positions: np.ndarray
    """Lattice (frame, row, col) of each video token."""

    subject_index: int | None

    @property
    def n_video(self) -> int:
        return self.video.shape[0]

    @property
    def length(self) -> int:
        return self.video.shape[0] + self.text.shape[0]
