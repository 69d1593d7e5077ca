from __future__ import annotations

import hashlib
import logging
from typing import Iterable, Mapping

import numpy as np

from ..errors import ConfigError
from ..numerics import SeededRng, Tensor, resolve_dtype
from .config import ModelConfig
from .tokens import SUBJECT_ID

logger = logging.getLogger(__name__)

PROJECTIONS = ("q", "k", "v", "o")

_PROJECTION_STD = 0.02
_OUTPUT_STD = 0.002

# content-identity gains
_PATCH_GAIN = 4.0
_MODALITY_BIAS = 2.0
_SUBJECT_GAIN = 2.0
_QK_GAIN = 2.0
_SIGNATURE_GAIN = 3.0
_POSITION_GAIN = 16.0
_TEXT_STD = 0.1


def layer_key(layer: int, name: str) -> str:
    return f"layers.{layer}.{name}"


def weight_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, hidden = config.dim, config.dim * config.mlp_ratio
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed": (config.patch_dim, d),
        "video_modality": (d,),
        "time_proj": (d, d),
        "text_embed": (config.vocab_size, d),
    }
    for layer in range(config.layers):
        for name in PROJECTIONS:
            shapes[layer_key(layer, name)] = (d, d)
        shapes[layer_key(layer, "mlp_in")] = (d, hidden)
        shapes[layer_key(layer, "mlp_out")] = (hidden, d)
    shapes["final"] = (d, config.patch_dim)
    return shapes


def init_weights(config: ModelConfig, seed: int = 0, precision: str | None = None) -> dict[str, Tensor]:
    dtype = resolve_dtype(precision)
    rng = SeededRng(seed=seed)
    if config.init == "content_identity":
        arrays = _content_identity(config, rng)
    else:
        arrays = _random(config, rng)
    logger.debug(f"Initialized {len(arrays)} weight tensors ({config.init}, seed {seed})")
    return {name: Tensor(array, dtype=dtype) for name, array in arrays.items()}


def _random(config: ModelConfig, rng: SeededRng) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, shape in weight_shapes(config).items():
        if name == "patch_embed":
            std = 1.0 / np.sqrt(config.patch_dim)
        elif name == "text_embed":
            std = 1.0
        elif name == "final":
            std = _OUTPUT_STD
        else:
            std = _PROJECTION_STD
        arrays[name] = rng.split(name).normal(shape, std=std, dtype=np.float64)
    return arrays


def check_content_identity(config: ModelConfig) -> None:
    """Raise unless the config can host the content-identity construction."""
    channels, pixels = config.latent_channels, config.patch_size**2
    slots_needed = ((pixels - 1) // config.heads) * channels + channels
    problems = []
    if config.heads < 2:
        problems.append("needs at least two heads (positional and semantic)")
    if config.patch_dim + 1 > config.dim:
        problems.append(f"model dim {config.dim} must exceed the patch dim {config.patch_dim}")
    if slots_needed > config.rope_split[0]:
        problems.append(f"frame rotary block {config.rope_split[0]} cannot hold {slots_needed} content slots")
    if config.rope_split[1] < 2 or config.rope_split[2] < 2:
        problems.append("row and column rotary blocks must hold at least one pair each")
    if problems:
        raise ConfigError("Content-identity init is incompatible with this config: " + "; ".join(problems))


def content_routing(config: ModelConfig) -> np.ndarray:
    """Routing matrix shared by the query and key projections, [d, d].

    Patch entries land in the frame block of head ``pixel % heads``; the
    modality bias lands on the first component of every row/column pair of
    the positional heads (the first half).
    """
    d, c, hd = config.dim, config.latent_channels, config.head_dim
    routing = np.zeros((d, d))
    for j in range(config.patch_dim):
        pixel, channel = divmod(j, c)
        head = pixel % config.heads
        slot = (pixel // config.heads) * c + channel
        gain = _SIGNATURE_GAIN if channel == c - 1 else 1.0
        routing[j, head * hd + slot] = gain
    frame_block, row_block, _ = config.rope_split
    components = list(range(frame_block, frame_block + row_block, 2))
    components += list(range(frame_block + row_block, hd, 2))
    for head in range(config.heads // 2):
        for component in components:
            routing[config.patch_dim, head * hd + component] = _POSITION_GAIN
    return routing


def signature_dims(config: ModelConfig) -> np.ndarray:
    """Patch-vector entries holding the last latent channel."""
    c = config.latent_channels
    return np.arange(c - 1, config.patch_dim, c)


def _content_identity(config: ModelConfig, rng: SeededRng) -> dict[str, np.ndarray]:
    check_content_identity(config)
    d, pd = config.dim, config.patch_dim
    shapes = weight_shapes(config)
    arrays = {name: np.zeros(shape) for name, shape in shapes.items()}

    arrays["patch_embed"][:, :pd] = _PATCH_GAIN * np.eye(pd)
    arrays["video_modality"][pd] = _MODALITY_BIAS
    text = np.zeros((config.vocab_size, d))
    text[:, pd + 1 :] = rng.split("text_embed").normal((config.vocab_size, d - pd - 1), std=_TEXT_STD, dtype=np.float64)
    text[SUBJECT_ID, signature_dims(config)] = _SUBJECT_GAIN
    arrays["text_embed"] = text

    routing = _QK_GAIN * content_routing(config)
    values = np.zeros((d, d))
    values[:pd, :pd] = np.eye(pd)
    for layer in range(config.layers):
        arrays[layer_key(layer, "q")] = routing
        arrays[layer_key(layer, "k")] = routing
        arrays[layer_key(layer, "v")] = values
        arrays[layer_key(layer, "mlp_in")] = rng.split(layer_key(layer, "mlp_in")).normal(
            shapes[layer_key(layer, "mlp_in")], std=_PROJECTION_STD, dtype=np.float64
        )
    return arrays


def checksum(weights: Mapping[str, Tensor], names: Iterable[str] | None = None) -> str:
    """SHA-256 over the named tensors' bytes, in sorted name order."""
    digest = hashlib.sha256()
    for name in sorted(weights if names is None else names):
        array = weights[name].data
        digest.update(name.encode("utf-8"))
        digest.update(str(array.dtype).encode("ascii"))
        digest.update(np.ascontiguousarray(array).tobytes())
    return digest.hexdigest()
