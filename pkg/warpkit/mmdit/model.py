from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Protocol, Sequence

import numpy as np

from ..errors import ConfigError, InjectionError, ShapeError, StorageError
from ..numerics import (
    Tensor,
    add,
    as_tensor,
    concat,
    load_tensor_dir,
    matmul,
    narrow,
    rms_norm,
    save_tensor_dir,
    take,
    tanh,
    where,
)
from ..version import __version__
from .attention import (
    AttentionOverride,
    AttentionState,
    joint_attention,
    merge_heads,
    patched_values,
    split_heads,
)
from .config import ModelConfig
from .rope import RopeFrequencies, apply_rope
from .tokens import SUBJECT_ID, TokenSequence, lattice_positions, patchify, unpatchify
from .trace import ForwardTrace, LayerTrace, TraceOptions
from .weights import init_weights, layer_key, weight_shapes

logger = logging.getLogger(__name__)


class WeightDelta(Protocol):
    """Anything that rewrites one projection of one layer (e.g. a LoRA adapter)."""

    def apply(self, weight: Tensor) -> Tensor: ...


class TextOverride(Protocol):
    """A trainable embedding that replaces one vocabulary row."""

    token_id: int
    embedding: Tensor


@dataclass(frozen=True)
class ForwardResult:
    output: Tensor
    """Predicted noise, same shape as the input latent."""

    trace: ForwardTrace | None = None


def timestep_features(fraction: float, dim: int) -> np.ndarray:
    """Sinusoidal features of the normalized timestep ``t / T``, shape [1, dim]."""
    half = dim // 2
    freqs = 10000.0 ** -(np.arange(half, dtype=np.float64) / max(half, 1))
    args = float(fraction) * freqs
    features = np.concatenate([np.sin(args), np.cos(args)])
    if dim % 2:
        features = np.concatenate([features, np.zeros(1)])
    return features[None, :]


def _merged(x: Tensor) -> np.ndarray:
    heads, rows, head_dim = x.shape
    merged = np.transpose(x.data, (1, 0, 2)).reshape(rows, heads * head_dim)
    merged.flags.writeable = False
    return merged


class MMDiT:
    """Toy multi-modal diffusion transformer over ``[video; text]`` tokens.

    Weights are immutable and shared between views; :meth:`adapted` returns a
    view whose key/value/output projections go through weight deltas and whose
    subject row comes from a trainable embedding.
    """

    def __init__(
        self,
        config: ModelConfig,
        weights: Mapping[str, Tensor],
        *,
        adapters: Mapping[tuple[int, str], WeightDelta] | None = None,
        subject: TextOverride | None = None,
    ) -> None:
        expected = weight_shapes(config)
        missing = sorted(set(expected) - set(weights))
        if missing:
            raise ShapeError(f"Weights are missing {len(missing)} tensors, e.g. {missing[:3]}")
        for name, shape in expected.items():
            if weights[name].shape != shape:
                raise ShapeError(f"Weight {name} has shape {weights[name].shape}, expected {shape}")
        dtypes = {weights[name].dtype for name in expected}
        if len(dtypes) != 1:
            raise ConfigError(f"Weights mix precisions: {sorted(str(d) for d in dtypes)}")
        self._config = config
        self._weights = MappingProxyType({name: weights[name] for name in expected})
        self._adapters = MappingProxyType(dict(adapters or {}))
        self._subject = subject
        self._rope = RopeFrequencies(split=config.rope_split, theta=config.rope_theta)
        self._label = f"{type(self).__module__}.{type(self).__name__}"

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, precision: str | None = None) -> MMDiT:
        return cls(config, init_weights(config, seed=seed, precision=precision))

    @property
    def label(self) -> str:
        return self._label

    @property
    def config(self) -> ModelConfig:
        return self._config

    @property
    def weights(self) -> Mapping[str, Tensor]:
        return self._weights

    @property
    def adapters(self) -> Mapping[tuple[int, str], WeightDelta]:
        return self._adapters

    @property
    def subject(self) -> TextOverride | None:
        return self._subject

    @property
    def rope(self) -> RopeFrequencies:
        return self._rope

    @property
    def dtype(self) -> np.dtype:
        return self._weights["final"].dtype

    def adapted(
        self,
        adapters: Mapping[tuple[int, str], WeightDelta],
        subject: TextOverride | None = None,
    ) -> MMDiT:
        return MMDiT(self._config, self._weights, adapters=adapters, subject=subject)

    def effective_weight(self, layer: int, name: str) -> Tensor:
        weight = self._weights[layer_key(layer, name)]
        delta = self._adapters.get((layer, name))
        return weight if delta is None else delta.apply(weight)

    def embed_text(self, token_ids: Sequence[int] | np.ndarray) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.shape != (self._config.text_len,):
            raise ShapeError(f"Expected {self._config.text_len} token ids, got shape {ids.shape}")
        rows = take(self._weights["text_embed"], ids, axis=0)
        if self._subject is not None:
            selected = (ids == self._subject.token_id)[:, None]
            if selected.any():
                rows = where(selected, self._subject.embedding, rows)
        return rows

    def embed(self, latent: Tensor, token_ids: Sequence[int] | np.ndarray) -> TokenSequence:
        """Patchify and embed the video, embed the prompt; no timestep yet."""
        if latent.dtype != self.dtype:
            latent = Tensor(latent.data, dtype=self.dtype)
        cfg = self._config
        ids = np.asarray(token_ids, dtype=np.int64)
        patches = patchify(latent, cfg)
        video = add(matmul(patches, self._weights["patch_embed"]), self._weights["video_modality"])
        subject = np.flatnonzero(ids == SUBJECT_ID)
        return TokenSequence(
            video=video,
            text=self.embed_text(ids),
            positions=lattice_positions(latent.shape[0], cfg.grid_h, cfg.grid_w),
            subject_index=int(subject[0]) if subject.size == 1 else None,
        )

    def forward(
        self,
        latent: Tensor,
        token_ids: Sequence[int] | np.ndarray,
        timestep: float,
        *,
        override: AttentionOverride | None = None,
        trace: TraceOptions | None = None,
    ) -> ForwardResult:
        """Predict the noise in ``latent`` at normalized time ``timestep`` in [0, 1].

        ``override`` is consulted once per block and may replace the video
        values or the attention output. ``trace`` snapshots the selected
        blocks; tracing never changes the result.
        """
        cfg, w = self._config, self._weights
        frames = latent.shape[0]
        sequence = self.embed(latent, token_ids)
        temb = matmul(Tensor(timestep_features(timestep, cfg.dim), dtype=self.dtype), w["time_proj"])
        h = add(concat([sequence.video, sequence.text], axis=0), temb)

        positions = sequence.positions
        record = None
        if trace is not None:
            record = ForwardTrace(
                n_video=sequence.n_video,
                text_len=cfg.text_len,
                lattice=(frames, cfg.grid_h, cfg.grid_w),
                subject_index=sequence.subject_index,
            )
        for layer in range(cfg.layers):
            snapshot = record if trace is not None and trace.wants(layer) else None
            h = self._block(layer, h, positions, override, snapshot)

        out = matmul(rms_norm(narrow(h, 0, 0, positions.shape[0])), w["final"])
        return ForwardResult(output=unpatchify(out, frames, cfg), trace=record)

    def _block(
        self,
        layer: int,
        h: Tensor,
        positions: np.ndarray,
        override: AttentionOverride | None,
        record: ForwardTrace | None,
    ) -> Tensor:
        heads, n_video = self._config.heads, positions.shape[0]
        x = rms_norm(h)
        q = matmul(x, self.effective_weight(layer, "q"))
        k = matmul(x, self.effective_weight(layer, "k"))
        v = matmul(x, self.effective_weight(layer, "v"))
        qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
        q_rope, k_rope = apply_rope(qh, kh, positions, self._rope)

        patch = None
        if override is not None:
            state = AttentionState(layer, qh, kh, vh, q_rope, k_rope, n_video, positions)
            patch = override(layer, state)
        if patch is not None and patch.video_values is not None:
            v = patched_values(v, patch.video_values, n_video)
            vh = split_heads(v, heads)

        attended, probs = joint_attention(q_rope, k_rope, vh)
        attended = merge_heads(attended)
        if patch is not None and patch.output is not None:
            replacement = as_tensor(patch.output, like=attended)
            if replacement.shape != attended.shape:
                raise InjectionError(
                    f"Attention output override at layer {layer} has shape {replacement.shape}, "
                    f"expected {attended.shape}."
                )
            attended = replacement

        h = add(h, matmul(attended, self.effective_weight(layer, "o")))
        hidden = tanh(matmul(rms_norm(h), self._weights[layer_key(layer, "mlp_in")]))
        h = add(h, matmul(hidden, self._weights[layer_key(layer, "mlp_out")]))

        if record is not None:
            record.record(
                LayerTrace(
                    layer=layer,
                    q=q.data,
                    k=k.data,
                    v=v.data,
                    q_rope=_merged(q_rope),
                    k_rope=_merged(k_rope),
                    probs=probs.data,
                    output=attended.data,
                    activations=h.data,
                )
            )
        return h


def save_model(model: MMDiT, directory: str | Path) -> Path:
    """Write base weights with a manifest echoing the model config."""
    return save_tensor_dir(
        directory,
        dict(model.weights),
        kind="weights",
        extra={"config": model.config.model_dump(mode="json")},
    )


def load_model(directory: str | Path) -> MMDiT:
    tensors, manifest = load_tensor_dir(directory, kind="weights")
    try:
        config = ModelConfig(**manifest["config"])
    except (KeyError, TypeError, ValueError) as ex:
        raise StorageError(f"Checkpoint {directory} has an unusable config echo: {ex}") from None
    if manifest.get("version") != __version__:
        written = manifest.get("version")
        logger.warning(f"Checkpoint {directory} was written by warpkit {written}, running {__version__}")
    return MMDiT(config, {name: Tensor(array) for name, array in tensors.items()})
