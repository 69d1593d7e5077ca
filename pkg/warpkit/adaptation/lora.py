from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from ..errors import ConfigError, WiringError
from ..mmdit import SUBJECT_ID, MMDiT
from ..numerics import SeededRng, Tensor, add, matmul, scale

logger = logging.getLogger(__name__)

LORA_INIT_STD = 0.02


class AdapterTarget(str, Enum):
    KEY = "key"
    VALUE = "value"
    OUTPUT = "output"

    @property
    def projection(self) -> str:
        return {"key": "k", "value": "v", "output": "o"}[self.value]

    @classmethod
    def parse(cls, value: AdapterTarget | str) -> AdapterTarget:
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(
                f"Adapter target {value!r} is not allowed.\n"
                f"Low-rank adapters attach only to: {', '.join(t.value for t in cls)}. "
                "Query projections stay frozen."
            ) from None


@dataclass(frozen=True)
class LoraAdapter:
    """Rank-``r`` update ``scale * up @ down`` of one projection of one layer."""

    layer: int
    target: AdapterTarget
    down: Tensor
    """A, [r, d]."""

    up: Tensor
    """B, [d, r]. Zero at initialization so the adapter starts as a no-op."""

    scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", AdapterTarget.parse(self.target))
        if self.down.ndim != 2 or self.up.ndim != 2 or self.down.shape[0] != self.up.shape[1]:
            raise WiringError(
                f"Adapter factors disagree: down {self.down.shape}, up {self.up.shape}; "
                "expected down [r, d] and up [d, r]."
            )

    @classmethod
    def create(
        cls,
        layer: int,
        target: AdapterTarget | str,
        dim: int,
        rank: int,
        rng: SeededRng,
        *,
        alpha: float | None = None,
        dtype: np.dtype | str | None = None,
    ) -> LoraAdapter:
        if rank < 1:
            raise ConfigError(f"Adapter rank must be at least 1, got {rank}")
        down = rng.normal((rank, dim), std=LORA_INIT_STD, dtype=dtype)
        up = np.zeros((dim, rank), dtype=down.dtype)
        return cls(
            layer=layer,
            target=target,
            down=Tensor.leaf(down),
            up=Tensor.leaf(up),
            scale=(alpha if alpha is not None else rank) / rank,
        )

    @property
    def rank(self) -> int:
        return self.down.shape[0]

    @property
    def key(self) -> tuple[int, str]:
        return (self.layer, self.target.projection)

    @property
    def name(self) -> str:
        return f"lora.{self.layer}.{self.target.value}"

    def apply(self, weight: Tensor) -> Tensor:
        return apply_lora(weight, self)


def apply_lora(weight: Tensor, adapter: LoraAdapter) -> Tensor:
    """Effective weight ``W + scale * B @ A``; ``W`` itself is never modified."""
    rows, cols = weight.shape
    if adapter.up.shape[0] != rows or adapter.down.shape[1] != cols:
        raise WiringError(
            f"Adapter {adapter.name} with factors {adapter.up.shape} @ {adapter.down.shape} "
            f"cannot update a {weight.shape} projection."
        )
    return add(weight, scale(matmul(adapter.up, adapter.down), adapter.scale))


@dataclass(frozen=True)
class SubjectToken:
    """Trainable embedding standing in for the reserved subject id."""

    embedding: Tensor
    token_id: int = SUBJECT_ID

    @classmethod
    def from_model(cls, model: MMDiT) -> SubjectToken:
        row = model.weights["text_embed"].data[SUBJECT_ID]
        return cls(embedding=Tensor.leaf(row))


def attach(model: MMDiT, adapters: Iterable[LoraAdapter], token: SubjectToken | None = None) -> MMDiT:
    """A view of ``model`` whose key/value/output projections carry ``adapters``."""
    cfg = model.config
    wired: dict[tuple[int, str], LoraAdapter] = {}
    for adapter in adapters:
        if not 0 <= adapter.layer < cfg.layers:
            raise WiringError(f"Adapter {adapter.name} targets layer {adapter.layer}, model has {cfg.layers}")
        if adapter.up.shape[0] != cfg.dim or adapter.down.shape[1] != cfg.dim:
            raise WiringError(f"Adapter {adapter.name} is sized for dim {adapter.up.shape[0]}, model dim is {cfg.dim}")
        if adapter.key in wired:
            raise ConfigError(
                f"Two adapters target layer {adapter.layer} {adapter.target.value}.\n"
                "At most one adapter per (layer, target) may be attached."
            )
        wired[adapter.key] = adapter
    if token is not None and token.embedding.shape != (cfg.dim,):
        raise WiringError(f"Subject embedding has shape {token.embedding.shape}, expected ({cfg.dim},)")
    return model.adapted(wired, token)


def init_adapters(
    model: MMDiT,
    rank: int,
    seed: int,
    *,
    targets: Iterable[AdapterTarget | str] = tuple(AdapterTarget),
    alpha: float | None = None,
) -> list[LoraAdapter]:
    """One adapter per layer and target, each from its own seeded stream."""
    root = SeededRng(seed=seed)
    adapters = []
    for layer in range(model.config.layers):
        for target in targets:
            target = AdapterTarget.parse(target)
            rng = root.split(f"lora.{layer}.{target.value}")
            adapters.append(
                LoraAdapter.create(layer, target, model.config.dim, rank, rng, alpha=alpha, dtype=model.dtype)
            )
    logger.debug(f"Created {len(adapters)} adapters of rank {rank}")
    return adapters
