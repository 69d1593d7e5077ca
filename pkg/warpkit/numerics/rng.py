from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ParamError
from .tensor import Tensor, resolve_dtype

_U64 = 1 << 64


@dataclass
class SeededRng:
    """Counter-based generator: every draw is keyed by ``(seed, counter)``.

    Each call builds a fresh Philox stream whose high counter word is the
    call index, so a given call sequence yields the same numbers on every
    platform regardless of how the draws are scheduled.
    """

    seed: int
    counter: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed < _U64:
            raise ParamError(f"Seed must be an unsigned 64-bit integer, got {self.seed}")
        if not 0 <= self.counter < _U64:
            raise ParamError(f"Counter must be an unsigned 64-bit integer, got {self.counter}")

    def _generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(key=self.seed, counter=self.counter << 192)
        self.counter += 1
        return np.random.Generator(bitgen)

    def normal(self, shape: Sequence[int], *, std: float = 1.0, dtype: np.dtype | str | None = None) -> np.ndarray:
        draw = self._generator().standard_normal(tuple(shape))
        if std != 1.0:
            draw = draw * std
        return draw.astype(resolve_dtype() if dtype is None else dtype)

    def normal_tensor(self, shape: Sequence[int], *, std: float = 1.0, dtype: np.dtype | str | None = None) -> Tensor:
        return Tensor(self.normal(shape, std=std, dtype=dtype))

    def uniform(
        self,
        shape: Sequence[int],
        *,
        low: float = 0.0,
        high: float = 1.0,
        dtype: np.dtype | str | None = None,
    ) -> np.ndarray:
        return self._generator().uniform(low, high, tuple(shape)).astype(resolve_dtype() if dtype is None else dtype)

    def integers(self, low: int, high: int, size: int | Sequence[int] | None = None) -> np.ndarray:
        return self._generator().integers(low, high, size=size)

    def split(self, label: str) -> SeededRng:
        """Independent child stream derived from this seed and ``label``."""
        sequence = np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(label.encode("utf-8")),))
        child = int(sequence.generate_state(1, np.uint64)[0])
        return SeededRng(seed=child)
