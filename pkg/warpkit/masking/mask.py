from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from ..errors import ShapeError, StorageError


class MaskKind(str, Enum):
    FOREGROUND = "foreground"
    CYCLE = "cycle"
    COMBINED = "combined"


@dataclass(frozen=True)
class Mask:
    """Binary map over the video token lattice [F, H, W]."""

    values: np.ndarray
    kind: MaskKind
    degenerate: bool = False
    """Set when the source map carried no signal; injection falls back."""

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=bool, copy=True)
        if values.ndim != 3:
            raise ShapeError(f"Mask must be [frames, rows, cols], got {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", MaskKind(self.kind))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def count(self) -> int:
        return int(self.values.sum())

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @classmethod
    def zeros(cls, lattice: tuple[int, int, int], kind: MaskKind, *, degenerate: bool = False) -> Mask:
        return cls(values=np.zeros(lattice, dtype=bool), kind=kind, degenerate=degenerate)

    @classmethod
    def ones(cls, lattice: tuple[int, int, int], kind: MaskKind) -> Mask:
        return cls(values=np.ones(lattice, dtype=bool), kind=kind)


def write_pgm(mask: Mask, directory: str | Path, prefix: str) -> list[Path]:
    """One plain (P2) graymap per frame with maxval 1."""
    directory = Path(directory)
    paths = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for frame, values in enumerate(mask.values):
            rows, cols = values.shape
            body = "\n".join(" ".join(str(int(v)) for v in row) for row in values)
            path = directory / f"{prefix}_f{frame:02d}.pgm"
            path.write_text(f"P2\n{cols} {rows}\n1\n{body}\n")
            paths.append(path)
    except OSError as ex:
        raise StorageError(f"Failed to write mask images to {directory}: {ex}") from None
    return paths
