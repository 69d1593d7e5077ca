from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..adaptation import LoraAdapter, SubjectToken, TrainResult, attach, load_adapters, save_adapters
from ..errors import StorageError
from ..mmdit import MMDiT, load_model, save_model

logger = logging.getLogger(__name__)

BASE_DIR = "base"
ADAPTER_DIR = "adapters"


@dataclass
class Checkpoint:
    """Base weights plus, after adaptation, the adapters and subject embedding."""

    base: MMDiT
    adapters: list[LoraAdapter] = field(default_factory=list)
    token: SubjectToken | None = None
    manifest: dict[str, Any] = field(default_factory=dict)

    @property
    def adapted(self) -> bool:
        return self.token is not None

    def model(self) -> MMDiT:
        """The model to generate with: the adapted view when adapters exist."""
        if not self.adapted:
            return self.base
        return attach(self.base, self.adapters, self.token)


def save_checkpoint(
    directory: str | Path,
    model: MMDiT,
    result: TrainResult | None = None,
    *,
    extra: Mapping[str, Any] | None = None,
) -> Path:
    directory = Path(directory)
    save_model(model, directory / BASE_DIR)
    if result is not None:
        save_adapters(directory / ADAPTER_DIR, result.adapters, result.token, extra=extra)
    logger.info(f"Checkpoint written to {directory}")
    return directory


def load_checkpoint(directory: str | Path) -> Checkpoint:
    directory = Path(directory)
    if not (directory / BASE_DIR).is_dir():
        raise StorageError(
            f"{directory} is not a warpkit checkpoint (no {BASE_DIR}/ directory).\n"
            "Create one with `warpkit init-model` or `warpkit adapt`."
        )
    checkpoint = Checkpoint(base=load_model(directory / BASE_DIR))
    if (directory / ADAPTER_DIR).is_dir():
        adapters, token, manifest = load_adapters(directory / ADAPTER_DIR)
        checkpoint.adapters, checkpoint.token, checkpoint.manifest = adapters, token, manifest
    return checkpoint
