from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..adaptation import TrainConfig
from ..diffusion import Schedule, ScheduleConfig
from ..errors import ConfigError, StorageError
from ..injection import InjectionConfig
from ..masking import MaskConfig
from ..mmdit import ModelConfig
from ..numerics import Precision, default_precision
from ..scenes import SceneParams

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "wk-1"

_LATTICE_FIELDS = (
    ("frames", "frames"),
    ("grid_h", "grid_h"),
    ("grid_w", "grid_w"),
    ("patch_size", "patch_size"),
    ("latent_channels", "channels"),
)


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    corpus: str = "corpus"
    checkpoint: str = "runs/checkpoint"
    out: str = "runs/out"


class RunConfig(BaseModel):
    """Everything a command needs, versioned as schema ``wk-1``.

    ``mask`` is authoritative for the masking thresholds; it replaces the
    mask block nested in ``injection`` when :meth:`injection_config` is read.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    schema_version: Literal["wk-1"] = Field(default=SCHEMA_VERSION, alias="schema")
    seed: int = 0
    precision: Precision = Field(default_factory=default_precision)
    model: ModelConfig = Field(default_factory=ModelConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    injection: InjectionConfig = Field(default_factory=InjectionConfig)
    mask: MaskConfig = Field(default_factory=MaskConfig)
    scene: SceneParams = Field(default_factory=SceneParams)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def _check_lattice(self) -> RunConfig:
        for model_field, scene_field in _LATTICE_FIELDS:
            model_value, scene_value = getattr(self.model, model_field), getattr(self.scene, scene_field)
            if model_value != scene_value:
                raise ConfigError(
                    f"model.{model_field}={model_value} but scene.{scene_field}={scene_value}.\n"
                    "Scenes are rendered directly on the model's token lattice; set both to the same value."
                )
        return self

    @classmethod
    def from_dict(cls, values: dict[str, Any], source: str = "<config>") -> RunConfig:
        if not isinstance(values, dict):
            raise ConfigError(f"{source}: expected a mapping at the top level")
        schema = values.get("schema")
        if schema != SCHEMA_VERSION:
            raise ConfigError(
                f"{source}: config schema {schema!r} is not supported, expected {SCHEMA_VERSION!r}.\n"
                "Write a fresh config with `warpkit config --out run.yaml`."
            )
        try:
            return cls.model_validate(values)
        except ValidationError as ex:
            raise ConfigError(f"{source}: {ex}") from None

    @classmethod
    def load_yaml(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        try:
            values = yaml.safe_load(path.read_text())
        except OSError as ex:
            raise StorageError(f"Cannot read config {path}: {ex}") from None
        except yaml.YAMLError as ex:
            raise ConfigError(f"Malformed YAML in {path}: {ex}") from None
        return cls.from_dict(values, str(path))

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def dump_yaml(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_yaml())
        except OSError as ex:
            raise StorageError(f"Failed to write config {path}: {ex}") from None
        return path

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_yaml().encode("utf-8")).hexdigest()

    def injection_config(self, **updates: Any) -> InjectionConfig:
        return self.injection.model_copy(update={"mask": self.mask, **updates})

    def build_schedule(self) -> Schedule:
        return Schedule(config=self.schedule)

    @classmethod
    def full_scale(cls) -> RunConfig:
        """Deployment mapping: 42 blocks, 25 frames, rank-128 adapters, 50 steps.

        The bands stay fractional, so they resolve to steps 3-19 and layers
        20-29 at this depth.
        """
        return cls(
            model=ModelConfig(layers=42, frames=25),
            schedule=ScheduleConfig(steps=50),
            train=TrainConfig(rank=128),
            scene=SceneParams(frames=25),
        )
