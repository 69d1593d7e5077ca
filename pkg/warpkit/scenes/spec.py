from __future__ import annotations

from pathlib import Path

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigError, StorageError
from .params import SceneParams

SCENE_SPEC_VERSION = 1
VERSION_KEY = "WARPKIT_SCENE_SPEC"

_PAIR_FIELDS = {"velocity", "start_offset", "canonical"}


class SceneSpec(BaseModel):
    """A corpus recipe: how many scenes, from which seeds, with which layout."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    scenes: int = 10
    base_seed: int = 0
    prompts: int = 10
    reference_count: int = 5
    reference_jitter: int = 0
    params: SceneParams = Field(default_factory=SceneParams)

    @model_validator(mode="after")
    def _check(self) -> SceneSpec:
        if self.scenes < 1 or self.prompts < 1 or self.reference_count < 1:
            raise ConfigError("A scene spec needs at least one scene, one prompt and one reference image")
        if self.reference_jitter < 0:
            raise ConfigError(f"reference_jitter must be non-negative, got {self.reference_jitter}")
        return self

    def seeds(self) -> list[int]:
        return [self.base_seed + index for index in range(self.scenes)]


def parse_scene_spec(values: dict[str, str | None], source: str = "<scene spec>") -> SceneSpec:
    version = values.get(VERSION_KEY)
    if version != str(SCENE_SPEC_VERSION):
        raise ConfigError(
            f"{source}: expected {VERSION_KEY}={SCENE_SPEC_VERSION}, got {version!r}.\n"
            "Regenerate the scene file with `warpkit gen-scene --write-spec`."
        )
    top: dict[str, object] = {}
    params: dict[str, object] = {}
    for key, raw in values.items():
        if key == VERSION_KEY:
            continue
        if raw is None:
            raise ConfigError(f"{source}: key {key} has no value")
        name = key.lower()
        value: object = tuple(int(part) for part in raw.split(",")) if name in _PAIR_FIELDS else raw
        if name in SceneSpec.model_fields and name != "params":
            top[name] = value
        elif name in SceneParams.model_fields:
            params[name] = value
        else:
            raise ConfigError(f"{source}: unknown key {key}")
    try:
        return SceneSpec(**top, params=SceneParams(**params))
    except ValidationError as ex:
        raise ConfigError(f"{source}: {ex}") from None


def load_scene_spec(path: str | Path) -> SceneSpec:
    path = Path(path)
    if not path.is_file():
        raise StorageError(f"Scene spec {path} does not exist")
    try:
        return parse_scene_spec(dotenv_values(path), str(path))
    except ValueError as ex:
        raise ConfigError(f"{path}: {ex}") from None


def _format(value: object) -> str:
    if isinstance(value, tuple):
        return ",".join(str(part) for part in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def dump_scene_spec(spec: SceneSpec, path: str | Path) -> Path:
    path = Path(path)
    lines = ["# warpkit scene spec", f"{VERSION_KEY}={SCENE_SPEC_VERSION}"]
    for name, value in spec.model_dump(exclude={"params"}).items():
        lines.append(f"{name.upper()}={_format(value)}")
    for name in SceneParams.model_fields:
        lines.append(f"{name.upper()}={_format(getattr(spec.params, name))}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as ex:
        raise StorageError(f"Failed to write scene spec {path}: {ex}") from None
    return path
