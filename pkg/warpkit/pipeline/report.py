from __future__ import annotations

import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

import yaml
from pydantic import BaseModel, ConfigDict, Field

from ..errors import StorageError
from ..version import __version__
from .config import RunConfig

REPORT_NAME = "report.yaml"


class RunReport(BaseModel):
    """Metrics of one command run, tied to the config that produced them."""

    model_config = ConfigDict(extra="forbid")

    command: str
    config_hash: str
    version: str = __version__
    seed: int = 0
    metrics: dict[str, Any] = Field(default_factory=dict)
    losses: list[float] = Field(default_factory=list)
    tables: dict[str, list[dict[str, Any]]] = Field(default_factory=dict)
    """Small result tables (PCK summary, ablation rows) echoed from their CSVs."""

    timing: dict[str, float] = Field(default_factory=dict)
    """Wall-clock seconds per phase."""

    artifacts: dict[str, str] = Field(default_factory=dict)

    @classmethod
    def start(cls, command: str, cfg: RunConfig) -> RunReport:
        return cls(command=command, config_hash=cfg.config_hash(), seed=cfg.seed)

    @contextmanager
    def timed(self, phase: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            self.timing[phase] = self.timing.get(phase, 0.0) + time.perf_counter() - started

    def artifact(self, name: str, path: Path) -> Path:
        self.artifacts[name] = str(path)
        return path

    def write(self, directory: str | Path) -> Path:
        """Dump as YAML next to the run's outputs; timing is the only non-reproducible part."""
        path = Path(directory) / REPORT_NAME
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True))
        except OSError as ex:
            raise StorageError(f"Failed to write report {path}: {ex}") from None
        return path

    @classmethod
    def load(cls, path: str | Path) -> RunReport:
        path = Path(path)
        if path.is_dir():
            path = path / REPORT_NAME
        try:
            return cls.model_validate(yaml.safe_load(path.read_text()))
        except OSError as ex:
            raise StorageError(f"Cannot read report {path}: {ex}") from None
