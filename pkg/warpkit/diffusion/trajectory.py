from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..errors import BranchError, DomainError, StorageError
from ..numerics import Tensor, load_tensor_dir, save_tensor_dir
from .schedule import Schedule


@dataclass(frozen=True)
class Trajectory:
    """Latents ordered from the noisiest timestep down to ``0``."""

    latents: tuple[Tensor, ...]
    timesteps: tuple[int, ...]
    schedule_hash: str

    def __post_init__(self) -> None:
        if len(self.latents) != len(self.timesteps):
            raise BranchError(f"{len(self.latents)} latents for {len(self.timesteps)} timesteps")
        if any(a <= b for a, b in zip(self.timesteps, self.timesteps[1:])):
            raise BranchError(f"Trajectory timesteps must strictly decrease, got {self.timesteps}")
        shapes = {latent.shape for latent in self.latents}
        if len(shapes) > 1:
            raise BranchError(f"Trajectory latents differ in shape: {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.latents)

    @property
    def final(self) -> Tensor:
        return self.latents[-1]

    @property
    def start(self) -> Tensor:
        return self.latents[0]

    def latent_at(self, t: int) -> Tensor:
        try:
            return self.latents[self.timesteps.index(t)]
        except ValueError:
            raise DomainError(f"Timestep {t} is not on this trajectory") from None

    def check_schedule(self, schedule: Schedule) -> None:
        if schedule.hash() != self.schedule_hash:
            raise BranchError("Trajectory was produced under a different schedule than the sampler uses.")

    def save(self, directory: str | Path) -> Path:
        tensors = {f"x_{t:04d}": latent for t, latent in zip(self.timesteps, self.latents)}
        return save_tensor_dir(
            directory,
            tensors,
            kind="trajectory",
            extra={"timesteps": list(self.timesteps), "schedule_hash": self.schedule_hash},
        )

    @classmethod
    def load(cls, directory: str | Path) -> Trajectory:
        tensors, manifest = load_tensor_dir(directory, kind="trajectory")
        try:
            timesteps = tuple(int(t) for t in manifest["timesteps"])
            latents = tuple(Tensor(tensors[f"x_{t:04d}"]) for t in timesteps)
            return cls(latents=latents, timesteps=timesteps, schedule_hash=str(manifest["schedule_hash"]))
        except KeyError as ex:
            raise StorageError(f"Trajectory {directory} is missing {ex}") from None
