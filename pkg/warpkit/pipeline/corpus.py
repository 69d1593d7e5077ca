from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, StorageError
from ..masking import write_pgm
from ..mmdit import SUBJECT_WORD
from ..numerics import Tensor, read_tensor, resolve_dtype, write_tensor
from ..scenes import (
    Scene,
    SceneSpec,
    dump_scene_spec,
    gt_flow,
    gt_mask,
    load_scene_spec,
    make_reference_set,
    make_scene,
    render_latent,
)
from .outputs import read_csv, write_csv, write_flow_csv

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
SPEC_NAME = "scene.env"
MANIFEST_HEADER = ("scene_id", "seed", "prompt_id", "prompt")

PROMPT_TEMPLATES = (
    f"a photo of {SUBJECT_WORD}",
    f"{SUBJECT_WORD} on a beach",
    f"{SUBJECT_WORD} in the snow",
    f"{SUBJECT_WORD} floating in space",
    f"a {SUBJECT_WORD} on a table",
    f"{SUBJECT_WORD} in a city street",
    f"a close-up of {SUBJECT_WORD}",
    f"{SUBJECT_WORD} in a forest",
    f"{SUBJECT_WORD} under water",
    f"a painting of {SUBJECT_WORD}",
)


def scene_dir(root: Path, scene_id: int) -> Path:
    return root / f"scene_{scene_id:02d}"


@dataclass(frozen=True)
class CorpusEntry:
    scene_id: int
    seed: int
    prompt_id: int
    prompt: str


@dataclass(frozen=True)
class Corpus:
    """A generated scene corpus on disk.

    Scenes are regenerated from their seeds for ground truth; latents are
    read back from the tensor files.
    """

    root: Path
    spec: SceneSpec
    entries: tuple[CorpusEntry, ...]

    @property
    def scene_ids(self) -> list[int]:
        return sorted({entry.scene_id for entry in self.entries})

    def _seed(self, scene_id: int) -> int:
        for entry in self.entries:
            if entry.scene_id == scene_id:
                return entry.seed
        raise ConfigError(f"Corpus {self.root} has no scene {scene_id}; available: {self.scene_ids}")

    def prompts(self, scene_id: int) -> list[str]:
        self._seed(scene_id)
        return [entry.prompt for entry in self.entries if entry.scene_id == scene_id]

    def scene(self, scene_id: int) -> Scene:
        return make_scene(self._seed(scene_id), self.spec.params)

    def video(self, scene_id: int, dtype: np.dtype | str | None = None) -> Tensor:
        self._seed(scene_id)
        return Tensor(read_tensor(scene_dir(self.root, scene_id) / "video.wkt"), dtype=dtype)

    def references(self, scene_id: int, dtype: np.dtype | str | None = None) -> list[Tensor]:
        self._seed(scene_id)
        directory = scene_dir(self.root, scene_id)
        return [
            Tensor(read_tensor(directory / f"reference_{index}.wkt"), dtype=dtype)
            for index in range(self.spec.reference_count)
        ]


def generate_corpus(spec: SceneSpec, out: str | Path, *, precision: str | None = None) -> Corpus:
    """Write the manifest, per-scene latents, references, ground-truth flows and masks.

    Output bytes depend only on ``spec`` and ``precision``.
    """
    if spec.prompts > len(PROMPT_TEMPLATES):
        raise ConfigError(f"Only {len(PROMPT_TEMPLATES)} prompt templates exist, spec asks for {spec.prompts}")
    out = Path(out)
    dtype = resolve_dtype(precision)
    dump_scene_spec(spec, out / SPEC_NAME)

    entries = []
    for scene_id, seed in enumerate(spec.seeds()):
        scene = make_scene(seed, spec.params)
        directory = scene_dir(out, scene_id)
        write_tensor(directory / "video.wkt", render_latent(scene, dtype))
        references = make_reference_set(scene, spec.reference_count, spec.reference_jitter, dtype)
        for index, latent in enumerate(references.latents):
            write_tensor(directory / f"reference_{index}.wkt", latent)
        write_flow_csv(directory / "gt_flow.csv", gt_flow(scene))
        write_pgm(gt_mask(scene), directory / "gt_mask", "mask")
        entries.extend(
            CorpusEntry(scene_id, seed, prompt_id, PROMPT_TEMPLATES[prompt_id]) for prompt_id in range(spec.prompts)
        )
        logger.debug(f"Scene {scene_id} (seed {seed}) written to {directory}")

    write_csv(
        out / MANIFEST_NAME,
        MANIFEST_HEADER,
        ((e.scene_id, e.seed, e.prompt_id, e.prompt) for e in entries),
    )
    logger.info(f"Corpus of {spec.scenes} scenes x {spec.prompts} prompts written to {out}")
    return Corpus(root=out, spec=spec, entries=tuple(entries))


def load_corpus(directory: str | Path) -> Corpus:
    root = Path(directory)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise StorageError(
            f"{root} is not a warpkit corpus (missing {MANIFEST_NAME}).\n"
            "Generate one with `warpkit gen-scene --out <dir>`."
        )
    spec = load_scene_spec(root / SPEC_NAME)
    try:
        entries = tuple(
            CorpusEntry(int(row["scene_id"]), int(row["seed"]), int(row["prompt_id"]), row["prompt"])
            for row in read_csv(manifest)
        )
    except (KeyError, ValueError) as ex:
        raise StorageError(f"Malformed corpus manifest {manifest}: {ex}") from None
    return Corpus(root=root, spec=spec, entries=entries)
