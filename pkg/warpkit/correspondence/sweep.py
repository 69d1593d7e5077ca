from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from ..diffusion import Schedule, ddim_invert
from ..errors import MetricError, StorageError, WarpKitError
from ..mmdit import DescriptorKind, MMDiT, TraceOptions, extract_descriptors, tokenize
from .matching import PCK_ALPHA, match_descriptors, pck

if TYPE_CHECKING:
    from ..scenes import Scene

logger = logging.getLogger(__name__)

SWEEP_STEPS = (10, 20, 30, 40)
CSV_HEADER = ("layer", "kind", "timestep", "pck", "fg_count")


@dataclass(frozen=True)
class SweepCell:
    layer: int
    kind: DescriptorKind
    timestep: int
    """Sampler step index the descriptors were read at."""

    pck: float | None
    fg_count: int
    error: str | None = None

    @property
    def valid(self) -> bool:
        return self.pck is not None


@dataclass
class MatchEvalReport:
    cells: list[SweepCell] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.cells)

    def cell(self, layer: int, kind: DescriptorKind | str, timestep: int) -> SweepCell:
        kind = DescriptorKind(kind)
        for cell in self.cells:
            if (cell.layer, cell.kind, cell.timestep) == (layer, kind, timestep):
                return cell
        raise KeyError((layer, kind.value, timestep))

    def mean_pck(self, kind: DescriptorKind | str, layer: int | None = None) -> float:
        kind = DescriptorKind(kind)
        values = [c.pck for c in self.cells if c.kind is kind and c.valid and (layer is None or c.layer == layer)]
        return sum(values) / len(values) if values else float("nan")

    def best(self) -> tuple[int, DescriptorKind, float]:
        """(layer, kind, mean PCK over timesteps) of the strongest valid pair; ties go to the lower layer."""
        order = list(DescriptorKind)
        pairs = sorted({(c.layer, c.kind) for c in self.cells if c.valid}, key=lambda p: (p[0], order.index(p[1])))
        best: tuple[int, DescriptorKind, float] | None = None
        for layer, kind in pairs:
            score = self.mean_pck(kind, layer)
            if best is None or score > best[2]:
                best = (layer, kind, score)
        if best is None:
            raise MetricError("The sweep produced no valid cells")
        return best

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(CSV_HEADER)
                for c in self.cells:
                    value = "nan" if c.pck is None else f"{c.pck:.6f}"
                    writer.writerow([c.layer, c.kind.value, c.timestep, value, c.fg_count])
        except OSError as ex:
            raise StorageError(f"Failed to write sweep table {path}: {ex}") from None
        return path


def descriptor_sweep(
    scene: Scene,
    model: MMDiT,
    layers: Iterable[int] | None = None,
    kinds: Iterable[DescriptorKind | str] | None = None,
    timesteps: Sequence[int] = SWEEP_STEPS,
    *,
    schedule: Schedule | None = None,
    prompt: str = "a photo of <sks>",
    alpha: float = PCK_ALPHA,
) -> MatchEvalReport:
    """PCK of every (layer, descriptor kind, sampler step) on a synthetic scene.

    Both branches are DDIM-inverted from the scene video and its repeated
    reference; descriptors at step ``i`` come from a traced pass on the
    inverted latents at timestep ``T - i``. A failing cell is kept with an
    empty PCK instead of aborting the sweep.
    """
    schedule = schedule or Schedule()
    layers = list(range(model.config.layers)) if layers is None else [int(layer) for layer in layers]
    kinds = list(DescriptorKind) if kinds is None else [DescriptorKind(kind) for kind in kinds]
    ids = tokenize(prompt, model.config)
    truth = scene.truth()
    fg_count = truth.mask.count
    patch = model.config.patch_size

    gen_path = ddim_invert(model, scene.latent(model.dtype), ids, schedule)
    ref_path = ddim_invert(model, scene.reference_latent(model.dtype), ids, schedule)
    options = TraceOptions.of(layers)

    report = MatchEvalReport()
    for step in timesteps:
        try:
            t = schedule.timestep_of(step)
            gen_trace = model.forward(gen_path.latent_at(t), ids, schedule.fraction(t), trace=options).trace
            ref_trace = model.forward(ref_path.latent_at(t), ids, schedule.fraction(t), trace=options).trace
        except WarpKitError as ex:
            logger.warning(f"Sweep step {step} failed, marking its cells invalid: {ex}")
            report.cells.extend(
                SweepCell(layer, kind, step, None, fg_count, str(ex)) for layer in layers for kind in kinds
            )
            continue
        for layer in layers:
            for kind in kinds:
                try:
                    flows = match_descriptors(
                        extract_descriptors(gen_trace, layer, kind),
                        extract_descriptors(ref_trace, layer, kind),
                    )
                    value = pck(flows.gen_to_ref, truth.flow, truth.mask, alpha, patch)
                except WarpKitError as ex:
                    logger.warning(f"Sweep cell (layer {layer}, {kind.value}, step {step}) is invalid: {ex}")
                    report.cells.append(SweepCell(layer, kind, step, None, fg_count, str(ex)))
                    continue
                report.cells.append(SweepCell(layer, kind, step, value, fg_count))
                logger.debug(f"Layer {layer} {kind.value} step {step}: PCK {value:.3f}")
    logger.info(f"Descriptor sweep finished: {sum(c.valid for c in report.cells)}/{len(report)} valid cells")
    return report
