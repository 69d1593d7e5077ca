from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any, Literal

import numpy as np

from ..correspondence.matching import MatchResult, match_descriptors, pck
from ..diffusion import Schedule, Trajectory, ddim_invert, ddim_step
from ..errors import BranchError, NumericError, ShapeError
from ..event_emitter import EventEmitter
from ..masking import Mask, MaskKind, SubjectAttention, combine, cycle_error, cycle_mask, threshold_map
from ..mmdit import Descriptors, ForwardTrace, MMDiT, TraceOptions, extract_descriptors, subject_index, tokenize
from ..numerics import SeededRng, Tensor
from .config import InjectionConfig, StrategyName
from .diagnostics import output_fidelity, value_fidelity
from .strategies import InjectionOverride, StepContext, make_strategy

if TYPE_CHECKING:
    from ..adaptation import TrainResult
    from ..scenes import GroundTruth

logger = logging.getLogger(__name__)

SamplerEvent = Literal["step", "fallback", "injected"]


@dataclass(frozen=True)
class StepRecord:
    """Diagnostics of one synchronized denoising step."""

    step: int
    timestep: int
    injected: bool
    fallback: bool = False
    fg_count: int | None = None
    cc_count: int | None = None
    mask_count: int | None = None
    pck: float | None = None
    value_fidelity: float | None = None
    output_fidelity: float | None = None
    leakage: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class DualBranchResult:
    latent: Tensor
    trajectory: Trajectory
    reference: Trajectory
    records: list[StepRecord] = field(default_factory=list)
    masks: dict[int, Mask] = field(default_factory=dict)
    """Injection gate per step."""

    foreground: dict[int, Mask] = field(default_factory=dict)
    flows: dict[int, MatchResult] = field(default_factory=dict)
    traces: dict[int, ForwardTrace] = field(default_factory=dict)
    """Generation-branch traces per step, kept on request."""

    @property
    def injected_steps(self) -> list[int]:
        return [record.step for record in self.records if record.injected]

    def mean_value_fidelity(self, injected_only: bool = False) -> float | None:
        records = [r for r in self.records if r.injected or not injected_only]
        scores = [r.value_fidelity for r in records if r.value_fidelity is not None]
        return float(np.mean(scores)) if scores else None

    def total_leakage(self) -> int:
        return sum(record.leakage or 0 for record in self.records)


def initial_noise(model: MMDiT, seed: int, frames: int | None = None) -> Tensor:
    """Starting latent of a seeded generation, shared with single-branch sampling."""
    return SeededRng(seed=seed).normal_tensor(model.config.latent_shape(frames), dtype=model.dtype)


class DualBranchSampler(EventEmitter[SamplerEvent]):
    """Synchronized reference/generation denoising with appearance injection.

    The reference branch replays the DDIM inversion of the reference video;
    each step it is traced first and the generation pass runs with the
    configured strategy inside the step and layer bands. Matching at step
    ``i`` uses descriptors cached from step ``i - 1``.

    Events: ``"step"`` (record), ``"fallback"`` (step), ``"injected"``
    (step, layers).
    """

    def __init__(self, model: MMDiT, cfg: InjectionConfig | None = None, schedule: Schedule | None = None) -> None:
        super().__init__()
        self.model = model
        self.cfg = cfg or InjectionConfig()
        self.schedule = schedule or Schedule()
        depth = model.config.layers
        self.step_band = self.cfg.steps(self.schedule.steps)
        self.layer_band = self.cfg.layers(depth)
        self.descriptor_layer = self.cfg.matching_layer(depth)
        self.aggregation_layers = self.cfg.aggregation_layers(depth) or tuple(range(depth))
        self.strategy = make_strategy(self.cfg.strategy, masking=self.cfg.masking)
        self._label = f"{type(self).__module__}.{type(self).__name__}"

    def run(
        self,
        prompt: str,
        reference: Tensor,
        *,
        seed: int = 0,
        gen_init: Tensor | None = None,
        ground_truth: GroundTruth | None = None,
        keep_traces: bool = False,
    ) -> DualBranchResult:
        model, schedule, cfg = self.model, self.schedule, self.cfg
        ids = tokenize(prompt, model.config)
        subject = subject_index(ids)
        x = initial_noise(model, seed) if gen_init is None else Tensor(gen_init, dtype=model.dtype)
        frames = x.shape[0]
        lattice = (frames, model.config.grid_h, model.config.grid_w)
        reference_path = ddim_invert(model, self._reference_video(reference, frames), ids, schedule)

        options = TraceOptions.of({self.descriptor_layer, *self.layer_band, *self.aggregation_layers})
        gen_attention = SubjectAttention(lattice=lattice)
        ref_attention = SubjectAttention(lattice=lattice)
        cached: tuple[Descriptors, Descriptors] | None = None
        applied: set[tuple[int, int]] = set()
        latents, timesteps = [x], [schedule.steps]
        records: list[StepRecord] = []
        masks: dict[int, Mask] = {}
        foregrounds: dict[int, Mask] = {}
        flows: dict[int, MatchResult] = {}
        traces: dict[int, ForwardTrace] = {}

        for step in range(schedule.steps):
            t = schedule.timestep_of(step)
            fraction = schedule.fraction(t)
            try:
                ref_trace = model.forward(reference_path.latent_at(t), ids, fraction, trace=options).trace
                context = None
                if cached is not None:
                    context = self._context(step, cached, gen_attention, ref_attention, ref_trace, lattice)
                    flows[step] = context.flows
                    foregrounds[step] = context.foreground
                    masks[step] = context.mask

                in_band = step in self.step_band and cfg.strategy is not StrategyName.NONE and context is not None
                fallback = in_band and cfg.masking and context.foreground.degenerate
                injected = in_band and not fallback
                override = InjectionOverride(self.strategy, context, self.layer_band, applied) if injected else None
                if fallback:
                    logger.warning(f"Step {step}: foreground mask is degenerate, skipping injection")
                    self.emit("fallback", step)

                forward = model.forward(x, ids, fraction, override=override, trace=options)
                if injected:
                    self.emit("injected", step, list(self.layer_band))
                x = ddim_step(x, forward.output, t, t - 1, schedule)
            except NumericError as ex:
                raise NumericError(f"Dual-branch sampling diverged: {ex}", step=step, layer=ex.layer) from ex

            gen_trace = forward.trace
            gen_attention.add(step, gen_trace, self.aggregation_layers, subject)
            ref_attention.add(step, ref_trace, self.aggregation_layers, subject)
            cached = (
                extract_descriptors(gen_trace, self.descriptor_layer, cfg.descriptor_kind),
                extract_descriptors(ref_trace, self.descriptor_layer, cfg.descriptor_kind),
            )
            record = self._record(step, t, injected, fallback, context, gen_trace, ref_trace, ground_truth)
            records.append(record)
            if keep_traces:
                traces[step] = gen_trace
            latents.append(x)
            timesteps.append(t - 1)
            self.emit("step", record)

        result = DualBranchResult(
            latent=x,
            trajectory=Trajectory(latents=tuple(latents), timesteps=tuple(timesteps), schedule_hash=schedule.hash()),
            reference=reference_path,
            records=records,
            masks=masks,
            foreground=foregrounds,
            flows=flows,
            traces=traces,
        )
        logger.info(
            f"Dual-branch run ({cfg.strategy.value}) finished: {len(result.injected_steps)} injected steps, "
            f"{sum(r.fallback for r in records)} fallbacks"
        )
        return result

    def _reference_video(self, reference: Tensor, frames: int) -> Tensor:
        expected = self.model.config.latent_shape(1)[1:]
        data = reference.data
        if data.ndim == 3:
            data = data[None]
        if data.shape[1:] != expected:
            raise ShapeError(f"Reference latent {reference.shape} does not match the model frame shape {expected}")
        if data.shape[0] == 1:
            data = np.repeat(data, frames, axis=0)
        elif data.shape[0] != frames:
            raise BranchError(
                f"Reference has {data.shape[0]} frames but the generation has {frames}.\n"
                "Pass a single reference image; it is repeated along the generated frames."
            )
        return Tensor(data, dtype=self.model.dtype)

    def _context(
        self,
        step: int,
        cached: tuple[Descriptors, Descriptors],
        gen_attention: SubjectAttention,
        ref_attention: SubjectAttention,
        ref_trace: ForwardTrace,
        lattice: tuple[int, int, int],
    ) -> StepContext:
        mask_cfg = self.cfg.mask
        flows = match_descriptors(*cached)
        foreground = threshold_map(gen_attention.mean(mask_cfg.steps), lattice, mask_cfg)
        reference_foreground = threshold_map(ref_attention.mean(mask_cfg.steps), lattice, mask_cfg)
        if self.cfg.masking:
            cycle = cycle_mask(cycle_error(flows.gen_to_ref, flows.ref_to_gen), foreground, mask_cfg)
            gate = combine(foreground, cycle)
        else:
            cycle, gate = None, Mask.ones(lattice, MaskKind.COMBINED)
        return StepContext(
            step=step,
            flows=flows,
            foreground=foreground,
            reference_foreground=reference_foreground,
            mask=gate,
            cycle=cycle,
            reference=ref_trace,
        )

    def _record(
        self,
        step: int,
        t: int,
        injected: bool,
        fallback: bool,
        context: StepContext | None,
        gen_trace: ForwardTrace,
        ref_trace: ForwardTrace,
        truth: GroundTruth | None,
    ) -> StepRecord:
        fields: dict[str, Any] = {}
        if context is not None:
            fields["fg_count"] = context.foreground.count
            fields["cc_count"] = None if context.cycle is None else context.cycle.count
            fields["mask_count"] = context.mask.count
            if injected:
                fields["leakage"] = sum(context.leakage.values())
        if truth is not None:
            if context is not None and truth.mask.count:
                patch = self.model.config.patch_size
                fields["pck"] = pck(context.flows.gen_to_ref, truth.flow, truth.mask, patch_size=patch)
            fields["value_fidelity"] = value_fidelity(gen_trace, ref_trace, self.layer_band, truth.flow, truth.mask)
            fields["output_fidelity"] = output_fidelity(gen_trace, ref_trace, self.layer_band, truth.flow, truth.mask)
        return StepRecord(step=step, timestep=t, injected=injected, fallback=fallback, **fields)


def run_dual_branch(
    model: MMDiT,
    prompt: str,
    reference: Tensor,
    cfg: InjectionConfig | None = None,
    seed: int = 0,
    *,
    adapters: TrainResult | None = None,
    schedule: Schedule | None = None,
    gen_init: Tensor | None = None,
    ground_truth: GroundTruth | None = None,
    keep_traces: bool = False,
) -> DualBranchResult:
    """Generate with reference appearance injection; ``adapters`` are attached first when given."""
    if adapters is not None:
        model = adapters.attach_to(model)
    sampler = DualBranchSampler(model, cfg, schedule)
    return sampler.run(
        prompt, reference, seed=seed, gen_init=gen_init, ground_truth=ground_truth, keep_traces=keep_traces
    )
