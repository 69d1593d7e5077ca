from __future__ import annotations

import logging
import math
import time
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from ..adaptation import CoarseTrainer, parameter_checksums
from ..correspondence import SWEEP_STEPS, descriptor_sweep
from ..diffusion import Schedule, Trajectory, ddim_invert, sample
from ..errors import ConfigError, StorageError, WarpKitError
from ..injection import (
    DualBranchResult,
    DualBranchSampler,
    InjectionConfig,
    StepRecord,
    StrategyName,
    initial_noise,
)
from ..masking import write_pgm
from ..mmdit import DescriptorKind, MMDiT, checksum, layer_key, tokenize
from ..numerics import Tensor, write_tensor
from ..scenes import GroundTruth, SceneSpec
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import Corpus, generate_corpus, load_corpus
from .outputs import latent_hash, read_reference, write_csv, write_flow_csv, write_frames, write_jsonl
from .report import RunReport

logger = logging.getLogger(__name__)

RUN_CONFIG_NAME = "run.yaml"

UNMASKED_VALUE_WARP = "value_warp_unmasked"
ABLATION_STRATEGIES = ("none", "value_warp", UNMASKED_VALUE_WARP, "kv_replace", "token_concat")
ABLATION_HEADER = (
    "strategy",
    "value_fidelity",
    "output_fidelity",
    "leakage",
    "injected_steps",
    "fallbacks",
    "mean_fg_count",
    "mean_mask_count",
    "latent_hash",
    "error",
)

StepHandler = Callable[[StepRecord], Any]


def strategy_config(cfg: RunConfig, strategy: str) -> InjectionConfig:
    """Injection config for a strategy name; ``value_warp_unmasked`` turns the mask gate off."""
    if strategy == UNMASKED_VALUE_WARP:
        return cfg.injection_config(strategy=StrategyName.VALUE_WARP, masking=False)
    try:
        return cfg.injection_config(strategy=StrategyName(strategy))
    except ValueError:
        choices = ", ".join([s.value for s in StrategyName] + [UNMASKED_VALUE_WARP])
        raise ConfigError(f"Unknown injection strategy {strategy!r}; expected one of: {choices}") from None


def _check_corpus(corpus: Corpus, model: MMDiT) -> None:
    params, config = corpus.spec.params, model.config
    expected = (config.frames, config.grid_h, config.grid_w)
    if params.lattice != expected or params.patch_dim != config.patch_dim:
        raise ConfigError(
            f"Corpus {corpus.root} is rendered on lattice {params.lattice} with patch dim {params.patch_dim}, "
            f"the model expects {expected} with patch dim {config.patch_dim}.\n"
            "Regenerate the corpus with scene parameters matching the model config."
        )


def _finite_mean(values: Iterable[float | int | None]) -> float | None:
    kept = [float(v) for v in values if v is not None and math.isfinite(v)]
    return float(np.mean(kept)) if kept else None


def baseline_generate(
    model: MMDiT,
    prompt: str,
    seed: int,
    schedule: Schedule,
    gen_init: Tensor | None = None,
) -> Trajectory:
    """Single-branch DDIM sampling from the same starting latent a dual-branch run would use."""
    x_T = initial_noise(model, seed) if gen_init is None else Tensor(gen_init, dtype=model.dtype)
    return sample(model, x_T, tokenize(prompt, model.config), schedule)


def scene_anchor(
    model: MMDiT,
    corpus: Corpus,
    scene_id: int,
    prompt: str,
    schedule: Schedule,
) -> tuple[Tensor, GroundTruth]:
    """Inverted scene video as the generation's starting latent, with its analytic ground truth."""
    video = corpus.video(scene_id, dtype=model.dtype)
    path = ddim_invert(model, video, tokenize(prompt, model.config), schedule)
    return path.start, corpus.scene(scene_id).truth()


def read_prompt(value: str) -> str:
    """The prompt itself, or the first non-empty line of the file it names."""
    path = Path(value)
    if not path.is_file():
        return value
    try:
        lines = [line.strip() for line in path.read_text().splitlines()]
    except (OSError, UnicodeDecodeError) as ex:
        raise StorageError(f"Cannot read prompt file {path}: {ex}") from None
    for line in lines:
        if line:
            return line
    raise ConfigError(f"Prompt file {path} is empty")


def cmd_config(out: str | Path, cfg: RunConfig | None = None) -> Path:
    return (cfg or RunConfig()).dump_yaml(out)


def cmd_init_model(cfg: RunConfig, out: str | Path) -> RunReport:
    out = Path(out)
    report = RunReport.start("init-model", cfg)
    with report.timed("init"):
        model = MMDiT.initialize(cfg.model, seed=cfg.seed, precision=cfg.precision)
    report.artifact("checkpoint", save_checkpoint(out, model))
    report.metrics["weights_checksum"] = checksum(model.weights)
    report.metrics["init"] = cfg.model.init
    cfg.dump_yaml(out / RUN_CONFIG_NAME)
    report.write(out)
    return report


def cmd_gen_scene(spec: SceneSpec, out: str | Path, *, precision: str | None = None) -> Corpus:
    return generate_corpus(spec, out, precision=precision)


def cmd_adapt(
    corpus_dir: str | Path,
    cfg: RunConfig,
    out: str | Path,
    *,
    checkpoint: str | Path | None = None,
    scene_id: int = 0,
    on_step: Callable[[int, float], Any] | None = None,
) -> RunReport:
    """Coarse adaptation on one scene's reference images.

    Writes the checkpoint (base weights plus adapters), ``loss.csv`` with one
    row per step and the report into ``out``.
    """
    out = Path(out)
    corpus = load_corpus(corpus_dir)
    if checkpoint is None:
        model = MMDiT.initialize(cfg.model, seed=cfg.seed, precision=cfg.precision)
    else:
        model = load_checkpoint(checkpoint).base
    _check_corpus(corpus, model)
    references = corpus.references(scene_id, dtype=model.dtype)

    report = RunReport.start("adapt", cfg)
    trainer = CoarseTrainer(model, cfg.train, cfg.build_schedule())
    if on_step is not None:
        trainer.on("step", on_step)
    query_names = [layer_key(layer, "q") for layer in range(model.config.layers)]
    frozen_before = parameter_checksums(model)
    query_before = checksum(model.weights, query_names)
    with report.timed("train"):
        result = trainer.run(references)
    frozen_after = parameter_checksums(result.attach_to(model))

    save_checkpoint(out, model, result, extra={"config_hash": report.config_hash, "scene_id": scene_id})
    report.artifact("checkpoint", out)
    report.artifact("losses", write_csv(out / "loss.csv", ("step", "loss"), enumerate(result.losses)))
    report.losses = list(result.losses)
    report.metrics.update(
        {
            "scene_id": scene_id,
            "references": len(references),
            "steps": cfg.train.steps,
            "initial_loss": result.losses[0] if result.losses else None,
            "final_loss": result.losses[-1] if result.losses else None,
            "query_checksum": query_before,
            "frozen_weights_intact": frozen_before == frozen_after,
        }
    )
    cfg.dump_yaml(out / RUN_CONFIG_NAME)
    report.write(out)
    return report


def cmd_generate(
    checkpoint: str | Path,
    corpus_dir: str | Path | None,
    scene_id: int,
    prompt: str,
    strategy: str,
    seed: int,
    out: str | Path,
    cfg: RunConfig,
    *,
    init: str = "noise",
    reference_path: str | Path | None = None,
    compare_baseline: bool = False,
    on_step: StepHandler | None = None,
) -> RunReport:
    """Dual-branch generation against one reference image.

    The reference is read from ``reference_path`` when given, otherwise it is
    the first reference image of ``scene_id`` in the corpus.

    ``init="scene"`` starts from the inverted scene video so that per-step
    PCK and value fidelity are measured against the scene's ground truth.
    """
    if init not in ("noise", "scene"):
        raise ConfigError(f"init must be 'noise' or 'scene', got {init!r}")
    if corpus_dir is None and (init == "scene" or reference_path is None):
        raise ConfigError(
            "Generation needs a corpus unless a reference image is given and the start is noise.\n"
            "Pass a corpus directory, or a reference image together with init='noise'."
        )
    out = Path(out)
    model = load_checkpoint(checkpoint).model()
    corpus = None if corpus_dir is None else load_corpus(corpus_dir)
    if corpus is not None:
        _check_corpus(corpus, model)
    schedule = cfg.build_schedule()
    if reference_path is not None:
        reference = read_reference(reference_path, model.config.latent_shape(1)[1:], model.dtype)
    else:
        reference = corpus.references(scene_id, dtype=model.dtype)[0]

    report = RunReport.start("generate", cfg)
    gen_init, truth = None, None
    if init == "scene":
        with report.timed("anchor"):
            gen_init, truth = scene_anchor(model, corpus, scene_id, prompt, schedule)

    sampler = DualBranchSampler(model, strategy_config(cfg, strategy), schedule)
    if on_step is not None:
        sampler.on("step", on_step)
    with report.timed("generate"):
        result = sampler.run(prompt, reference, seed=seed, gen_init=gen_init, ground_truth=truth)

    band = [step for step in sampler.step_band if step in result.masks]
    report.artifact("latent", write_tensor(out / "latent.wkt", result.latent))
    write_frames(result.latent, out / "frames")
    report.artifact("frames", out / "frames")
    for step in band:
        write_pgm(result.masks[step], out / "masks", f"step{step:02d}")
    report.artifact("flows", write_flow_csv(out / "flows.csv", {step: result.flows[step].gen_to_ref for step in band}))
    records = [{**record.to_dict(), "config_hash": report.config_hash} for record in result.records]
    report.artifact("log", write_jsonl(out / "log.jsonl", records))

    report.metrics.update(
        {
            "strategy": strategy,
            "init": init,
            "scene_id": scene_id,
            "reference": None if reference_path is None else str(reference_path),
            "prompt": prompt,
            "latent_hash": latent_hash(result.latent),
            "injected_steps": len(result.injected_steps),
            "fallbacks": sum(record.fallback for record in result.records),
            "mean_value_fidelity": result.mean_value_fidelity(),
            "total_leakage": result.total_leakage(),
        }
    )
    if compare_baseline:
        with report.timed("baseline"):
            baseline = baseline_generate(model, prompt, seed, schedule, gen_init).final
        report.metrics["baseline_hash"] = latent_hash(baseline)
        report.metrics["matches_baseline"] = report.metrics["baseline_hash"] == report.metrics["latent_hash"]
    cfg.dump_yaml(out / RUN_CONFIG_NAME)
    report.write(out)
    return report


def cmd_match_eval(
    corpus_dir: str | Path,
    checkpoint: str | Path,
    out: str | Path,
    cfg: RunConfig,
    *,
    scene_id: int = 0,
    layers: Sequence[int] | None = None,
    kinds: Sequence[DescriptorKind | str] | None = None,
    timesteps: Sequence[int] = SWEEP_STEPS,
) -> RunReport:
    """Descriptor sweep on one scene: ``pck.csv`` per cell, ``pck_summary.csv`` with the best layer."""
    out = Path(out)
    model = load_checkpoint(checkpoint).model()
    corpus = load_corpus(corpus_dir)
    _check_corpus(corpus, model)

    report = RunReport.start("match-eval", cfg)
    with report.timed("sweep"):
        sweep = descriptor_sweep(
            corpus.scene(scene_id),
            model,
            layers,
            kinds,
            timesteps,
            schedule=cfg.build_schedule(),
            prompt=cfg.train.prompt,
        )
    report.artifact("pck", sweep.to_csv(out / "pck.csv"))

    summary: list[dict[str, Any]] = []
    for kind in sorted({cell.kind for cell in sweep.cells}, key=list(DescriptorKind).index):
        mean = sweep.mean_pck(kind)
        summary.append({"scope": "mean", "layer": None, "kind": kind.value, "pck": None if math.isnan(mean) else mean})
    layer, kind, score = sweep.best()
    summary.append({"scope": "best", "layer": layer, "kind": kind.value, "pck": score})
    report.artifact(
        "summary",
        write_csv(
            out / "pck_summary.csv",
            ("scope", "layer", "kind", "pck"),
            ((row["scope"], "" if row["layer"] is None else row["layer"], row["kind"], row["pck"]) for row in summary),
        ),
    )
    report.tables["pck_summary"] = summary
    report.metrics.update(
        {
            "scene_id": scene_id,
            "cells": len(sweep),
            "valid_cells": sum(cell.valid for cell in sweep.cells),
            "best_layer": layer,
            "best_kind": kind.value,
            "best_pck": score,
        }
    )
    cfg.dump_yaml(out / RUN_CONFIG_NAME)
    report.write(out)
    return report


def _ablation_row(strategy: str, result: DualBranchResult, band: Iterable[int]) -> dict[str, Any]:
    band = set(band)
    records = [record for record in result.records if record.step in band]
    return {
        "strategy": strategy,
        "value_fidelity": _finite_mean(r.value_fidelity for r in records),
        "output_fidelity": _finite_mean(r.output_fidelity for r in records),
        "leakage": result.total_leakage(),
        "injected_steps": len(result.injected_steps),
        "fallbacks": sum(r.fallback for r in result.records),
        "mean_fg_count": _finite_mean(r.fg_count for r in records),
        "mean_mask_count": _finite_mean(r.mask_count for r in records),
        "latent_hash": latent_hash(result.latent),
        "error": None,
    }


def cmd_ablate(
    corpus_dir: str | Path,
    checkpoint: str | Path,
    out: str | Path,
    cfg: RunConfig,
    *,
    scene_id: int = 0,
    prompt: str | None = None,
    seed: int | None = None,
    strategies: Sequence[str] = ABLATION_STRATEGIES,
    on_strategy: Callable[[str], Any] | None = None,
) -> RunReport:
    """Run every strategy from the same scene-anchored start and compare them.

    Fidelity and mask statistics are averaged over the injection step band;
    a strategy that fails gets a row with its error and the others still run.
    """
    out = Path(out)
    prompt = prompt or cfg.train.prompt
    seed = cfg.seed if seed is None else seed
    model = load_checkpoint(checkpoint).model()
    corpus = load_corpus(corpus_dir)
    _check_corpus(corpus, model)
    schedule = cfg.build_schedule()
    reference = corpus.references(scene_id, dtype=model.dtype)[0]

    report = RunReport.start("ablate", cfg)
    with report.timed("anchor"):
        gen_init, truth = scene_anchor(model, corpus, scene_id, prompt, schedule)

    rows: list[dict[str, Any]] = []
    for strategy in strategies:
        if on_strategy is not None:
            on_strategy(strategy)
        started = time.perf_counter()
        try:
            sampler = DualBranchSampler(model, strategy_config(cfg, strategy), schedule)
            result = sampler.run(prompt, reference, seed=seed, gen_init=gen_init, ground_truth=truth)
            row = _ablation_row(strategy, result, sampler.step_band)
        except WarpKitError as ex:
            logger.warning(f"Ablation strategy {strategy} failed: {ex}")
            row = {name: None for name in ABLATION_HEADER} | {"strategy": strategy, "error": str(ex)}
        except Exception as ex:
            logger.error(f"Ablation strategy {strategy} crashed: {ex}", exc_info=True)
            row = {name: None for name in ABLATION_HEADER} | {"strategy": strategy, "error": repr(ex)}
        elapsed = time.perf_counter() - started
        report.timing[strategy] = elapsed
        rows.append(row)

    report.artifact(
        "ablation",
        write_csv(
            out / "ablation.csv",
            ABLATION_HEADER,
            ([("" if row[name] is None else row[name]) for name in ABLATION_HEADER] for row in rows),
        ),
    )
    report.tables["ablation"] = [{**row, "runtime_s": report.timing[row["strategy"]]} for row in rows]
    report.metrics.update(
        {
            "scene_id": scene_id,
            "prompt": prompt,
            "strategies": len(rows),
            "failed": sum(row["error"] is not None for row in rows),
        }
    )
    cfg.dump_yaml(out / RUN_CONFIG_NAME)
    report.write(out)
    return report
