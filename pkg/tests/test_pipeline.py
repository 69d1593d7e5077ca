from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from warpkit.adaptation import TrainConfig
from warpkit.diffusion import ScheduleConfig
from warpkit.errors import ConfigError, StorageError
from warpkit.masking import MaskConfig
from warpkit.mmdit import ModelConfig, checksum, layer_key
from warpkit.pipeline import (
    ABLATION_STRATEGIES,
    RunConfig,
    RunReport,
    cmd_ablate,
    cmd_adapt,
    cmd_generate,
    cmd_init_model,
    cmd_match_eval,
    generate_corpus,
    load_checkpoint,
    load_corpus,
    read_prompt,
    read_reference,
)
from warpkit.pipeline.outputs import read_csv
from warpkit.scenes import SceneParams, SceneSpec


def _small_config(**train: object) -> RunConfig:
    return RunConfig(
        precision="f64",
        model=ModelConfig(layers=2, dim=32, heads=2, frames=2, grid_h=4, grid_w=4),
        schedule=ScheduleConfig(steps=10),
        train=TrainConfig(**{"steps": 5, "batch": 1, "rank": 4, **train}),
        scene=SceneParams(frames=2, grid_h=4, grid_w=4, sprite_size=2, canonical=(1, 1)),
    )


@pytest.fixture(scope="module")
def cfg() -> RunConfig:
    return _small_config()


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory: pytest.TempPathFactory, cfg: RunConfig) -> Path:
    out = tmp_path_factory.mktemp("corpus")
    generate_corpus(SceneSpec(scenes=2, prompts=2, reference_count=2, params=cfg.scene), out, precision="f64")
    return out


@pytest.fixture(scope="module")
def checkpoint_dir(tmp_path_factory: pytest.TempPathFactory, cfg: RunConfig, corpus_dir: Path) -> Path:
    out = tmp_path_factory.mktemp("adapted")
    cmd_adapt(corpus_dir, cfg, out)
    return out


def test_run_config_yaml_round_trip(tmp_path) -> None:
    cfg = _small_config()
    path = cfg.dump_yaml(tmp_path / "run.yaml")
    assert "schema: wk-1" in path.read_text()
    assert RunConfig.load_yaml(path) == cfg
    assert RunConfig.load_yaml(path).config_hash() == cfg.config_hash()
    assert cfg.config_hash() != _small_config(steps=6).config_hash()


def test_run_config_rejects_bad_documents(tmp_path) -> None:
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"schema": "wk-0"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"schema": "wk-1", "colour": "red"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"schema": "wk-1", "model": {"frames": 2}})
    broken = tmp_path / "broken.yaml"
    broken.write_text("schema: [wk-1\n")
    with pytest.raises(ConfigError):
        RunConfig.load_yaml(broken)
    with pytest.raises(StorageError):
        RunConfig.load_yaml(tmp_path / "missing.yaml")


def test_top_level_mask_block_drives_injection() -> None:
    cfg = RunConfig(mask=MaskConfig(tau_fg=0.5))
    assert cfg.injection_config().mask.tau_fg == 0.5
    assert cfg.injection_config(masking=False).masking is False


def test_full_scale_preset_resolves_the_deployment_bands() -> None:
    cfg = RunConfig.full_scale()
    injection = cfg.injection_config()
    assert injection.layers(cfg.model.layers) == range(20, 30)
    assert injection.steps(cfg.schedule.steps) == range(3, 20)
    assert cfg.train.effective_rank(cfg.model.dim) == 32


def test_corpus_layout(corpus_dir: Path, cfg: RunConfig) -> None:
    rows = read_csv(corpus_dir / "manifest.csv")
    assert len(rows) == 4
    assert [row["scene_id"] for row in rows] == ["0", "0", "1", "1"]
    scene = corpus_dir / "scene_00"
    assert sorted(p.name for p in scene.iterdir()) == [
        "gt_flow.csv",
        "gt_mask",
        "reference_0.wkt",
        "reference_1.wkt",
        "video.wkt",
    ]
    assert len(read_csv(scene / "gt_flow.csv")) == 2 * 4 * 4
    assert len(list((scene / "gt_mask").glob("mask_f*.pgm"))) == 2
    corpus = load_corpus(corpus_dir)
    assert corpus.scene_ids == [0, 1]
    assert corpus.video(0).shape == cfg.model.latent_shape()
    assert np.array_equal(corpus.video(1).data, corpus.scene(1).latent(np.float64).data)
    assert len(corpus.references(0)) == 2
    with pytest.raises(ConfigError):
        corpus.scene(5)


def test_corpus_bytes_are_reproducible(tmp_path, corpus_dir: Path, cfg: RunConfig) -> None:
    generate_corpus(SceneSpec(scenes=2, prompts=2, reference_count=2, params=cfg.scene), tmp_path, precision="f64")
    produced = sorted(p.relative_to(corpus_dir) for p in corpus_dir.rglob("*") if p.is_file())
    assert produced == sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
    for relative in produced:
        assert (corpus_dir / relative).read_bytes() == (tmp_path / relative).read_bytes()


def test_missing_corpus_is_a_storage_error(tmp_path) -> None:
    with pytest.raises(StorageError):
        load_corpus(tmp_path)


def test_init_model_writes_a_loadable_checkpoint(tmp_path, cfg: RunConfig) -> None:
    report = cmd_init_model(cfg, tmp_path)
    checkpoint = load_checkpoint(tmp_path)
    assert not checkpoint.adapted
    assert checksum(checkpoint.base.weights) == report.metrics["weights_checksum"]
    assert RunConfig.load_yaml(tmp_path / "run.yaml") == cfg
    assert RunReport.load(tmp_path).command == "init-model"
    with pytest.raises(StorageError):
        load_checkpoint(tmp_path / "nowhere")


def test_adapt_writes_losses_and_keeps_queries(checkpoint_dir: Path, cfg: RunConfig) -> None:
    rows = read_csv(checkpoint_dir / "loss.csv")
    assert [row["step"] for row in rows] == ["0", "1", "2", "3", "4"]
    report = RunReport.load(checkpoint_dir)
    assert report.metrics["frozen_weights_intact"] is True
    assert report.losses == [float(row["loss"]) for row in rows]
    checkpoint = load_checkpoint(checkpoint_dir)
    assert checkpoint.adapted
    assert checkpoint.manifest["config_hash"] == cfg.config_hash()
    names = [layer_key(layer, "q") for layer in range(cfg.model.layers)]
    assert checksum(checkpoint.base.weights, names) == report.metrics["query_checksum"]


def test_adapt_with_zero_steps_leaves_the_model_unchanged(tmp_path, corpus_dir: Path) -> None:
    cfg = _small_config(steps=0)
    report = cmd_adapt(corpus_dir, cfg, tmp_path)
    assert report.metrics["final_loss"] is None
    assert read_csv(tmp_path / "loss.csv") == []
    checkpoint = load_checkpoint(tmp_path)
    assert all(not adapter.up.data.any() for adapter in checkpoint.adapters)


def test_adapt_rejects_a_mismatched_corpus(tmp_path, corpus_dir: Path) -> None:
    cfg = RunConfig(precision="f64", train=TrainConfig(steps=1, batch=1, rank=4))
    with pytest.raises(ConfigError):
        cmd_adapt(corpus_dir, cfg, tmp_path)


def test_generate_without_injection_matches_the_baseline(
    tmp_path, checkpoint_dir: Path, corpus_dir: Path, cfg: RunConfig
) -> None:
    report = cmd_generate(
        checkpoint_dir, corpus_dir, 0, cfg.train.prompt, "none", 3, tmp_path, cfg, compare_baseline=True
    )
    assert report.metrics["matches_baseline"] is True
    assert report.metrics["injected_steps"] == 0
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == cfg.schedule.steps
    assert [json.loads(line)["step"] for line in lines] == list(range(cfg.schedule.steps))
    assert all(json.loads(line)["config_hash"] == cfg.config_hash() for line in lines)
    flows = read_csv(tmp_path / "flows.csv")
    assert sorted({row["step"] for row in flows}) == ["1", "2", "3"]
    assert len(flows) == 3 * 2 * 4 * 4
    assert len(list((tmp_path / "frames").glob("*.ppm"))) == 2
    assert (tmp_path / "latent.wkt").is_file()


def test_generate_is_reproducible(tmp_path, checkpoint_dir: Path, corpus_dir: Path, cfg: RunConfig) -> None:
    hashes = []
    for name in ("first", "second"):
        report = cmd_generate(
            checkpoint_dir, corpus_dir, 1, cfg.train.prompt, "value_warp", 5, tmp_path / name, cfg, init="scene"
        )
        hashes.append(report.metrics["latent_hash"])
        assert report.metrics["total_leakage"] == 0
    assert hashes[0] == hashes[1]
    first = (tmp_path / "first" / "log.jsonl").read_bytes()
    assert first == (tmp_path / "second" / "log.jsonl").read_bytes()
    with pytest.raises(ConfigError):
        cmd_generate(checkpoint_dir, corpus_dir, 0, cfg.train.prompt, "shuffle", 5, tmp_path / "bad", cfg)


def test_match_eval_writes_every_cell(tmp_path, checkpoint_dir: Path, corpus_dir: Path) -> None:
    cfg = _small_config().model_copy(update={"schedule": ScheduleConfig()})
    report = cmd_match_eval(corpus_dir, checkpoint_dir, tmp_path, cfg)
    rows = read_csv(tmp_path / "pck.csv")
    assert len(rows) == 2 * 3 * 4
    assert {row["timestep"] for row in rows} == {"10", "20", "30", "40"}
    summary = read_csv(tmp_path / "pck_summary.csv")
    assert [row["scope"] for row in summary] == ["mean", "mean", "mean", "best"]
    assert report.metrics["cells"] == 24
    assert report.metrics["valid_cells"] == 24


def test_ablation_covers_every_strategy(tmp_path, checkpoint_dir: Path, corpus_dir: Path, cfg: RunConfig) -> None:
    report = cmd_ablate(corpus_dir, checkpoint_dir, tmp_path, cfg)
    rows = read_csv(tmp_path / "ablation.csv")
    assert [row["strategy"] for row in rows] == list(ABLATION_STRATEGIES)
    assert "runtime_s" not in rows[0]
    assert report.metrics["failed"] == 0
    by_name = {row["strategy"]: row for row in rows}
    assert by_name["none"]["injected_steps"] == "0"
    assert by_name["value_warp"]["leakage"] == "0"
    assert set(report.timing) >= set(ABLATION_STRATEGIES)


def test_reference_pictures_fill_the_latent_channels(tmp_path) -> None:
    path = tmp_path / "red.ppm"
    Image.new("RGB", (2, 2), (255, 0, 0)).save(path, format="PPM")
    reference = read_reference(path, (4, 4, 4), np.float64)
    assert reference.shape == (1, 4, 4, 4)
    data = reference.data[0]
    assert np.all(data[..., 0] == 1.0)
    assert np.all(data[..., 1:3] == -1.0)
    assert np.array_equal(data[..., 3], data[..., 0])
    with pytest.raises(StorageError):
        read_reference(tmp_path / "missing.ppm", (4, 4, 4))


def test_prompts_come_from_text_or_file(tmp_path) -> None:
    assert read_prompt("a photo of <sks>") == "a photo of <sks>"
    path = tmp_path / "prompt.txt"
    path.write_text("\n<sks> on a beach\nignored\n")
    assert read_prompt(str(path)) == "<sks> on a beach"
    path.write_text("\n\n")
    with pytest.raises(ConfigError):
        read_prompt(str(path))


def test_generate_needs_a_corpus_or_a_reference(tmp_path, checkpoint_dir: Path, cfg: RunConfig) -> None:
    with pytest.raises(ConfigError):
        cmd_generate(checkpoint_dir, None, 0, cfg.train.prompt, "none", 0, tmp_path, cfg)
    reference = tmp_path / "reference.ppm"
    Image.new("RGB", (8, 8)).save(reference, format="PPM")
    with pytest.raises(ConfigError):
        cmd_generate(
            checkpoint_dir, None, 0, cfg.train.prompt, "none", 0, tmp_path, cfg, init="scene", reference_path=reference
        )
