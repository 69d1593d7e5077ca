from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from warpkit.adaptation import TrainConfig
from warpkit.cli import cli, handle_errors
from warpkit.diffusion import ScheduleConfig
from warpkit.errors import (
    BranchError,
    ConfigError,
    InputError,
    InvariantError,
    NumericError,
    ShapeError,
    StorageError,
    TraceError,
    WarpKitError,
)
from warpkit.mmdit import ModelConfig
from warpkit.numerics import write_tensor
from warpkit.pipeline import RunConfig, RunReport, load_checkpoint, load_corpus, write_frames
from warpkit.scenes import SceneParams, SceneSpec, dump_scene_spec, load_scene_spec
from warpkit.version import __version__

SCENE = SceneParams(frames=2, grid_h=4, grid_w=4, sprite_size=2, canonical=(1, 1))


def _write_small_config(path: Path) -> Path:
    cfg = RunConfig(
        precision="f64",
        model=ModelConfig(layers=2, dim=32, heads=2, frames=2, grid_h=4, grid_w=4),
        schedule=ScheduleConfig(steps=5),
        train=TrainConfig(steps=2, batch=1, rank=4),
        scene=SCENE,
    )
    return cfg.dump_yaml(path)


def test_version() -> None:
    result = CliRunner().invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_bare_invocation_prints_the_welcome() -> None:
    result = CliRunner().invoke(cli, [])
    assert result.exit_code == 0
    assert "warpkit" in result.output


def test_config_command_writes_defaults(tmp_path) -> None:
    out = tmp_path / "run.yaml"
    result = CliRunner().invoke(cli, ["config", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert RunConfig.load_yaml(out) == RunConfig()
    assert RunConfig.load_yaml(out).model.layers == 8
    full = tmp_path / "full.yaml"
    assert CliRunner().invoke(cli, ["config", "--out", str(full), "--full-scale"]).exit_code == 0
    assert RunConfig.load_yaml(full).model.layers == 42


def test_gen_scene_needs_an_output() -> None:
    result = CliRunner().invoke(cli, ["gen-scene"])
    assert result.exit_code == 2


def test_gen_scene_writes_the_default_spec(tmp_path) -> None:
    path = tmp_path / "scene.env"
    result = CliRunner().invoke(cli, ["gen-scene", "--write-spec", str(path)])
    assert result.exit_code == 0, result.output
    assert load_scene_spec(path) == SceneSpec()


def test_bad_config_exits_with_config_code(tmp_path) -> None:
    config = tmp_path / "old.yaml"
    config.write_text("schema: wk-0\n")
    result = CliRunner().invoke(cli, ["init-model", "--config", str(config), "--out", str(tmp_path / "ckpt")])
    assert result.exit_code == 2


def test_unreadable_corpus_exits_with_storage_code(tmp_path) -> None:
    empty = tmp_path / "empty"
    empty.mkdir()
    result = CliRunner().invoke(cli, ["adapt", "--corpus", str(empty), "--out", str(tmp_path / "out")])
    assert result.exit_code == 4


def test_small_session_end_to_end(tmp_path) -> None:
    runner = CliRunner()
    config = str(_write_small_config(tmp_path / "run.yaml"))
    spec = dump_scene_spec(SceneSpec(scenes=1, prompts=1, reference_count=1, params=SCENE), tmp_path / "scene.env")
    corpus, base, adapted, gen = (str(tmp_path / name) for name in ("corpus", "base", "adapted", "gen"))

    result = runner.invoke(cli, ["gen-scene", "--spec", str(spec), "--out", corpus, "--precision", "f64"])
    assert result.exit_code == 0, result.output
    assert load_corpus(corpus).scene_ids == [0]

    result = runner.invoke(cli, ["init-model", "--config", config, "--seed", "4", "--out", base])
    assert result.exit_code == 0, result.output
    assert not load_checkpoint(base).adapted

    args = ["adapt", "--corpus", corpus, "--checkpoint", base, "--config", config, "--out", adapted]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert load_checkpoint(adapted).adapted
    assert len(RunReport.load(adapted).losses) == 2

    args = ["generate", "--checkpoint", adapted, "--corpus", corpus, "--config", config, "--out", gen]
    result = runner.invoke(cli, [*args, "--strategy", "none", "--compare-baseline"])
    assert result.exit_code == 0, result.output
    assert RunReport.load(gen).metrics["matches_baseline"] is True


@pytest.fixture(scope="module")
def adapted_session(tmp_path_factory: pytest.TempPathFactory) -> dict[str, str]:
    root = tmp_path_factory.mktemp("session")
    runner = CliRunner()
    paths = {
        "config": str(_write_small_config(root / "run.yaml")),
        "corpus": str(root / "corpus"),
        "adapted": str(root / "adapted"),
    }
    spec = dump_scene_spec(SceneSpec(scenes=1, prompts=1, reference_count=1, params=SCENE), root / "scene.env")
    result = runner.invoke(cli, ["gen-scene", "--spec", str(spec), "--out", paths["corpus"], "--precision", "f64"])
    assert result.exit_code == 0, result.output
    args = ["adapt", "--refs", paths["corpus"], "--out", paths["adapted"], "--config", paths["config"], "--seed", "3"]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    return paths


def test_adapt_takes_refs_and_seed(adapted_session: dict[str, str]) -> None:
    cfg = RunConfig.load_yaml(Path(adapted_session["adapted"]) / "run.yaml")
    assert cfg.seed == 3
    assert cfg.train.seed == 3
    assert load_checkpoint(adapted_session["adapted"]).adapted


def test_generate_takes_ckpt_ref_image_and_prompt_file(tmp_path, adapted_session: dict[str, str]) -> None:
    reference = load_corpus(adapted_session["corpus"]).references(0)[0]
    image = write_frames(reference, tmp_path / "ref")[0]
    prompt = tmp_path / "prompt.txt"
    prompt.write_text("\n  a photo of <sks>  \n")
    out = tmp_path / "gen"
    args = ["generate", "--ckpt", adapted_session["adapted"], "--ref", str(image), "--prompt", str(prompt)]
    args += ["--strategy", "value_warp", "--seed", "2", "--out", str(out), "--config", adapted_session["config"]]
    result = CliRunner().invoke(cli, args)
    assert result.exit_code == 0, result.output
    metrics = RunReport.load(out).metrics
    assert metrics["prompt"] == "a photo of <sks>"
    assert metrics["reference"] == str(image)


def test_reference_latent_file_matches_the_corpus_reference(tmp_path, adapted_session: dict[str, str]) -> None:
    runner = CliRunner()
    common = ["generate", "--ckpt", adapted_session["adapted"], "--seed", "2", "--config", adapted_session["config"]]
    stored = str(Path(adapted_session["corpus"]) / "scene_00" / "reference_0.wkt")
    result = runner.invoke(cli, [*common, "--corpus", adapted_session["corpus"], "--out", str(tmp_path / "a")])
    assert result.exit_code == 0, result.output
    result = runner.invoke(cli, [*common, "--ref", stored, "--out", str(tmp_path / "b")])
    assert result.exit_code == 0, result.output
    hashes = [RunReport.load(tmp_path / name).metrics["latent_hash"] for name in ("a", "b")]
    assert hashes[0] == hashes[1]


def test_generate_without_any_reference_exits_with_config_code(tmp_path, adapted_session: dict[str, str]) -> None:
    args = ["generate", "--ckpt", adapted_session["adapted"], "--out", str(tmp_path / "gen")]
    result = CliRunner().invoke(cli, [*args, "--config", adapted_session["config"]])
    assert result.exit_code == 2


def test_misshaped_reference_latent_exits_with_config_code(tmp_path, adapted_session: dict[str, str]) -> None:
    stored = write_tensor(tmp_path / "wide.wkt", np.zeros((1, 4, 6, 4)))
    args = ["generate", "--ckpt", adapted_session["adapted"], "--ref", str(stored), "--out", str(tmp_path / "gen")]
    result = CliRunner().invoke(cli, [*args, "--config", adapted_session["config"]])
    assert result.exit_code == 2


@pytest.mark.parametrize(
    ("error", "code"),
    [
        (ConfigError("bad"), 2),
        (InputError("bad"), 2),
        (NumericError("nan"), 3),
        (StorageError("gone"), 4),
        (ShapeError("mismatch"), 1),
        (BranchError("mismatch"), 1),
        (TraceError("missing"), 1),
    ],
)
def test_errors_exit_with_their_family_code(error: WarpKitError, code: int) -> None:
    def failing() -> None:
        raise error

    with pytest.raises(SystemExit) as exited:
        handle_errors(failing)()
    assert exited.value.code == code
    assert isinstance(error, InvariantError) == (code == 1)
