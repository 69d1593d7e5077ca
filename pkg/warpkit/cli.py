from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import click
from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table
from rich.traceback import install as install_rich_traceback

from .errors import ConfigError, WarpKitError
from .injection import StepRecord, StrategyName
from .pipeline import (
    ABLATION_STRATEGIES,
    RunConfig,
    cmd_ablate,
    cmd_adapt,
    cmd_config,
    cmd_gen_scene,
    cmd_generate,
    cmd_init_model,
    cmd_match_eval,
    read_prompt,
)
from .scenes import SceneSpec, dump_scene_spec, load_scene_spec
from .version import __version__

install_rich_traceback(show_locals=False)

console = Console()

LOG_LEVEL_ENV = "WARPKIT_LOG_LEVEL"
STRATEGY_CHOICES = [strategy.value for strategy in StrategyName] + ["value_warp_unmasked"]


def print_welcome() -> None:
    console.print(
        Panel.fit(
            "[bold cyan]warpkit[/bold cyan] - coarse-to-fine video personalization at desk scale\n\n"
            "[white]Typical session:[/white]\n"
            "• [green]warpkit gen-scene --out corpus[/green] - synthetic scenes with ground truth\n"
            "• [green]warpkit init-model --init content_identity --out ckpt[/green]\n"
            "• [green]warpkit adapt --corpus corpus --checkpoint ckpt --out adapted[/green]\n"
            "• [green]warpkit generate --checkpoint adapted --corpus corpus --out gen[/green]\n"
            "• [green]warpkit match-eval[/green], [green]warpkit ablate[/green] - evaluation reports\n\n"
            "[yellow]Note:[/yellow] run configs use schema wk-1; `warpkit config --out run.yaml` writes the defaults.",
            title=f"warpkit {__version__}",
            border_style="cyan",
        )
    )


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, rich_tracebacks=True)],
        force=True,
    )


def load_run_config(path: str | None, precision: str | None = None) -> RunConfig:
    cfg = RunConfig() if path is None else RunConfig.load_yaml(path)
    if precision is not None:
        cfg = cfg.model_copy(update={"precision": precision})
    return cfg


def handle_errors(command: Callable[..., Any]) -> Callable[..., Any]:
    """Print warpkit errors in one line and exit with their code."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except WarpKitError as e:
            console.print(f"[red]✗[/red] Error: {e}")
            sys.exit(e.exit_code)
        except KeyboardInterrupt:
            console.print("\n[yellow]Operation cancelled by user[/yellow]")
            sys.exit(130)

    return wrapper


def _progress(*, bar: bool = True) -> Progress:
    columns: list[Any] = [SpinnerColumn(), TextColumn("[progress.description]{task.description}")]
    if bar:
        columns.append(BarColumn())
    columns.append(TimeElapsedColumn())
    return Progress(*columns, console=console, transient=True)


config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False), help="Run config (YAML, schema wk-1)."
)
precision_option = click.option("--precision", type=click.Choice(["f32", "f64"]), help="Override the config precision.")


@click.group(invoke_without_command=True)
@click.option(
    "--log-level",
    envvar=LOG_LEVEL_ENV,
    default="WARNING",
    show_default=True,
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    help=f"Library log level (env {LOG_LEVEL_ENV}).",
)
@click.version_option(__version__, prog_name="warpkit")
@click.pass_context
def cli(ctx: click.Context, log_level: str) -> None:
    """warpkit - reference-guided video personalization with attention value warping"""
    load_dotenv()
    configure_logging(log_level)
    if ctx.invoked_subcommand is None:
        print_welcome()


@cli.command("config")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Where to write the YAML config.")
@click.option("--full-scale", is_flag=True, help="Write the 42-layer / 25-frame deployment preset.")
@handle_errors
def config_command(out: str, full_scale: bool) -> None:
    """Write a default run config"""
    path = cmd_config(out, RunConfig.full_scale() if full_scale else RunConfig())
    console.print(f"[cyan]✓[/cyan] Config written to [cyan]{path}[/cyan]")


@cli.command("init-model")
@config_option
@precision_option
@click.option("--init", "init", type=click.Choice(["random", "content_identity"]), help="Weight initialization.")
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Checkpoint directory.")
@handle_errors
def init_model(config_path: str | None, precision: str | None, init: str | None, seed: int | None, out: str) -> None:
    """Initialize base weights and write them as a checkpoint"""
    cfg = load_run_config(config_path, precision)
    if init is not None:
        cfg = cfg.model_copy(update={"model": cfg.model.model_copy(update={"init": init})})
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    report = cmd_init_model(cfg, out)
    console.print(
        f"[cyan]✓[/cyan] {cfg.model.init} model ({cfg.model.layers} layers, {cfg.precision}) "
        f"written to [cyan]{out}[/cyan]\n  checksum {report.metrics['weights_checksum'][:16]}"
    )


@cli.command("gen-scene")
@click.option("--spec", "spec_path", type=click.Path(dir_okay=False), help="Scene spec (key=value text).")
@click.option("--out", type=click.Path(file_okay=False), help="Corpus directory.")
@click.option("--write-spec", type=click.Path(dir_okay=False), help="Write the (default or loaded) spec here.")
@precision_option
@handle_errors
def gen_scene(spec_path: str | None, out: str | None, write_spec: str | None, precision: str | None) -> None:
    """Generate the synthetic scene corpus"""
    if out is None and write_spec is None:
        raise ConfigError("Nothing to do: pass --out to generate a corpus and/or --write-spec to write a spec file.")
    spec = SceneSpec() if spec_path is None else load_scene_spec(spec_path)
    if write_spec is not None:
        dump_scene_spec(spec, write_spec)
        console.print(f"[cyan]✓[/cyan] Scene spec written to [cyan]{write_spec}[/cyan]")
    if out is None:
        return
    with _progress(bar=False) as progress:
        progress.add_task(f"Rendering {spec.scenes} scenes...", total=None)
        corpus = cmd_gen_scene(spec, out, precision=precision)
    console.print(
        f"[cyan]✓[/cyan] Corpus with {len(corpus.scene_ids)} scenes and {len(corpus.entries)} prompts "
        f"written to [cyan]{out}[/cyan]"
    )


@cli.command()
@click.option(
    "--corpus",
    "--refs",
    "corpus",
    required=True,
    type=click.Path(exists=True, file_okay=False),
    help="Corpus directory holding the reference images.",
)
@click.option("--checkpoint", type=click.Path(exists=True, file_okay=False), help="Base checkpoint (default: init).")
@click.option("--scene", "scene_id", default=0, show_default=True, help="Scene whose references are used.")
@click.option("--steps", type=int, help="Override the number of training steps.")
@click.option("--seed", type=int, help="Override the run and training seeds.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output checkpoint directory.")
@config_option
@precision_option
@handle_errors
def adapt(
    corpus: str,
    checkpoint: str | None,
    scene_id: int,
    steps: int | None,
    seed: int | None,
    out: str,
    config_path: str | None,
    precision: str | None,
) -> None:
    """Coarse adaptation: K/V/O adapters and the subject token on reference images"""
    cfg = load_run_config(config_path, precision)
    if steps is not None:
        cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"steps": steps})})
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed, "train": cfg.train.model_copy(update={"seed": seed})})
    with _progress() as progress:
        task = progress.add_task("Adapting...", total=cfg.train.steps)

        def on_step(step: int, loss: float) -> None:
            progress.update(task, advance=1, description=f"Adapting (loss {loss:.5f})")

        report = cmd_adapt(corpus, cfg, out, checkpoint=checkpoint, scene_id=scene_id, on_step=on_step)
    final = report.metrics["final_loss"]
    console.print(
        Panel.fit(
            f"[bold cyan]Adaptation complete[/bold cyan]\n"
            f"Steps: {cfg.train.steps}   final loss: {'n/a' if final is None else f'{final:.6f}'}\n"
            f"Frozen weights intact: {report.metrics['frozen_weights_intact']}\n"
            f"Checkpoint: [cyan]{out}[/cyan]",
            border_style="green",
        )
    )


@cli.command()
@click.option("--checkpoint", "--ckpt", "checkpoint", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--corpus", type=click.Path(exists=True, file_okay=False), help="Corpus: reference source, scene anchor.")
@click.option("--scene", "scene_id", default=0, show_default=True, help="Scene providing the reference image.")
@click.option(
    "--ref",
    "ref_path",
    type=click.Path(exists=True, dir_okay=False),
    help="Reference image: a picture (PPM, PNG) or a .wkt latent. Overrides the corpus reference.",
)
@click.option(
    "--prompt",
    default="a photo of <sks>",
    show_default=True,
    help="Prompt text, or a file whose first non-empty line is the prompt.",
)
@click.option("--strategy", type=click.Choice(STRATEGY_CHOICES), default="value_warp", show_default=True)
@click.option("--seed", type=int, help="Noise seed (default: config seed).")
@click.option("--init", "init", type=click.Choice(["noise", "scene"]), default="noise", show_default=True)
@click.option("--compare-baseline", is_flag=True, help="Also run single-branch sampling and compare hashes.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@config_option
@precision_option
@handle_errors
def generate(
    checkpoint: str,
    corpus: str | None,
    scene_id: int,
    ref_path: str | None,
    prompt: str,
    strategy: str,
    seed: int | None,
    init: str,
    compare_baseline: bool,
    out: str,
    config_path: str | None,
    precision: str | None,
) -> None:
    """Dual-branch generation with reference appearance injection"""
    cfg = load_run_config(config_path, precision)
    seed = cfg.seed if seed is None else seed
    prompt = read_prompt(prompt)
    with _progress() as progress:
        task = progress.add_task(f"Generating ({strategy})...", total=cfg.schedule.steps)

        def on_step(record: StepRecord) -> None:
            progress.update(task, advance=1)

        report = cmd_generate(
            checkpoint,
            corpus,
            scene_id,
            prompt,
            strategy,
            seed,
            out,
            cfg,
            init=init,
            reference_path=ref_path,
            compare_baseline=compare_baseline,
            on_step=on_step,
        )
    metrics = report.metrics
    lines = [
        "[bold cyan]Generation complete[/bold cyan]",
        f"Injected steps: {metrics['injected_steps']}   fallbacks: {metrics['fallbacks']}",
        f"Latent hash: {metrics['latent_hash'][:16]}",
    ]
    if metrics["mean_value_fidelity"] is not None:
        lines.append(f"Mean value fidelity: {metrics['mean_value_fidelity']:.4f}")
    if compare_baseline:
        lines.append(f"Matches baseline: {metrics['matches_baseline']}")
    lines.append(f"Outputs: [cyan]{out}[/cyan]")
    console.print(Panel.fit("\n".join(lines), border_style="green"))


@cli.command("match-eval")
@click.option("--corpus", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--scene", "scene_id", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@config_option
@precision_option
@handle_errors
def match_eval(
    corpus: str, checkpoint: str, scene_id: int, out: str, config_path: str | None, precision: str | None
) -> None:
    """PCK of every layer, descriptor kind and timestep"""
    cfg = load_run_config(config_path, precision)
    with _progress(bar=False) as progress:
        progress.add_task("Sweeping descriptors...", total=None)
        report = cmd_match_eval(corpus, checkpoint, out, cfg, scene_id=scene_id)

    table = Table(title="Correspondence summary")
    for column in ("scope", "layer", "kind", "PCK@0.05"):
        table.add_column(column)
    for row in report.tables["pck_summary"]:
        pck = row["pck"]
        layer = "" if row["layer"] is None else str(row["layer"])
        table.add_row(row["scope"], layer, row["kind"], "nan" if pck is None else f"{pck:.3f}")
    console.print(table)
    console.print(f"[cyan]✓[/cyan] {report.metrics['cells']} cells written to [cyan]{Path(out) / 'pck.csv'}[/cyan]")


@cli.command()
@click.option("--corpus", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--scene", "scene_id", default=0, show_default=True)
@click.option("--prompt", help="Generation prompt (default: the training prompt).")
@click.option("--seed", type=int)
@click.option(
    "--strategy",
    "strategies",
    multiple=True,
    type=click.Choice(STRATEGY_CHOICES),
    help="Restrict to these strategies (repeatable).",
)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@config_option
@precision_option
@handle_errors
def ablate(
    corpus: str,
    checkpoint: str,
    scene_id: int,
    prompt: str | None,
    seed: int | None,
    strategies: tuple[str, ...],
    out: str,
    config_path: str | None,
    precision: str | None,
) -> None:
    """Compare injection strategies on a scene with ground truth"""
    cfg = load_run_config(config_path, precision)
    strategies = strategies or ABLATION_STRATEGIES
    with _progress() as progress:
        task = progress.add_task("Ablating...", total=len(strategies))

        def on_strategy(name: str) -> None:
            progress.update(task, completed=strategies.index(name), description=f"Ablating [cyan]{name}[/cyan]...")

        report = cmd_ablate(
            corpus,
            checkpoint,
            out,
            cfg,
            scene_id=scene_id,
            prompt=prompt,
            seed=seed,
            strategies=strategies,
            on_strategy=on_strategy,
        )
        progress.update(task, completed=len(strategies))

    table = Table(title="Strategy ablation")
    for column in ("strategy", "value fidelity", "leakage", "injected", "mask", "runtime (s)", "error"):
        table.add_column(column)
    for row in report.tables["ablation"]:
        fidelity = row["value_fidelity"]
        mask = row["mean_mask_count"]
        table.add_row(
            row["strategy"],
            "-" if fidelity is None else f"{fidelity:.4f}",
            "-" if row["leakage"] is None else str(row["leakage"]),
            "-" if row["injected_steps"] is None else str(row["injected_steps"]),
            "-" if mask is None else f"{mask:.1f}",
            f"{row['runtime_s']:.2f}",
            row["error"] or "",
        )
    console.print(table)
    console.print(f"[cyan]✓[/cyan] Report written to [cyan]{out}[/cyan]")


def main() -> None:
    """Main entry point for the CLI."""
    try:
        cli.main(standalone_mode=False)
    except click.Abort:
        console.print("\n[yellow]Operation cancelled by user[/yellow]")
        sys.exit(130)
    except click.ClickException as e:
        e.show()
        sys.exit(e.exit_code)
    except WarpKitError as e:
        console.print(f"\n[red]✗[/red] Error: {e}")
        sys.exit(e.exit_code)
    except KeyboardInterrupt:
        console.print("\n[yellow]Operation cancelled by user[/yellow]")
        sys.exit(130)
    except Exception as e:
        console.print(f"\n[red]✗[/red] Unexpected error: {e}")
        sys.exit(1)
