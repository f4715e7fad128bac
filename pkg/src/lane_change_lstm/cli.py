"""Command-line interface for the lane change prediction pipeline."""

import sys
import logging
from typing import List, Optional, Sequence

import click
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import setup_logging
from .errors import InputError
from .evaluation import DEFAULT_THRESHOLD, format_report
from .events import DEFAULT_HORIZON
from .experiments import best_value
from .pipeline import Pipeline
from .synthgen import SIGNAL_MODES

# Create logger for this module
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2

SEED_HELP = "Seed for every random choice of this command; identical seeds give identical files."
JOBS_HELP = "Worker processes for parallel stages (results do not depend on it)."
TIMING_HELP = "Add wall-clock seconds columns to CSV outputs (makes them run-dependent)."

console = Console()


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="lane-change-lstm")
@click.option("-v", "--verbose", count=True, help="More log output (DEBUG).")
@click.option("-q", "--quiet", count=True, help="Less log output (WARNING and above).")
@click.pass_context
def cli(ctx: click.Context, verbose: int, quiet: int) -> None:
    """Lane change prediction from surrounding-vehicle trajectories.

    Logs go to stderr; results go to the files named by each command.
    """
    setup_logging(verbose - quiet)
    ctx.ensure_object(dict)


@cli.command()
@click.argument("directory", type=click.Path(file_okay=False))
@click.option("--strict", is_flag=True, help="Treat frame gaps as parse errors.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help=JOBS_HELP)
def validate(directory: str, strict: bool, jobs: int) -> None:
    """Parse every *_tracks.csv in DIRECTORY and report invariant violations.

    Exits 1 when any recording has violations.
    """
    reports = Pipeline(jobs=jobs).validate(directory, strict=strict)
    table = Table(title="Validation")
    table.add_column("recording")
    table.add_column("tracks", justify="right")
    table.add_column("violations", justify="right")
    for report in reports:
        table.add_row(report.recording_id, str(report.track_count), str(len(report.violations)))
    console.print(table)
    invalid = [r for r in reports if not r.is_valid]
    for report in invalid:
        for violation in report.violations:
            click.echo(
                f"{report.recording_id}\tvehicle {violation.vehicle_id}\tframe {violation.frame}"
                f"\t{violation.kind}\t{violation.detail}"
            )
    if invalid:
        raise InputError(f"{len(invalid)} recording(s) have violations")


@cli.command()
@click.argument("directory", type=click.Path(file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Dataset directory to write.")
@click.option("--n", type=click.IntRange(min=1), default=5, show_default=True, help="Frames per window.")
@click.option("--seed", type=int, default=0, show_default=True, help=SEED_HELP)
@click.option("--split-fraction", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.8, show_default=True, help="Share of windows in the train split.")
@click.option("--horizon", type=click.IntRange(min=0), default=DEFAULT_HORIZON, show_default=True, help="Lane-keep windows need this many change-free frames after them.")
@click.option("--stride", type=click.IntRange(min=1), default=1, show_default=True, help="Frame step inside a window.")
@click.option("--strict", is_flag=True, help="Treat frame gaps as parse errors.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help=JOBS_HELP)
def extract(
    directory: str,
    out_dir: str,
    n: int,
    seed: int,
    split_fraction: float,
    horizon: int,
    stride: int,
    strict: bool,
    jobs: int,
) -> None:
    """Build a balanced, vehicle-disjoint LC/LK dataset from DIRECTORY."""
    split = Pipeline(jobs=jobs).extract(
        directory,
        out_dir,
        n=n,
        seed=seed,
        split_fraction=split_fraction,
        horizon=horizon,
        stride=stride,
        strict=strict,
    )
    counts = split.label_counts()
    click.echo(
        f"train: {counts['train'][1]} LC / {counts['train'][0]} LK, "
        f"test: {counts['test'][1]} LC / {counts['test'][0]} LK"
    )


@cli.command("train")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(file_okay=False), help="Directory written by `extract`.")
@click.option("--out", "run_dir", required=True, type=click.Path(file_okay=False), help="Run directory for model.json, model.bin and history.csv.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON file with 'train' and 'model' sections.")
@click.option("--seed", type=int, default=None, help=SEED_HELP)
@click.option("--epochs", type=click.IntRange(min=0), default=None, help="Training epochs (default 100).")
@click.option("--batch-size", type=click.IntRange(min=1), default=None, help="Windows per update (default 32).")
@click.option("--learning-rate", type=float, default=None, help="RMSprop learning rate (default 1e-3).")
@click.option("--dropout", "dropout_rate", type=float, default=None, help="Dropout rate (default 0.2).")
@click.option("--cells", type=click.IntRange(min=1), default=None, help="LSTM cells per layer (default 128).")
@click.option("--preset", type=click.Choice(["acc", "cacc", "following", "preceding_alongside"]), default=None, help="Feature preset (default cacc).")
@click.option("--record-timing", is_flag=True, help=TIMING_HELP)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help=JOBS_HELP)
def train_command(
    dataset_dir: str,
    run_dir: str,
    config_path: Optional[str],
    seed: Optional[int],
    epochs: Optional[int],
    batch_size: Optional[int],
    learning_rate: Optional[float],
    dropout_rate: Optional[float],
    cells: Optional[int],
    preset: Optional[str],
    record_timing: bool,
    jobs: int,
) -> None:
    """Train the two-layer LSTM and write a checkpoint.

    Settings resolve as flag > config file > default; the resolution is logged.
    """
    pipeline = Pipeline(jobs=jobs, record_timing=record_timing)
    settings = pipeline.resolve_train_settings(
        config_path,
        train_flags={
            "seed": seed,
            "epochs": epochs,
            "batch_size": batch_size,
            "learning_rate": learning_rate,
            "dropout_rate": dropout_rate,
        },
        model_flags={"cells": cells, "features": {"preset": preset} if preset else None},
    )
    outcome = pipeline.train(
        dataset_dir, run_dir, settings["train"], settings["features"], cells=settings["cells"]
    )
    click.echo(f"checkpoint: {outcome.run_dir}")


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(), help="Run directory or its model.json.")
@click.option("--data", "dataset_dir", required=True, type=click.Path(file_okay=False), help="Directory written by `extract`.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Metrics CSV to write.")
@click.option("--split", "split_name", type=click.Choice(["test", "train"]), default="test", show_default=True)
@click.option("--threshold", type=click.FloatRange(0, 1), default=DEFAULT_THRESHOLD, show_default=True, help="Probability >= threshold predicts a lane change (ties count as LC).")
@click.option("--float32", is_flag=True, help="Run inference in float32.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help=JOBS_HELP)
def evaluate(
    checkpoint_path: str,
    dataset_dir: str,
    out_path: str,
    split_name: str,
    threshold: float,
    float32: bool,
    jobs: int,
) -> None:
    """Report accuracy / precision / recall of a checkpoint on a dataset split.

    Undefined metrics (zero denominators) are written as n/a.
    """
    report = Pipeline(jobs=jobs).evaluate(
        checkpoint_path, dataset_dir, out_path, split_name, threshold, float32
    )
    click.echo(format_report(report))


@cli.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(dir_okay=False), help="Ablation spec JSON.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Results CSV, rewritten after every cell.")
@click.option("--figure", "figure_path", type=click.Path(dir_okay=False), default=None, help="Figure-data CSV (default: <out>_figure.csv).")
@click.option("--seed", type=int, default=None, help="Master seed; overrides the spec. " + SEED_HELP)
@click.option("--record-timing", is_flag=True, help=TIMING_HELP)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help=JOBS_HELP)
def ablate(
    spec_path: str,
    out_path: str,
    figure_path: Optional[str],
    seed: Optional[int],
    record_timing: bool,
    jobs: int,
) -> None:
    """Run one ablation grid with seeded repeats."""
    outcome = Pipeline(jobs=jobs, record_timing=record_timing).ablate(
        spec_path, out_path, figure_path, master_seed=seed
    )
    failed = sum(1 for r in outcome.results if not r.ok)
    click.echo(f"results: {outcome.results_path}")
    click.echo(f"figure data: {outcome.figure_path}")
    click.echo(f"best value: {best_value(outcome.results)} ({failed} failed cells)")


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Directory for the recordings.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="SynthConfig JSON.")
@click.option("--seed", type=int, default=None, help=SEED_HELP)
@click.option("--vehicles", "vehicle_count", type=click.IntRange(min=1), default=None, help="Vehicles per recording (default 100).")
@click.option("--signal-mode", type=click.Choice(SIGNAL_MODES), default=None, help="Channels carrying the pre-maneuver signal (default velocity).")
@click.option("--lane-change-fraction", type=click.FloatRange(0, 1), default=None, help="Share of vehicles that change lanes (default 0.5).")
@click.option("--recordings", type=click.IntRange(min=1), default=1, show_default=True, help="Number of recordings; recording i uses seed + i.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help=JOBS_HELP)
def synth(
    out_dir: str,
    config_path: Optional[str],
    seed: Optional[int],
    vehicle_count: Optional[int],
    signal_mode: Optional[str],
    lane_change_fraction: Optional[float],
    recordings: int,
    jobs: int,
) -> None:
    """Generate synthetic HighD-schema recordings with ground-truth events."""
    paths = Pipeline(jobs=jobs).synth(
        out_dir,
        config_path,
        flags={
            "seed": seed,
            "vehicle_count": vehicle_count,
            "signal_mode": signal_mode,
            "lane_change_fraction": lane_change_fraction,
        },
        recordings=recordings,
    )
    for path in paths:
        click.echo(str(path))


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code: 0 ok, 1 user error, 2 internal error."""
    args: List[str] = list(sys.argv[1:] if argv is None else argv)
    try:
        cli.main(args=args, prog_name="lane-change-lstm", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USER_ERROR
    except click.ClickException as e:
        e.show()
        return EXIT_USER_ERROR
    except InputError as e:
        logger.error(str(e))
        click.echo(f"Error: {e}", err=True)
        return EXIT_USER_ERROR
    except Exception as e:
        logger.exception(f"Internal error: {e}")
        click.echo(f"Internal error: {e}", err=True)
        return EXIT_INTERNAL_ERROR
    return EXIT_OK


def main() -> None:
    """Console-script entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
