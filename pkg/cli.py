#!/usr/bin/env python3
"""
GSMo CLI - plant species and disease prediction experiments.

Usage:
    python cli.py generate --spec synthetic.json --out data/synthetic
    python cli.py train --config experiment.json --approach gsmo --weights 0.1,0.4,0.1,0.5
    python cli.py compare --config experiment.json --jobs 4
    python cli.py gridsearch --config experiment.json --grid coarse --refine
    python cli.py eval --checkpoint runs/exp/checkpoints/gsmo-s0.gsmo --data data/synthetic
    python cli.py stats --data data/synthetic

Exit codes: 0 success, 2 configuration error, 3 I/O or data error,
4 training divergence, 5 label-space mismatch.
"""

import csv
import functools
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
import numpy as np
from rich import box
from rich.console import Console
from rich.table import Table

from core.errors import ConfigError, DataError, GsmoError
from core.experiments import (
    coarse_grid,
    compare_approaches,
    grid_search_weights,
    narrow_grid,
    prepare_data,
    run_repeats,
    with_overrides,
)
from core.models import Approach, HeadKind, ReportRow
from core.schemas import APPROACHES, BalanceWeights, SyntheticSpec, load_config, parse_config
from core.trainer import evaluate_model
from data.dataset_loader import load_dataset, load_manifest
from data.stats import dataset_stats, write_stats
from data.synthetic import write_synthetic
from model.checkpoint import load_checkpoint
from model.network import ModelParams, MultiModel, predict
from storage.reports import (
    report_payload,
    write_compare_svg,
    write_grid_csv,
    write_heatmap_csv,
    write_heatmap_svg,
    write_json,
    write_report_csv,
)
from utils.config import settings
from utils.logger import logger

console = Console()

APPROACH_CHOICES = list(APPROACHES) + ["gsmo_transfer"]
GSMO_APPROACHES = ("gsmo", "gsmo_weighted", "gsmo_transfer")


def handle_errors(command):
    """Map library errors onto the exit-code contract."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except GsmoError as e:
            console.print(f"[red]Error: {e}[/red]")
            sys.exit(e.exit_code)
        except click.exceptions.Exit:
            raise
        except Exception as e:
            logger.error(f"Unexpected failure: {e}", exc_info=True)
            console.print(f"[red]Error: {e}[/red]")
            sys.exit(1)

    return wrapper


def jobs_option(command):
    return click.option(
        "--jobs", "-j", type=int, envvar="GSMO_JOBS", default=None,
        help="Parallel runs (default: GSMO_JOBS or 1)",
    )(command)


def resolve_jobs(jobs: Optional[int]) -> int:
    return max(1, jobs if jobs is not None else settings.jobs)


def display_rows(rows: Sequence[ReportRow], title: str):
    """Print report rows as a rich table."""
    table = Table(title=title, box=box.ROUNDED)
    for column in ("run", "epochs", "plant acc", "plant F1", "disease acc", "disease F1", "both acc", "both F1", "both FPR"):
        table.add_column(column, justify="right" if column != "run" else "left")

    def cell(value: Optional[float]) -> str:
        return "-" if value is None else f"{value:.4f}"

    for row in rows:
        style = "bold" if row.aggregate else ("dim" if row.statistic == "std" else None)
        table.add_row(
            row.run_id,
            f"{row.epochs:g}",
            cell(row.metric("plant", "acc")),
            cell(row.metric("plant", "f1")),
            cell(row.metric("disease", "acc")),
            cell(row.metric("disease", "f1")),
            cell(row.metric("both", "acc")),
            cell(row.metric("both", "f1")),
            cell(row.metric("both", "fpr")),
            style=style,
        )
    console.print(table)


def read_config_file(path: str, schema):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read {path}: {exc}") from exc
    return parse_config(text, schema)


@click.group()
def cli():
    """GSMo - multi-prediction of plant species and diseases from leaf images."""


@cli.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(), help="Synthetic dataset spec (JSON)")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory")
@handle_errors
def generate(spec_path: str, out_dir: str):
    """Generate a deterministic synthetic leaf dataset."""
    spec = read_config_file(spec_path, SyntheticSpec)
    manifest, written = write_synthetic(spec, out_dir)
    stats = dataset_stats(manifest)
    write_stats(stats, Path(out_dir) / "stats.json")

    if written == 0:
        console.print(f"[green]up-to-date[/green]: {out_dir} already matches this synthetic spec")
    console.print(f"[bold]N = {stats['n']}[/bold] images, {stats['num_pairs']} pairs")
    table = Table(box=box.ROUNDED)
    table.add_column("Species", style="cyan")
    table.add_column("Count", justify="right")
    for name, count in stats["species"].items():
        table.add_row(name, str(count))
    for name, count in stats["diseases"].items():
        table.add_row(f"[magenta]{name}[/magenta]", str(count))
    console.print(table)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment config (JSON)")
@click.option("--approach", type=click.Choice(APPROACH_CHOICES), default=None, help="Override the configured approach")
@click.option("--weights", default=None, help="Balance weights b1,b2,d1,d2")
@click.option("--from", "from_checkpoint", type=click.Path(), default=None, help="Initialise from a checkpoint")
@jobs_option
@handle_errors
def train(config_path: str, approach: Optional[str], weights: Optional[str], from_checkpoint: Optional[str], jobs: Optional[int]):
    """Train repeated runs of one approach and write CSV/JSON reports."""
    config = load_config(Path(config_path))
    if from_checkpoint is not None:
        chosen = approach or config.approach
        if chosen not in GSMO_APPROACHES:
            raise ConfigError(f"--from initialises gsmo models, not {chosen}")
        approach = "gsmo_transfer"
    config = with_overrides(
        config,
        approach=approach,
        weights=BalanceWeights.parse_flag(weights) if weights else None,
        checkpoint=from_checkpoint,
    )

    output_dir = Path(config.output_dir)
    data = prepare_data(config)
    report = run_repeats(Approach(config.approach), config, data, resolve_jobs(jobs), output_dir)
    if not report.succeeded:
        raise report.failures[0].exception or GsmoError(report.failures[0].error)

    rows = report.rows
    write_report_csv(rows, output_dir / "report.csv")
    write_json(report_payload(rows, config=json.loads(config.dump()), repeats=report.to_dict()), output_dir / "report.json")
    display_rows(rows, f"{config.approach} ({len(report.runs)} runs)")
    for failure in report.failures:
        console.print(f"[yellow]seed {failure.seed} failed: {failure.error}[/yellow]")
    console.print(f"Reports written to {output_dir}")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment config (JSON)")
@jobs_option
@handle_errors
def compare(config_path: str, jobs: Optional[int]):
    """Run every approach on the same splits and seeds."""
    config = load_config(Path(config_path))
    output_dir = Path(config.output_dir)
    data = prepare_data(config)
    reports = compare_approaches(config, data, resolve_jobs(jobs), output_dir)
    if not any(r.succeeded for r in reports):
        failure = reports[0].failures[0]
        raise failure.exception or GsmoError(failure.error)

    rows: List[ReportRow] = [row for report in reports for row in report.rows]
    aggregates = [row for row in rows if row.aggregate]
    summary = [row for row in rows if row.statistic is not None]
    write_report_csv(rows, output_dir / "compare.csv")
    write_json(
        report_payload(rows, config=json.loads(config.dump()), approaches=[r.to_dict() for r in reports]),
        output_dir / "compare.json",
    )
    write_compare_svg(summary, output_dir / "compare_f1.svg", metric="f1")
    write_compare_svg(summary, output_dir / "compare_acc.svg", metric="acc")

    display_rows(aggregates, "Approach comparison (test, mean over seeds)")
    for report in reports:
        for failure in report.failures:
            console.print(f"[yellow]{failure.approach} seed {failure.seed} failed: {failure.error}[/yellow]")
    console.print(f"Reports written to {output_dir}")


def read_grid(grid: str) -> List[BalanceWeights]:
    if grid == "coarse":
        return coarse_grid()
    entries = read_config_file_raw(grid)
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{grid}: expected a non-empty JSON list of weight objects")
    return [parse_config(json.dumps(entry), BalanceWeights) for entry in entries]


def read_config_file_raw(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"Cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def display_grid(rows, title: str, limit: int = 10):
    table = Table(title=title, box=box.ROUNDED)
    for column in ("rank", "beta1", "beta2", "delta1", "delta2", "epochs", "val both F1"):
        table.add_column(column, justify="right")
    for row in rows[:limit]:
        table.add_row(str(row.rank), *(f"{w:g}" for w in row.weights.as_tuple()), str(row.epochs), f"{row.val_f1:.4f}")
    console.print(table)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment config (JSON)")
@click.option("--grid", default="coarse", show_default=True, help="'coarse' or a JSON file listing weight objects")
@click.option("--refine", is_flag=True, help="Run a narrowed grid around the best coarse tuple")
@click.option("--step", type=float, default=0.1, show_default=True, help="Refinement step")
@jobs_option
@handle_errors
def gridsearch(config_path: str, grid: str, refine: bool, step: float, jobs: Optional[int]):
    """Search the balance weights by validation both-F1."""
    config = load_config(Path(config_path))
    output_dir = Path(config.output_dir)
    data = prepare_data(config)
    jobs = resolve_jobs(jobs)

    result = grid_search_weights(read_grid(grid), config, data, jobs)
    write_grid_csv(result.rows, output_dir / "gridsearch.csv")
    write_heatmap_csv(result.rows, output_dir / "gridsearch_heatmap.csv")
    write_heatmap_svg(result.rows, output_dir / "gridsearch.svg")
    payload = {"rows": [row.to_dict() for row in result.rows], "best": result.best.to_dict()}
    display_grid(result.rows, f"Grid search ({len(result.rows)} cells)")

    if refine:
        refined = grid_search_weights(narrow_grid(result.best.weights, step), config, data, jobs)
        write_grid_csv(refined.rows, output_dir / "gridsearch_refined.csv")
        payload["refined"] = {"rows": [row.to_dict() for row in refined.rows], "best": refined.best.to_dict()}
        display_grid(refined.rows, f"Refined grid ({len(refined.rows)} cells)")

    write_json(payload, output_dir / "gridsearch.json")
    console.print(f"Reports written to {output_dir}")


def load_eval_model(paths: Sequence[str]):
    """One checkpoint, or a single-plant plus single-disease pair for the multi-model approach."""
    models = [load_checkpoint(p) for p in paths]
    if len(models) == 1:
        return models[0]
    kinds = {m.kind: m for m in models}
    if len(models) != 2 or set(kinds) != {HeadKind.SINGLE_PLANT, HeadKind.SINGLE_DISEASE}:
        raise ConfigError("Two checkpoints must be one single_plant and one single_disease model")
    plant, disease = kinds[HeadKind.SINGLE_PLANT], kinds[HeadKind.SINGLE_DISEASE]
    if plant.spaces != disease.spaces or plant.config.backbone != disease.config.backbone:
        raise ConfigError("The plant and disease checkpoints were trained on different label spaces or backbones")
    return MultiModel(plant=plant, disease=disease)


def write_dump(path: Path, dataset, model):
    """Per-sample predictions: path, truth and predicted labels."""
    predictions = predict(model, dataset.images)
    spaces = dataset.spaces

    def name(space, ordinal: int) -> str:
        return "" if ordinal < 0 else space.name(int(ordinal))

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["path", "species", "disease", "pred_species", "pred_disease"])
            for entry, p, d in zip(dataset.manifest.entries, predictions.plant, predictions.disease):
                writer.writerow([str(entry.path), entry.species, entry.disease, name(spaces.plant, p), name(spaces.disease, d)])
    except OSError as exc:
        raise DataError(f"Cannot write {path}: {exc}") from exc


@cli.command(name="eval")
@click.option("--checkpoint", "checkpoints", required=True, multiple=True, type=click.Path(), help="Checkpoint file (repeat for a plant + disease pair)")
@click.option("--data", "data_root", required=True, type=click.Path(), help="Dataset root")
@click.option("--layout", type=click.Choice(["pairdir", "csv"]), default="pairdir", show_default=True)
@click.option("--per-class", is_flag=True, help="Include per-class precision/recall/F1/FPR")
@click.option("--dump", type=click.Path(), default=None, help="Write per-sample predictions as CSV")
@handle_errors
def evaluate(checkpoints: Sequence[str], data_root: str, layout: str, per_class: bool, dump: Optional[str]):
    """Evaluate a checkpoint on every sample of a dataset."""
    model = load_eval_model(checkpoints)
    params: ModelParams = model if isinstance(model, ModelParams) else model.plant
    manifest = load_manifest(data_root, layout)
    dataset = load_dataset(manifest, params.config.backbone.extent, spaces=params.spaces)

    report = evaluate_model(model, dataset, np.arange(len(dataset)), per_class=per_class)
    if dump:
        write_dump(Path(dump), dataset, model)
    click.echo(json.dumps(report.to_dict(), indent=2))


@cli.command()
@click.option("--data", "data_root", required=True, type=click.Path(), help="Dataset root")
@click.option("--layout", type=click.Choice(["pairdir", "csv"]), default="pairdir", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Stats JSON path (default <data>/stats.json)")
@handle_errors
def stats(data_root: str, layout: str, out_path: Optional[str]):
    """Print and write class-distribution statistics."""
    manifest = load_manifest(data_root, layout)
    result = dataset_stats(manifest)
    root = Path(data_root)
    write_stats(result, Path(out_path) if out_path else (root if root.is_dir() else root.parent) / "stats.json")
    click.echo(json.dumps(result, indent=2))


if __name__ == "__main__":
    try:
        cli()
    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted by user[/yellow]")
        sys.exit(0)
