"""Command-line interface.

Subcommands mirror the pipeline stages: ingest-log, select, rank-stealth,
poison, evaluate, and run (the full chain driven by a TOML config). Exit
codes: 0 success, 1 validation error, 2 I/O error, 3 degenerate-statistics
error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .dataset_io import DatasetProfile, PROFILES, get_profile, read_cifar_binary, write_cifar_binary
from .errors import PoisonforgeError, ValidationError
from .pipeline import (
    compute_asr,
    compute_ba,
    load_run_config,
    parse_epoch_range,
    run_pipeline,
)
from .selection import (
    METRICS,
    SelectionReport,
    SelectionStrategy,
    compose_with_stealth,
    compute_scores,
    select,
)
from .stealth import GmsdParams, rank_stealth
from .training_log import compute_misclass_stats, compute_ownlabel_stats, parse_log
from .triggers import load_trigger, poison_dataset, trigger_entire_dataset


def _dump_json(payload: dict, out_path: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


def _resolve_profile(profile, classes, height, width) -> DatasetProfile:
    if profile is not None:
        return get_profile(profile)
    if classes is not None and height is not None and width is not None:
        return DatasetProfile("custom", num_classes=classes, height=height, width=width)
    raise ValidationError("pass --profile or all of --classes/--height/--width")


def _geometry_options(fn):
    fn = click.option("--profile", type=click.Choice(sorted(PROFILES)), default=None)(fn)
    fn = click.option("--classes", type=int, default=None)(fn)
    fn = click.option("--height", type=int, default=None)(fn)
    fn = click.option("--width", type=int, default=None)(fn)
    return fn


@click.group()
@click.version_option(__version__, prog_name="poisonforge")
def cli() -> None:
    """Poison-only clean-label backdoor construction pipeline."""


@cli.command("ingest-log")
@click.option("--log", "log_path", required=True)
@click.option("--target-label", type=int, required=True)
@click.option("--classes", type=int, default=None)
@click.option("--profile", type=click.Choice(sorted(PROFILES)), default=None)
@click.option("--events-mode", type=click.Choice(["transitions", "epochs"]), default="transitions")
@click.option("--epoch-range", default=None, help="inclusive 1-based window a..b")
@click.option("--out", "out_path", default=None)
def ingest_log_cmd(log_path, target_label, classes, profile, events_mode, epoch_range, out_path):
    """Validate a prediction log and emit misclassification statistics."""
    log = parse_log(log_path)
    if classes is None:
        classes = get_profile(profile).num_classes if profile else 10
    window = parse_epoch_range(epoch_range) if epoch_range else None
    stats = compute_misclass_stats(log, target_label, classes, events_mode, window)
    payload = {
        "num_epochs": log.num_epochs,
        "num_samples": log.num_samples,
        "target_label": target_label,
        "num_classes": classes,
        "events_mode": events_mode,
        "aggregate_events": stats.events.sum(axis=0).tolist(),
        "samples": [
            {
                "index": int(i),
                "forget_count": int(f),
                "events": row.tolist(),
            }
            for i, f, row in zip(stats.indices, stats.forget_counts, stats.events)
        ],
    }
    _dump_json(payload, out_path)


@cli.command("select")
@click.option("--metric", type=click.Choice(METRICS), required=True)
@click.option("--target-label", type=int, required=True)
@click.option("--rate", type=float, default=None)
@click.option("--count", type=int, default=None)
@click.option("--log", "log_path", required=True)
@click.option("--out", "out_path", required=True)
@click.option("--classes", type=int, default=None)
@click.option("--profile", type=click.Choice(sorted(PROFILES)), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--events-mode", type=click.Choice(["transitions", "epochs"]), default="transitions")
@click.option("--epoch-range", default=None)
@click.option("--mu-mode", type=click.Choice(["per-sample", "global"]), default="per-sample")
@click.option("--scope", type=click.Choice(["target", "all"]), default="target")
def select_cmd(metric, target_label, rate, count, log_path, out_path, classes,
               profile, seed, events_mode, epoch_range, mu_mode, scope):
    """Rank target-class samples by a hardness metric and pick the poison set."""
    log = parse_log(log_path)
    if classes is None:
        classes = get_profile(profile).num_classes if profile else 10
    window = parse_epoch_range(epoch_range) if epoch_range else None
    strategy = SelectionStrategy(
        metric=metric, target_label=target_label, count=count, rate=rate, seed=seed
    )
    if scope == "all":
        stats = compute_ownlabel_stats(log, classes, events_mode, window)
        pool = stats.indices
    else:
        stats = compute_misclass_stats(log, target_label, classes, events_mode, window)
        pool = stats.indices
    if metric == "random":
        scores = None
    else:
        scores = compute_scores(metric, stats, log, mu_mode=mu_mode)
    report = select(strategy, scores, pool)
    Path(out_path).write_text(report.to_json(), encoding="utf-8")


@cli.command("rank-stealth")
@click.option("--trigger", "trigger_path", required=True)
@click.option("--candidates", "report_path", required=True)
@click.option("--dataset", "dataset_path", required=True)
@click.option("--metric", type=click.Choice(["gmsd", "mse"]), default=None)
@click.option("--gmsd-c", type=float, default=GmsdParams().c, show_default=True)
@click.option("--color-mode", type=click.Choice(["luminance", "per-channel"]), default="luminance")
@click.option("--out", "out_path", required=True)
@_geometry_options
def rank_stealth_cmd(trigger_path, report_path, dataset_path, metric, gmsd_c,
                     color_mode, out_path, profile, classes, height, width):
    """Rank selected candidates by visual insensitivity to the trigger."""
    prof = _resolve_profile(profile, classes, height, width)
    dataset = read_cifar_binary(dataset_path, prof)
    report = SelectionReport.from_json(Path(report_path).read_text(encoding="utf-8"))
    trigger = load_trigger(trigger_path)
    for i in report.chosen:
        if not 0 <= i < len(dataset):
            raise ValidationError(f"candidate index {i} out of dataset range")
    ranking = rank_stealth(
        [dataset.images[i] for i in report.chosen],
        trigger,
        metric=metric,
        params=GmsdParams(c=gmsd_c, color_mode=color_mode),
        indices=report.chosen,
    )
    payload = {
        "metric": ranking.metric,
        "entries": [{"index": i, "score": s} for i, s in ranking.entries],
    }
    _dump_json(payload, out_path)


@cli.command("poison")
@click.option("--dataset", "dataset_path", required=True)
@click.option("--report", "report_path", default=None)
@click.option("--trigger", "trigger_path", required=True)
@click.option("--out", "out_path", required=True)
@click.option("--manifest", "manifest_path", default=None)
@click.option("--ranking", "ranking_path", default=None,
              help="stealth ranking used to keep only the stealthiest fraction")
@click.option("--alpha-s", type=float, default=None,
              help="fraction of the selection kept after composition (default 0.5)")
@click.option("--all", "poison_all", is_flag=True, default=False,
              help="trigger every record (test-time application, no label check)")
@_geometry_options
def poison_cmd(dataset_path, report_path, trigger_path, out_path, manifest_path,
               ranking_path, alpha_s, poison_all, profile, classes, height, width):
    """Write a poisoned copy of the dataset plus its manifest."""
    prof = _resolve_profile(profile, classes, height, width)
    dataset = read_cifar_binary(dataset_path, prof)
    trigger = load_trigger(trigger_path)
    if poison_all:
        poisoned, manifest = trigger_entire_dataset(dataset, trigger)
        write_cifar_binary(poisoned, out_path)
        if manifest_path:
            Path(manifest_path).write_text(manifest.to_json(), encoding="utf-8")
        return
    if report_path is None:
        raise ValidationError("poison needs --report (or --all)")
    report = SelectionReport.from_json(Path(report_path).read_text(encoding="utf-8"))
    if ranking_path is not None:
        payload = json.loads(Path(ranking_path).read_text(encoding="utf-8"))
        stealth_scores = {e["index"]: e["score"] for e in payload["entries"]}
        report = compose_with_stealth(
            report, stealth_scores, 0.5 if alpha_s is None else alpha_s
        )
    poisoned, manifest = poison_dataset(dataset, report, trigger)
    write_cifar_binary(poisoned, out_path)
    if manifest_path:
        Path(manifest_path).write_text(manifest.to_json(), encoding="utf-8")


@cli.command("evaluate")
@click.option("--clean", "clean_paths", multiple=True,
              help="clean-test predictions CSV; repeat for multi-epoch averaging")
@click.option("--triggered", "triggered_path", default=None)
@click.option("--target-label", type=int, default=None)
@click.option("--exclude-target-class", is_flag=True, default=False)
@click.option("--out", "out_path", default=None)
def evaluate_cmd(clean_paths, triggered_path, target_label, exclude_target_class, out_path):
    """Compute BA and/or ASR from prediction CSVs (exact rational counts)."""
    if not clean_paths and triggered_path is None:
        raise ValidationError("pass --clean and/or --triggered")
    payload: dict = {}
    if clean_paths:
        fragments = [compute_ba(p) for p in clean_paths]
        payload["ba"] = {
            "per_file": [
                {"path": str(p), "correct": f.hits, "total": f.total, "value": f.value}
                for p, f in zip(clean_paths, fragments)
            ],
            "value": float(np.mean([f.value for f in fragments])),
        }
    if triggered_path is not None:
        if target_label is None:
            raise ValidationError("--triggered needs --target-label")
        frag = compute_asr(triggered_path, target_label, exclude_target_class)
        payload["asr"] = {
            "hits": frag.hits,
            "total": frag.total,
            "value": frag.value,
            "target_label": target_label,
            "exclude_target_class": exclude_target_class,
        }
    _dump_json(payload, out_path)


@cli.command("run")
@click.option("--config", "config_path", required=True)
@click.option("--metric", type=click.Choice(METRICS), default=None)
@click.option("--rate", type=float, default=None)
@click.option("--count", type=int, default=None)
@click.option("--target-label", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", default=None)
@click.option("--alpha-s", type=float, default=None)
def run_cmd(config_path, metric, rate, count, target_label, seed, out_dir, alpha_s):
    """Run the full pipeline from a TOML config (CLI flags override it)."""
    overrides = {
        "metric": metric,
        "rate": rate,
        "count": count,
        "target_label": target_label,
        "seed": seed,
        "out_dir": out_dir,
        "alpha_s": alpha_s,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    config = load_run_config(config_path, overrides)
    paths = run_pipeline(config)
    for name in sorted(paths):
        click.echo(f"{name}: {paths[name]}")


def main() -> None:
    try:
        cli.main(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(1)
    except PoisonforgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
