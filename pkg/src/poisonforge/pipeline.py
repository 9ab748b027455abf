"""End-to-end orchestration and BA/ASR evaluation.

A run config is a TOML file; every path in it is resolved relative to the
config file so runs are relocatable. ``run_pipeline`` chains the stages
(parse log, select, rank stealth, optionally compose, poison) and writes
report.json, ranking.json, poisoned.bin, and manifest.json into the output
directory. Outputs are byte-deterministic for identical inputs and config;
on a stage failure all partially written outputs are removed.

BA and ASR are exact rational counts over external prediction CSVs with
header ``sample_index,true_label,predicted_label``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .dataset_io import (
    DatasetProfile,
    get_profile,
    read_cifar_binary,
    target_subset,
    write_cifar_binary,
)
from .errors import PoisonforgeError, ValidationError
from .selection import (
    SelectionStrategy,
    compose_with_stealth,
    compute_scores,
    select,
)
from .stealth import GmsdParams, rank_stealth
from .training_log import compute_misclass_stats, compute_ownlabel_stats, parse_log
from .triggers import (
    load_trigger,
    poison_dataset,
    trigger_from_dict,
    trigger_to_dict,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def parse_epoch_range(text: str) -> tuple[int, int]:
    """Parse an ``a..b`` inclusive 1-based epoch window."""
    parts = text.split("..")
    if len(parts) != 2:
        raise ValidationError(f"bad epoch range {text!r}; expected a..b")
    try:
        lo, hi = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValidationError(f"bad epoch range {text!r}; expected integers") from None
    if lo < 1 or hi < lo:
        raise ValidationError(f"bad epoch range {text!r}; need 1 <= a <= b")
    return lo, hi


@dataclass
class RunConfig:
    """Fully resolved pipeline configuration."""

    dataset_path: Path
    log_path: Path | None
    profile: DatasetProfile
    strategy: SelectionStrategy
    trigger_dict: dict
    out_dir: Path
    seed: int = 0
    events_mode: str = "transitions"
    epoch_range: tuple[int, int] | None = None
    mu_mode: str = "per-sample"
    scope: str = "target"
    stealth_metric: str | None = None
    gmsd_params: GmsdParams = field(default_factory=GmsdParams)
    alpha_s: float | None = None

    def validate(self) -> None:
        if not self.dataset_path.is_file():
            raise ValidationError(f"dataset file not found: {self.dataset_path}")
        needs_log = self.strategy.metric != "random"
        if needs_log and (self.log_path is None or not self.log_path.is_file()):
            raise ValidationError(f"prediction log not found: {self.log_path}")
        if self.scope not in ("target", "all"):
            raise ValidationError(f"unknown scope {self.scope!r}")


def _profile_from_table(table: dict) -> DatasetProfile:
    if "profile" in table:
        return get_profile(table["profile"])
    try:
        return DatasetProfile(
            name="custom",
            num_classes=int(table["classes"]),
            height=int(table["height"]),
            width=int(table["width"]),
        )
    except KeyError as exc:
        raise ValidationError(
            f"config needs either 'profile' or explicit height/width/classes ({exc})"
        ) from None


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a TOML run config, apply CLI overrides, resolve paths."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"bad TOML config: {exc}") from None
    base = path.parent
    overrides = dict(overrides or {})

    def picked(key, default=None):
        if key in overrides and overrides[key] is not None:
            return overrides.pop(key)
        return raw.get(key, default)

    profile = _profile_from_table(raw)
    sel = dict(raw.get("selection", {}))
    metric = overrides.pop("metric", None) or sel.get("metric")
    if metric is None:
        raise ValidationError("config missing selection.metric")
    count = overrides.pop("count", None)
    rate = overrides.pop("rate", None)
    if count is None and rate is None:
        count = sel.get("count")
        rate = sel.get("rate")
    target_label = picked("target_label", profile.target_label)
    seed = int(picked("seed", 0))
    strategy = SelectionStrategy(
        metric=metric,
        target_label=int(target_label),
        count=None if count is None else int(count),
        rate=None if rate is None else float(rate),
        seed=seed,
    )
    trigger_value = picked("trigger")
    if trigger_value is None:
        raise ValidationError("config missing trigger (path or inline table)")
    if isinstance(trigger_value, str):
        trigger_path = base / trigger_value
        if not trigger_path.is_file():
            raise ValidationError(f"trigger file not found: {trigger_path}")
        trigger_dict = trigger_to_dict(load_trigger(trigger_path))
    else:
        trigger_dict = dict(trigger_value)
        trigger_from_dict(trigger_dict)  # validate early
    stealth = dict(raw.get("stealth", {}))
    alpha_s = overrides.pop("alpha_s", None)
    if alpha_s is None:
        alpha_s = stealth.get("alpha_s")
    epoch_range = sel.get("epoch_range")
    if epoch_range is not None:
        epoch_range = parse_epoch_range(str(epoch_range))
    out_dir = overrides.pop("out_dir", None) or raw.get("out_dir", "out")
    if overrides:
        raise ValidationError(f"unknown overrides: {sorted(overrides)}")
    if "dataset" not in raw:
        raise ValidationError("config missing dataset path")
    config = RunConfig(
        dataset_path=base / str(raw["dataset"]),
        log_path=base / str(raw["log"]) if raw.get("log") else None,
        profile=profile,
        strategy=strategy,
        trigger_dict=trigger_dict,
        out_dir=base / str(out_dir),
        seed=seed,
        events_mode=sel.get("events_mode", "transitions"),
        epoch_range=epoch_range,
        mu_mode=sel.get("mu_mode", "per-sample"),
        scope=sel.get("scope", "target"),
        stealth_metric=stealth.get("metric"),
        gmsd_params=GmsdParams(
            c=float(stealth.get("gmsd_c", GmsdParams().c)),
            color_mode=stealth.get("color_mode", "luminance"),
        ),
        alpha_s=None if alpha_s is None else float(alpha_s),
    )
    config.validate()
    return config


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _stage(name: str):
    """Decorator-free stage guard: re-raise with the failing stage's name."""

    class _Guard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, PoisonforgeError):
                exc.args = (f"stage {name}: {exc}",)
            return False

    return _Guard()


def run_pipeline(config: RunConfig) -> dict[str, Path]:
    """Execute select -> rank-stealth -> (compose) -> poison, writing artifacts."""
    config.validate()
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.json",
        "ranking": out / "ranking.json",
        "poisoned": out / "poisoned.bin",
        "manifest": out / "manifest.json",
    }
    written: list[Path] = []
    try:
        with _stage("ingest"):
            dataset = read_cifar_binary(config.dataset_path, config.profile)
            log = parse_log(config.log_path) if config.log_path else None

        with _stage("select"):
            y_t = config.strategy.target_label
            if config.scope == "all":
                stats = (
                    compute_ownlabel_stats(
                        log, config.profile.num_classes,
                        config.events_mode, config.epoch_range,
                    )
                    if log is not None
                    else None
                )
                pool = list(range(len(dataset)))
            else:
                stats = (
                    compute_misclass_stats(
                        log, y_t, config.profile.num_classes,
                        config.events_mode, config.epoch_range,
                    )
                    if log is not None
                    else None
                )
                pool = target_subset(dataset, y_t)
            if config.strategy.metric == "random":
                scores = None
                indices = pool
            else:
                scores = compute_scores(
                    config.strategy.metric, stats, log, mu_mode=config.mu_mode
                )
                indices = stats.indices
            report = select(config.strategy, scores, indices)
            paths["report"].write_text(report.to_json(), encoding="utf-8")
            written.append(paths["report"])

        with _stage("rank-stealth"):
            trigger = trigger_from_dict(config.trigger_dict)
            candidates = [dataset.images[i] for i in report.chosen]
            ranking = rank_stealth(
                candidates,
                trigger,
                metric=config.stealth_metric,
                params=config.gmsd_params,
                indices=report.chosen,
            )
            payload = {
                "metric": ranking.metric,
                "entries": [
                    {"index": i, "score": s} for i, s in ranking.entries
                ],
            }
            paths["ranking"].write_text(
                json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )
            written.append(paths["ranking"])

        final_report = report
        if config.alpha_s is not None and report.chosen:
            with _stage("compose"):
                final_report = compose_with_stealth(
                    report, ranking.scores_by_index(), config.alpha_s
                )

        with _stage("poison"):
            poisoned, manifest = poison_dataset(dataset, final_report, trigger)
            write_cifar_binary(poisoned, paths["poisoned"])
            written.append(paths["poisoned"])
            extras = {
                "alpha_s": config.alpha_s,
                "selection_metric": config.strategy.metric,
                "stealth_metric": ranking.metric,
                "seed": config.seed,
                "inputs": {
                    "dataset_sha256": _sha256_file(config.dataset_path),
                    "log_sha256": _sha256_file(config.log_path)
                    if config.log_path
                    else None,
                },
            }
            manifest = type(manifest)(
                target_label=manifest.target_label,
                trigger=manifest.trigger,
                indices=manifest.indices,
                alpha=manifest.alpha,
                tool_version=manifest.tool_version,
                output_sha256=manifest.output_sha256,
                extras=extras,
            )
            paths["manifest"].write_text(manifest.to_json(), encoding="utf-8")
            written.append(paths["manifest"])
    except BaseException:
        for p in written:
            try:
                p.unlink()
            except OSError:
                pass
        raise
    return paths


# ---------------------------------------------------------------------------
# BA / ASR evaluation over external prediction files


@dataclass(frozen=True)
class EvalCounts:
    """Exact rational accuracy fragment: hits over total."""

    hits: int
    total: int

    @property
    def value(self) -> float:
        return self.hits / self.total


_PRED_HEADER = ["sample_index", "true_label", "predicted_label"]


def _read_predictions(path) -> list[tuple[int, int, int]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"empty predictions file: {path}") from None
        if [h.strip() for h in header] != _PRED_HEADER:
            raise ValidationError(
                f"bad predictions header {header!r}; expected {_PRED_HEADER}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path} line {lineno}: expected 3 fields")
            try:
                rows.append((int(row[0]), int(row[1]), int(row[2])))
            except ValueError:
                raise ValidationError(
                    f"{path} line {lineno}: non-integer field"
                ) from None
    if not rows:
        raise ValidationError(f"predictions file has no data rows: {path}")
    return rows


def compute_ba(path) -> EvalCounts:
    """Clean accuracy: fraction of rows whose prediction matches the label."""
    rows = _read_predictions(path)
    hits = sum(1 for _, true, pred in rows if pred == true)
    return EvalCounts(hits=hits, total=len(rows))


def compute_asr(
    path, target_label: int, exclude_target_class: bool = False
) -> EvalCounts:
    """Attack success rate: fraction of rows predicted as the target label.

    Rows are predictions on triggered versions of the clean test set. With
    ``exclude_target_class`` samples whose true label already equals the
    target are dropped before counting (they would trivially succeed).
    """
    rows = _read_predictions(path)
    if exclude_target_class:
        rows = [r for r in rows if r[1] != target_label]
        if not rows:
            raise ValidationError(
                "no rows left after excluding the target class"
            )
    hits = sum(1 for _, _, pred in rows if pred == target_label)
    return EvalCounts(hits=hits, total=len(rows))
