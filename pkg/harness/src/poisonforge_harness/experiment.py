"""The paired-seed directional experiment: selection metric vs random.

Workflow per run: synthesize data, pretrain to get the prediction log,
build two poisoned training sets (one from the hardness metric, one from
seeded random selection), train a fresh model on each with the same
training seed, and compare attack success rates on the triggered test set.
Every dataset/selection/poisoning step goes through the poisonforge CLI.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .data import make_synthetic, write_cifar_binary
from .trainer import HarnessConfig, poisonforge_cli, pretrain_and_log, train_and_evaluate


@dataclass
class ExperimentConfig:
    workdir: str
    num_train: int = 2000
    num_test: int = 1000
    num_classes: int = 10
    size: int = 16
    target_label: int = 0
    poison_count: int = 60
    metric: str = "res-log"
    pretrain_epochs: int = 15
    train_epochs: int = 15
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    data_seed: int = 0
    hard_fraction: float = 0.35
    model: str = "tiny-cnn"
    trigger_json: dict | None = None

    def __post_init__(self) -> None:
        if self.trigger_json is None:
            # Badnets-C channel patterns, default 3x3 bottom-right geometry
            self.trigger_json = {
                "kind": "badnets",
                "height": 3,
                "width": 3,
                "row": self.size - 3,
                "col": self.size - 3,
                "patterns": [1, 1, 0],
            }


def asr_from_csv(path, target_label: int) -> float:
    """Fraction of non-target-class rows predicted as the target label."""
    hits = total = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            if int(row["true_label"]) == target_label:
                continue
            total += 1
            hits += int(row["predicted_label"]) == target_label
    return hits / total


def ba_from_csv(path) -> float:
    hits = total = 0
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            total += 1
            hits += int(row["predicted_label"]) == int(row["true_label"])
    return hits / total


def prepare_inputs(cfg: ExperimentConfig) -> dict[str, Path]:
    """Synthesize train/test sets, the trigger file, and the pretraining log."""
    work = Path(cfg.workdir)
    work.mkdir(parents=True, exist_ok=True)
    train = make_synthetic(
        cfg.num_train, cfg.num_classes, cfg.size,
        hard_fraction=cfg.hard_fraction, seed=cfg.data_seed,
        prototype_seed=cfg.data_seed,
    )
    test = make_synthetic(
        cfg.num_test, cfg.num_classes, cfg.size,
        hard_fraction=cfg.hard_fraction, seed=cfg.data_seed + 10_000,
        prototype_seed=cfg.data_seed,
    )
    paths = {
        "train": work / "train.bin",
        "test": work / "test.bin",
        "trigger": work / "trigger.json",
        "log": work / "pretrain-log.csv",
    }
    write_cifar_binary(train.images, train.labels, paths["train"])
    write_cifar_binary(test.images, test.labels, paths["test"])
    paths["trigger"].write_text(json.dumps(cfg.trigger_json, indent=2) + "\n")
    pretrain_config = HarnessConfig(
        dataset_path=str(paths["train"]),
        model=cfg.model,
        epochs=cfg.pretrain_epochs,
        seed=cfg.data_seed,
        height=cfg.size,
        width=cfg.size,
        num_classes=cfg.num_classes,
    )
    pretrain_and_log(pretrain_config, paths["log"])
    return paths


def build_poisoned_set(cfg, paths, metric: str, selection_seed: int, tag: str) -> Path:
    """select + poison through the CLI; returns the poisoned training file."""
    work = Path(cfg.workdir)
    report = work / f"report-{tag}.json"
    poisoned = work / f"poisoned-{tag}.bin"
    manifest = work / f"manifest-{tag}.json"
    poisonforge_cli(
        "select", "--metric", metric, "--target-label", cfg.target_label,
        "--count", cfg.poison_count, "--seed", selection_seed,
        "--log", paths["log"], "--classes", cfg.num_classes, "--out", report,
    )
    poisonforge_cli(
        "poison", "--dataset", paths["train"], "--report", report,
        "--trigger", paths["trigger"], "--out", poisoned, "--manifest", manifest,
        "--classes", cfg.num_classes, "--height", cfg.size, "--width", cfg.size,
    )
    return poisoned


def run_paired_comparison(cfg: ExperimentConfig) -> dict:
    """Mean ASR of metric-based vs random selection over paired seeds."""
    paths = prepare_inputs(cfg)
    metric_poisoned = build_poisoned_set(cfg, paths, cfg.metric, 0, cfg.metric)
    results = {"metric": [], "random": [], "ba_metric": [], "ba_random": []}
    for seed in cfg.seeds:
        random_poisoned = build_poisoned_set(
            cfg, paths, "random", seed, f"random-{seed}"
        )
        for arm, poisoned in (("metric", metric_poisoned), ("random", random_poisoned)):
            train_config = HarnessConfig(
                dataset_path=str(poisoned),
                model=cfg.model,
                epochs=cfg.train_epochs,
                seed=seed,
                height=cfg.size,
                width=cfg.size,
                num_classes=cfg.num_classes,
            )
            clean_csv, trig_csv = train_and_evaluate(
                train_config, paths["test"], paths["trigger"],
                Path(cfg.workdir) / "eval", tag=f"{arm}-{seed}",
            )
            results[arm].append(asr_from_csv(trig_csv, cfg.target_label))
            results[f"ba_{arm}"].append(ba_from_csv(clean_csv))
    summary = {
        "mean_asr_metric": sum(results["metric"]) / len(results["metric"]),
        "mean_asr_random": sum(results["random"]) / len(results["random"]),
        "mean_ba_metric": sum(results["ba_metric"]) / len(results["ba_metric"]),
        "mean_ba_random": sum(results["ba_random"]) / len(results["ba_random"]),
        "per_seed_asr_metric": results["metric"],
        "per_seed_asr_random": results["random"],
        "selection_metric": cfg.metric,
        "poison_count": cfg.poison_count,
        "seeds": list(cfg.seeds),
    }
    return summary
