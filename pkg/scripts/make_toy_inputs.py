#!/usr/bin/env python3
"""Generate a synthetic dataset, prediction log, trigger, and run config.

Produces everything `poisonforge run` needs in one directory, so the full
pipeline can be exercised without training anything:

    python scripts/make_toy_inputs.py --out demo --images 200 --classes 10
    poisonforge run --config demo/run.toml

The synthetic log mimics pretraining dynamics: each sample gets a fixed
reliability, and unreliable samples rack up forgetting events.
"""

import argparse
from pathlib import Path

import numpy as np

from poisonforge.dataset_io import LabeledDataset, write_cifar_binary
from poisonforge.training_log import PredictionLog, write_log
from poisonforge.triggers import component_c_presets, save_trigger


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo", help="output directory")
    ap.add_argument("--images", type=int, default=200)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--size", type=int, default=32, help="image height/width")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument(
        "--trigger",
        default="badnets_c",
        choices=["badnets_vanilla", "badnets_c", "blended_vanilla", "blended_c",
                 "multibpp_b", "multibpp_rgb", "bpp_base"],
    )
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    n, k, s = args.images, args.classes, args.size
    labels = np.arange(n) % k
    prototypes = rng.integers(30, 226, size=(k, 3, s, s))
    noise = rng.normal(0, 25, size=(n, 3, s, s))
    images = np.clip(prototypes[labels] + noise, 0, 255).astype(np.uint8)
    dataset = LabeledDataset(images=images, labels=labels, num_classes=k)
    write_cifar_binary(dataset, out / "train.bin")

    reliability = rng.uniform(0.35, 0.98, size=n)
    preds = np.empty((n, args.epochs), dtype=np.int64)
    for i in range(n):
        ok = rng.random(args.epochs) < reliability[i]
        wrong = rng.integers(0, k, size=args.epochs)
        wrong[wrong == labels[i]] = (wrong[wrong == labels[i]] + 1) % k
        preds[i] = np.where(ok, labels[i], wrong)
    losses = np.maximum(0.02, 2.0 * (1 - reliability))[:, None] + rng.random(
        (n, args.epochs)
    ) * 0.1
    log = PredictionLog(true_labels=labels, predictions=preds, losses=losses)
    write_log(log, out / "log.csv")

    save_trigger(component_c_presets(args.trigger, image_size=(s, s)), out / "trigger.json")

    (out / "run.toml").write_text(
        "\n".join(
            [
                'dataset = "train.bin"',
                'log = "log.csv"',
                f"classes = {k}",
                f"height = {s}",
                f"width = {s}",
                "target_label = 0",
                'out_dir = "out"',
                f"seed = {args.seed}",
                'trigger = "trigger.json"',
                "",
                "[selection]",
                'metric = "res-log"',
                "rate = 0.5",
                "",
                "[stealth]",
                "alpha_s = 0.5",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    print(f"wrote train.bin, log.csv, trigger.json, run.toml under {out}/")
    print(f"next: poisonforge run --config {out}/run.toml")


if __name__ == "__main__":
    main()
