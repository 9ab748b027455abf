"""Harness entry points: make-data, pretrain, attack, e2e."""

from __future__ import annotations

import argparse
import json
import sys

from .data import make_synthetic, write_cifar_binary
from .experiment import ExperimentConfig, run_paired_comparison
from .trainer import HarnessConfig, pretrain_and_log, train_and_evaluate


def _add_common(parser):
    parser.add_argument("--model", default="tiny-cnn", choices=["tiny-cnn", "resnet18"])
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--height", type=int, default=16)
    parser.add_argument("--width", type=int, default=16)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(prog="pf-harness", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    mk = sub.add_parser("make-data", help="write a synthetic CIFAR-binary dataset")
    mk.add_argument("--out", required=True)
    mk.add_argument("--images", type=int, default=2000)
    mk.add_argument("--classes", type=int, default=10)
    mk.add_argument("--size", type=int, default=16)
    mk.add_argument("--hard-fraction", type=float, default=0.35)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument(
        "--prototype-seed", type=int, default=None,
        help="pin class patterns independently of --seed; give train and "
             "test splits the same value so they share classes",
    )

    pre = sub.add_parser("pretrain", help="benign pretraining; emits the prediction log")
    pre.add_argument("--dataset", required=True)
    pre.add_argument("--log", required=True)
    pre.add_argument("--with-grad-norm", action="store_true")
    _add_common(pre)

    atk = sub.add_parser("attack", help="train on a poisoned set; emit evaluation CSVs")
    atk.add_argument("--dataset", required=True, help="poisoned training set")
    atk.add_argument("--test", required=True, help="clean test set")
    atk.add_argument("--trigger", required=True)
    atk.add_argument("--out-dir", required=True)
    atk.add_argument("--tag", default="")
    _add_common(atk)

    e2e = sub.add_parser("e2e", help="paired-seed metric-vs-random comparison")
    e2e.add_argument("--workdir", required=True)
    e2e.add_argument("--train-images", type=int, default=2000)
    e2e.add_argument("--test-images", type=int, default=1000)
    e2e.add_argument("--poison-count", type=int, default=60)
    e2e.add_argument("--metric", default="res-log")
    e2e.add_argument("--pretrain-epochs", type=int, default=15)
    e2e.add_argument("--train-epochs", type=int, default=15)
    e2e.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    e2e.add_argument("--size", type=int, default=16)

    args = ap.parse_args(argv)

    if args.command == "make-data":
        ds = make_synthetic(
            args.images, args.classes, args.size,
            hard_fraction=args.hard_fraction, seed=args.seed,
            prototype_seed=args.prototype_seed,
        )
        write_cifar_binary(ds.images, ds.labels, args.out)
        print(f"wrote {args.images} images to {args.out}")
    elif args.command == "pretrain":
        config = HarnessConfig(
            dataset_path=args.dataset, model=args.model, epochs=args.epochs,
            seed=args.seed, height=args.height, width=args.width,
            num_classes=args.classes, with_grad_norm=args.with_grad_norm,
        )
        pretrain_and_log(config, args.log)
        print(f"wrote prediction log to {args.log}")
    elif args.command == "attack":
        config = HarnessConfig(
            dataset_path=args.dataset, model=args.model, epochs=args.epochs,
            seed=args.seed, height=args.height, width=args.width,
            num_classes=args.classes,
        )
        clean_csv, trig_csv = train_and_evaluate(
            config, args.test, args.trigger, args.out_dir, tag=args.tag
        )
        print(f"wrote {clean_csv} and {trig_csv}")
    elif args.command == "e2e":
        cfg = ExperimentConfig(
            workdir=args.workdir,
            num_train=args.train_images,
            num_test=args.test_images,
            poison_count=args.poison_count,
            metric=args.metric,
            pretrain_epochs=args.pretrain_epochs,
            train_epochs=args.train_epochs,
            seeds=tuple(args.seeds),
            size=args.size,
        )
        summary = run_paired_comparison(cfg)
        print(json.dumps(summary, indent=2))
        if summary["mean_asr_metric"] <= summary["mean_asr_random"]:
            print("WARNING: metric selection did not beat random", file=sys.stderr)


if __name__ == "__main__":
    main()
