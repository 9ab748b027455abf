"""Training loops and the CSV emitters consumed by the poisoning tool.

``pretrain_and_log`` trains on a benign dataset and appends one row per
(epoch, sample) to the prediction log, matching the schema

    epoch,sample_index,true_label,predicted_label,loss[,grad_norm]

with epochs 1-based and sample indices 0-based. ``train_and_evaluate``
trains on a poisoned dataset and writes clean/triggered test prediction
CSVs (``sample_index,true_label,predicted_label``). Trigger application at
test time is delegated to `poisonforge poison --all` so train- and
test-time trigger math share a single implementation.
"""

from __future__ import annotations

import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import ArrayDataset, read_cifar_binary
from .models import build_model


@dataclass
class HarnessConfig:
    """Knobs shared by pretraining and attack training."""

    dataset_path: str
    model: str = "tiny-cnn"
    epochs: int = 15
    seed: int = 0
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    height: int = 16
    width: int = 16
    num_classes: int = 10
    with_grad_norm: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def _to_tensors(ds: ArrayDataset) -> tuple[torch.Tensor, torch.Tensor]:
    images = torch.from_numpy(ds.images).float() / 255.0
    labels = torch.from_numpy(ds.labels)
    return images, labels


def _train_one_epoch(model, images, labels, optimizer, generator, batch_size):
    model.train()
    criterion = nn.CrossEntropyLoss()
    order = torch.randperm(len(labels), generator=generator)
    for start in range(0, len(order), batch_size):
        batch = order[start : start + batch_size]
        optimizer.zero_grad()
        loss = criterion(model(images[batch]), labels[batch])
        loss.backward()
        optimizer.step()


@torch.no_grad()
def _predict_all(model, images, batch_size=512):
    model.eval()
    preds, logits_parts = [], []
    for start in range(0, len(images), batch_size):
        logits = model(images[start : start + batch_size])
        preds.append(logits.argmax(dim=1))
        logits_parts.append(logits)
    return torch.cat(preds), torch.cat(logits_parts)


def _per_sample_losses(logits, labels):
    return nn.functional.cross_entropy(logits, labels, reduction="none")


def _per_sample_grad_norms(model, images, labels, batch_size=64):
    """Full-model gradient l2 norm per sample via vmapped functional grads."""
    from torch.func import functional_call, grad, vmap

    params = {k: v.detach() for k, v in model.named_parameters()}
    buffers = {k: v.detach() for k, v in model.named_buffers()}

    def sample_loss(p, x, y):
        logits = functional_call(model, (p, buffers), (x.unsqueeze(0),))
        return nn.functional.cross_entropy(logits, y.unsqueeze(0))

    grad_fn = vmap(grad(sample_loss), in_dims=(None, 0, 0))
    norms = []
    for start in range(0, len(images), batch_size):
        grads = grad_fn(params, images[start : start + batch_size],
                        labels[start : start + batch_size])
        flat = torch.cat([g.flatten(1) for g in grads.values()], dim=1)
        norms.append(flat.norm(dim=1))
    return torch.cat(norms)


def _seed_everything(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def pretrain_and_log(config: HarnessConfig, log_path) -> None:
    """Benign pretraining; emits the dense per-epoch prediction log."""
    ds = read_cifar_binary(config.dataset_path, config.height, config.width)
    images, labels = _to_tensors(ds)
    generator = _seed_everything(config.seed)
    model = build_model(config.model, config.num_classes, config.height)
    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr, momentum=config.momentum)
    columns = "epoch,sample_index,true_label,predicted_label,loss"
    if config.with_grad_norm:
        columns += ",grad_norm"
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(columns + "\n")
        for epoch in range(1, config.epochs + 1):
            _train_one_epoch(model, images, labels, optimizer, generator, config.batch_size)
            preds, logits = _predict_all(model, images)
            losses = _per_sample_losses(logits, labels)
            if config.with_grad_norm:
                norms = _per_sample_grad_norms(model, images, labels)
            for i in range(len(labels)):
                row = (
                    f"{epoch},{i},{int(labels[i])},{int(preds[i])},"
                    f"{float(losses[i]):.6f}"
                )
                if config.with_grad_norm:
                    row += f",{float(norms[i]):.6f}"
                fh.write(row + "\n")


def write_predictions_csv(path, sample_indices, true_labels, predicted) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sample_index,true_label,predicted_label\n")
        for i, t, p in zip(sample_indices, true_labels, predicted):
            fh.write(f"{int(i)},{int(t)},{int(p)}\n")


def poisonforge_cli(*args: str) -> None:
    """Invoke the poisoning tool's CLI; raises on nonzero exit."""
    cmd = ["poisonforge", *[str(a) for a in args]]
    result = subprocess.run(cmd, capture_output=True, text=True)
    if result.returncode != 0:
        raise RuntimeError(
            f"{' '.join(cmd)} failed with code {result.returncode}: {result.stderr.strip()}"
        )


def train_and_evaluate(
    config: HarnessConfig,
    test_path,
    trigger_path,
    out_dir,
    tag: str = "",
) -> tuple[Path, Path]:
    """Train on the (poisoned) dataset; emit clean and triggered test CSVs.

    The triggered test set is produced by `poisonforge poison --all` on the
    clean test file, so the exact training-time trigger transform is used.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = f"-{tag}" if tag else ""
    train_ds = read_cifar_binary(config.dataset_path, config.height, config.width)
    images, labels = _to_tensors(train_ds)
    generator = _seed_everything(config.seed)
    model = build_model(config.model, config.num_classes, config.height)
    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr, momentum=config.momentum)
    for _ in range(config.epochs):
        _train_one_epoch(model, images, labels, optimizer, generator, config.batch_size)

    triggered_bin = out_dir / f"test-triggered{suffix}.bin"
    poisonforge_cli(
        "poison", "--dataset", test_path, "--trigger", trigger_path,
        "--all", "--out", triggered_bin,
        "--classes", config.num_classes,
        "--height", config.height, "--width", config.width,
    )
    clean_ds = read_cifar_binary(test_path, config.height, config.width)
    trig_ds = read_cifar_binary(triggered_bin, config.height, config.width)
    if not np.array_equal(clean_ds.labels, trig_ds.labels):
        raise RuntimeError("triggered test set altered labels")

    clean_csv = out_dir / f"predictions-clean{suffix}.csv"
    trig_csv = out_dir / f"predictions-triggered{suffix}.csv"
    for ds, path in ((clean_ds, clean_csv), (trig_ds, trig_csv)):
        x, y = _to_tensors(ds)
        preds, _ = _predict_all(model, x)
        write_predictions_csv(path, range(len(y)), y.tolist(), preds.tolist())
    return clean_csv, trig_csv


def main_check_env() -> str:
    result = subprocess.run(
        ["poisonforge", "--version"], capture_output=True, text=True
    )
    if result.returncode != 0:
        raise RuntimeError("poisonforge CLI not found on PATH")
    return result.stdout.strip()


if __name__ == "__main__":
    print(main_check_env(), file=sys.stderr)
