"""Synthetic datasets and the CIFAR-binary wire format.

The binary layout is the interface contract with the poisoning tool: one
record per image, a label byte followed by the R, G, B planes row-major.

The synthetic generator builds a 10-class problem with a controllable
share of "hard" samples: each class has a smooth prototype pattern, and a
hard sample is blended toward another class's prototype, which makes it
genuinely confusable and drives forgetting events during pretraining.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ArrayDataset:
    images: np.ndarray  # (N, 3, H, W) uint8
    labels: np.ndarray  # (N,) int64


def write_cifar_binary(images: np.ndarray, labels: np.ndarray, path) -> None:
    n = len(labels)
    with open(path, "wb") as fh:
        for i in range(n):
            fh.write(bytes([int(labels[i])]))
            fh.write(images[i].astype(np.uint8).tobytes())


def read_cifar_binary(path, height: int, width: int) -> ArrayDataset:
    raw = open(path, "rb").read()
    rec = 1 + 3 * height * width
    if len(raw) % rec != 0:
        raise ValueError(f"{path}: not a multiple of record size {rec}")
    n = len(raw) // rec
    records = np.frombuffer(raw, dtype=np.uint8).reshape(n, rec)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(n, 3, height, width).copy()
    return ArrayDataset(images=images, labels=labels)


def _class_prototypes(rng, num_classes: int, size: int) -> np.ndarray:
    """Smooth per-class patterns: coarse random grids upsampled bilinearly."""
    coarse = rng.uniform(30, 226, size=(num_classes, 3, 4, 4))
    grid = np.linspace(0, 3, size)
    lo = np.clip(np.floor(grid).astype(int), 0, 2)
    frac = grid - lo
    rows = (1 - frac)[:, None] * coarse[:, :, lo, :] + frac[:, None] * coarse[:, :, lo + 1, :]
    # rows has shape (K, 3, size, 4); now interpolate columns
    out = (1 - frac)[None, None, None, :] * rows[:, :, :, lo] + frac * rows[:, :, :, lo + 1]
    return out


def make_synthetic(
    num_images: int,
    num_classes: int = 10,
    size: int = 24,
    hard_fraction: float = 0.35,
    noise_sigma: float = 20.0,
    seed: int = 0,
    prototype_seed: int | None = None,
) -> ArrayDataset:
    """Balanced synthetic classification set with a hard-sample share.

    ``prototype_seed`` pins the class patterns independently of the sample
    draw, so train and test splits share the same classes.
    """
    rng = np.random.default_rng(seed)
    proto_rng = np.random.default_rng(
        seed if prototype_seed is None else prototype_seed
    )
    prototypes = _class_prototypes(proto_rng, num_classes, size)
    labels = np.arange(num_images) % num_classes
    rng.shuffle(labels)
    images = np.empty((num_images, 3, size, size))
    hard = rng.random(num_images) < hard_fraction
    for i in range(num_images):
        base = prototypes[labels[i]]
        if hard[i]:
            other = int(rng.integers(0, num_classes - 1))
            if other >= labels[i]:
                other += 1
            beta = rng.uniform(0.45, 0.7)
            base = (1 - beta) * base + beta * prototypes[other]
        images[i] = base + rng.normal(0, noise_sigma, size=base.shape)
    return ArrayDataset(
        images=np.clip(images, 0, 255).astype(np.uint8),
        labels=labels.astype(np.int64),
    )
