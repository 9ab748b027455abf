"""Model presets: a CPU-friendly tiny CNN and the torchvision resnet18."""

from __future__ import annotations

import torch
from torch import nn


class TinyCnn(nn.Module):
    """Two conv blocks plus one linear head; trains in seconds on CPU."""

    def __init__(self, num_classes: int, size: int):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )
        self.head = nn.Linear(32 * (size // 4) * (size // 4), num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).flatten(1))


def build_model(preset: str, num_classes: int, size: int) -> nn.Module:
    if preset == "tiny-cnn":
        return TinyCnn(num_classes, size)
    if preset == "resnet18":
        from torchvision.models import resnet18

        return resnet18(num_classes=num_classes)
    raise ValueError(f"unknown model preset {preset!r}")
