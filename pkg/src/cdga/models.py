"""Classifier architectures with a shared feature/head split.

Every model exposes ``features(x)`` returning the penultimate activations
and a ``head`` linear layer (no bias) mapping features to class logits;
the Hessian diagnostics rely on exactly this split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn


@dataclass(frozen=True)
class ModelSpec:
    architecture: str = "small_cnn"
    width: int = 8
    pretrained: bool = False

    def to_json(self) -> dict:
        return {"architecture": self.architecture, "width": self.width,
                "pretrained": self.pretrained}

    @staticmethod
    def from_json(payload: dict) -> "ModelSpec":
        return ModelSpec(**payload)


class LinearSoftmaxModel(nn.Module):
    """Flatten + linear head; the minimal featurizer (identity features)."""

    def __init__(self, num_classes: int, in_channels: int = 3, image_size: int = 24):
        super().__init__()
        self.feature_dim = in_channels * image_size * image_size
        self.head = nn.Linear(self.feature_dim, num_classes, bias=False)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return x.flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


class SmallConvNet(nn.Module):
    """Two conv blocks and a linear head; sized for small benchmark images."""

    def __init__(self, num_classes: int, in_channels: int = 3, width: int = 8):
        super().__init__()
        self.encoder = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(width, 2 * width, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.AdaptiveAvgPool2d(2),
        )
        self.feature_dim = 2 * width * 4
        self.head = nn.Linear(self.feature_dim, num_classes, bias=False)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x).flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


class ResNet18Classifier(nn.Module):
    """torchvision ResNet-18 backbone with a bias-free linear head."""

    def __init__(self, num_classes: int, pretrained: bool = False):
        super().__init__()
        from torchvision.models import resnet18  # optional dependency

        weights = "IMAGENET1K_V1" if pretrained else None
        backbone = resnet18(weights=weights)
        self.feature_dim = backbone.fc.in_features
        backbone.fc = nn.Identity()
        self.encoder = backbone
        self.head = nn.Linear(self.feature_dim, num_classes, bias=False)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


def build_model(spec: ModelSpec, num_classes: int, image_size: int = 24,
                in_channels: int = 3) -> nn.Module:
    if spec.architecture == "linear":
        return LinearSoftmaxModel(num_classes, in_channels=in_channels, image_size=image_size)
    if spec.architecture == "small_cnn":
        return SmallConvNet(num_classes, in_channels=in_channels, width=spec.width)
    if spec.architecture == "resnet18":
        return ResNet18Classifier(num_classes, pretrained=spec.pretrained)
    raise KeyError(f"unknown architecture {spec.architecture!r}")
