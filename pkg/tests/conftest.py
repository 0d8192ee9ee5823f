"""Shared fixtures: tiny on-disk image trees and toy tensors."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from cdga.dataset import scan_dataset


def write_image(path: Path, seed: int = 0, size: int = 8,
                color: tuple[int, int, int] | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if color is not None:
        arr = np.full((size, size, 3), color, dtype=np.uint8)
    else:
        rng = np.random.default_rng(seed)
        arr = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    return path


def make_tree(root: Path, counts: dict[str, dict[str, int]], size: int = 8) -> Path:
    """Write root/<domain>/<class>/img_<k>.png with the given cell counts."""
    seed = 0
    for domain, by_class in counts.items():
        for class_name, n in by_class.items():
            (root / domain / class_name).mkdir(parents=True, exist_ok=True)
            for k in range(n):
                write_image(root / domain / class_name / f"img_{k}.png", seed=seed, size=size)
                seed += 1
    return root


@pytest.fixture
def square_tree(tmp_path):
    """2 domains x 2 classes x 5 images: the 40-task reference layout."""
    root = make_tree(
        tmp_path / "data",
        {
            "art": {"cat": 5, "dog": 5},
            "photo": {"cat": 5, "dog": 5},
        },
    )
    return root


@pytest.fixture
def square_manifest(square_tree):
    return scan_dataset(square_tree)


@pytest.fixture
def descriptions():
    return {
        "art": "art painting",
        "photo": "photorealistic, extremely detailed",
        "sketch": "sketch drawing, black and white, less details",
    }
