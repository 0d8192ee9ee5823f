"""Synthetic multi-domain shape dataset for smoke tests and demos.

Classes are simple geometric shapes; domains differ only in background
color.  Picking a held-out domain whose background is the pixel average of
two training domains makes cheap pixel-blend generation land close to the
target distribution, which is exactly what the end-to-end smoke test
needs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from cdga.dataset import DomainDatasetManifest, scan_dataset

DEFAULT_DOMAINS: dict[str, tuple[int, int, int]] = {
    "red": (185, 55, 55),
    "blue": (55, 55, 185),
    "purple": (120, 55, 120),  # pixel midpoint of red and blue
}
DEFAULT_CLASSES = ("cross", "disk", "square")


def _draw(shape: str, size: int, rng: np.random.Generator,
          background: tuple[int, int, int]) -> np.ndarray:
    arr = np.empty((size, size, 3), dtype=np.float64)
    arr[:] = background
    arr += rng.normal(0.0, 10.0, arr.shape)
    fg = np.array([225, 225, 225], dtype=np.float64) + rng.normal(0.0, 12.0, 3)
    c = size // 2 + rng.integers(-size // 8, size // 8 + 1, 2)
    r = max(3, size // 4 + int(rng.integers(-2, 3)))
    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "square":
        mask = (np.abs(yy - c[0]) <= r) & (np.abs(xx - c[1]) <= r)
    elif shape == "disk":
        mask = (yy - c[0]) ** 2 + (xx - c[1]) ** 2 <= r * r
    elif shape == "cross":
        w = max(1, r // 3)
        mask = ((np.abs(yy - c[0]) <= w) & (np.abs(xx - c[1]) <= r)) | (
            (np.abs(xx - c[1]) <= w) & (np.abs(yy - c[0]) <= r)
        )
    else:
        raise ValueError(f"unknown shape {shape!r}")
    arr[mask] = fg
    return np.clip(arr, 0, 255).astype(np.uint8)


def make_toy_dataset(
    root: str | Path,
    *,
    domains: dict[str, tuple[int, int, int]] | None = None,
    classes: tuple[str, ...] = DEFAULT_CLASSES,
    per_class: int = 30,
    image_size: int = 24,
    seed: int = 0,
) -> DomainDatasetManifest:
    """Write a scannable toy tree and return its manifest."""
    root = Path(root)
    domains = domains if domains is not None else dict(DEFAULT_DOMAINS)
    for di, (domain, color) in enumerate(sorted(domains.items())):
        for ci, class_name in enumerate(classes):
            out_dir = root / domain / class_name
            out_dir.mkdir(parents=True, exist_ok=True)
            for k in range(per_class):
                rng = np.random.default_rng([seed, di, ci, k])
                arr = _draw(class_name, image_size, rng, color)
                Image.fromarray(arr, mode="RGB").save(out_dir / f"img{k:03d}.png")
    return scan_dataset(root)
