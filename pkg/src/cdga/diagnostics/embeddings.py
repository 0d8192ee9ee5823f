"""Image embeddings for similarity and shift diagnostics.

Embeddings are row-wise L2-normalized so cosine similarity is a plain dot
product.  The default encoder is a cheap pixel-statistics featurizer; a
CLIP adapter with the same interface can be swapped in when the optional
dependency is installed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class EmbeddingMatrix:
    """N unit-norm embedding rows with their entry ids."""

    vectors: np.ndarray
    ids: tuple[str, ...]
    encoder_id: str

    def __post_init__(self) -> None:
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != len(self.ids):
            raise ValueError("vectors must be 2-D with one row per id")
        if not np.all(np.isfinite(v)):
            raise ValueError("embeddings must be finite")
        norms = np.linalg.norm(v, axis=1)
        if v.shape[0] and np.any(norms < 1e-12):
            raise ValueError("zero-norm embedding row cannot be normalized")
        if v.shape[0]:
            v = v / norms[:, None]
        object.__setattr__(self, "vectors", v)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@runtime_checkable
class ImageEncoder(Protocol):
    encoder_id: str

    def encode(self, images: Sequence[Image.Image]) -> np.ndarray: ...


class PixelStatEncoder:
    """Per-channel mean pyramid over a coarse grid.

    Downscales to grid x grid and emits the per-cell channel means plus a
    constant component (keeps rows away from zero norm for flat images).
    """

    def __init__(self, grid: int = 4):
        self.grid = grid
        self.encoder_id = f"pixel_stats_g{grid}"

    def encode(self, images: Sequence[Image.Image]) -> np.ndarray:
        out = np.empty((len(images), 3 * self.grid * self.grid + 1), dtype=np.float64)
        for i, image in enumerate(images):
            small = image.convert("RGB").resize((self.grid, self.grid), Image.BILINEAR)
            arr = np.asarray(small, dtype=np.float64) / 255.0
            out[i] = np.concatenate([arr.reshape(-1), [1.0]])
        return out


class CLIPEncoder:
    """CLIP ViT-B/32 image embeddings via sentence-transformers (optional)."""

    def __init__(self, model_name: str = "clip-ViT-B-32", batch_size: int = 32):
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(model_name)
        self._batch = batch_size
        self.encoder_id = model_name

    def encode(self, images: Sequence[Image.Image]) -> np.ndarray:
        return np.asarray(
            self._model.encode(list(images), batch_size=self._batch,
                               convert_to_numpy=True),
            dtype=np.float64,
        )


def embed_images(
    paths_by_id: dict[str, Path | str],
    encoder: ImageEncoder | None = None,
) -> EmbeddingMatrix:
    """Encode a batch of images keyed by entry id.

    Files that fail to decode are skipped with a warning rather than
    aborting the whole diagnostic.
    """
    encoder = encoder if encoder is not None else PixelStatEncoder()
    ids, images = [], []
    for entry_id in sorted(paths_by_id):
        try:
            with Image.open(paths_by_id[entry_id]) as img:
                images.append(img.convert("RGB").copy())
            ids.append(entry_id)
        except (OSError, ValueError) as exc:
            warnings.warn(f"skipping undecodable image {entry_id}: {exc}")
    if images:
        vectors = encoder.encode(images)
    else:
        vectors = np.empty((0, 1), dtype=np.float64)
    return EmbeddingMatrix(vectors=vectors, ids=tuple(ids), encoder_id=encoder.encoder_id)
