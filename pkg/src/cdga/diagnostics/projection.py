"""2-D t-SNE views of embeddings for qualitative shift inspection."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ProjectedPoints:
    """2-D coordinates with the grouping label of each point."""

    coordinates: np.ndarray
    ids: tuple[str, ...]
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        c = np.asarray(self.coordinates, dtype=np.float64)
        if c.shape != (len(self.ids), 2) or len(self.labels) != len(self.ids):
            raise ValueError("coordinates, ids, and labels must align")
        object.__setattr__(self, "coordinates", c)


def project_2d(
    vectors: np.ndarray,
    *,
    seed: int = 0,
    perplexity: float | None = None,
) -> np.ndarray:
    """Deterministic t-SNE to two dimensions.

    Perplexity defaults to min(30, (n - 1) / 3) so tiny diagnostic sets do
    not violate the estimator's constraint; near-duplicate rows get a tiny
    seeded jitter because exactly coincident points can degenerate.
    """
    from sklearn.manifold import TSNE

    X = np.asarray(vectors, dtype=np.float64)
    n = len(X)
    if n < 3:
        raise ValueError("t-SNE needs at least 3 points")
    if perplexity is None:
        perplexity = min(30.0, max(1.0, (n - 1) / 3.0))
    if perplexity >= n:
        raise ValueError(f"perplexity {perplexity} must be below the point count {n}")
    rng = np.random.default_rng(seed)
    if len(np.unique(X.round(decimals=12), axis=0)) < n:
        X = X + rng.normal(0.0, 1e-9, X.shape)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FutureWarning)
        tsne = TSNE(
            n_components=2,
            perplexity=perplexity,
            random_state=seed,
            init="pca",
            method="exact" if n < 64 else "barnes_hut",
        )
        return np.asarray(tsne.fit_transform(X), dtype=np.float64)


def write_projection_csv(points: ProjectedPoints, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "x", "y"])
        for eid, label, (x, y) in zip(points.ids, points.labels, points.coordinates):
            writer.writerow([eid, label, f"{x:.6f}", f"{y:.6f}"])


def plot_projection(points: ProjectedPoints, path: str | Path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 5))
    for label in sorted(set(points.labels)):
        mask = np.array([l == label for l in points.labels])
        ax.scatter(
            points.coordinates[mask, 0],
            points.coordinates[mask, 1],
            s=14,
            alpha=0.75,
            label=label,
        )
    ax.set_title(title)
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def tsne_views(
    vectors: np.ndarray,
    ids: Sequence[str],
    class_labels: Sequence[str],
    origin_labels: Sequence[str],
    *,
    per_class: bool = True,
    seed: int = 0,
) -> dict[str, ProjectedPoints]:
    """One projection per class, or a single combined projection.

    Points are labeled by origin (original domain or generated
    pseudo-domain) so the views show how generated images fill the space
    between domains.  With ``per_class`` the result holds exactly one view
    per class (classes with fewer than 3 points are skipped); otherwise a
    single view named "all" covers every embedding.
    """
    ids = tuple(ids)
    class_labels = tuple(class_labels)
    origin_labels = tuple(origin_labels)
    views: dict[str, ProjectedPoints] = {}
    if not per_class:
        views["all"] = ProjectedPoints(
            coordinates=project_2d(vectors, seed=seed), ids=ids, labels=origin_labels
        )
        return views
    for class_name in sorted(set(class_labels)):
        mask = np.array([c == class_name for c in class_labels])
        if int(mask.sum()) < 3:
            continue
        views[f"class_{class_name}"] = ProjectedPoints(
            coordinates=project_2d(np.asarray(vectors)[mask], seed=seed),
            ids=tuple(np.array(ids, dtype=object)[mask]),
            labels=tuple(np.array(origin_labels, dtype=object)[mask]),
        )
    return views
