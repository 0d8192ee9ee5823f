"""Diversity shift between two feature populations.

The estimator histograms both populations on a shared binning and reports
total variation distance, 0.5 * sum |p - q|.  Multi-dimensional features
are reduced to one-dimensional views: each coordinate, plus the projection
onto the mean-difference direction (a linear stand-in for the environment
classifier); the reported shift is the worst view.  A Gaussian KDE variant
is available for smooth estimates on small samples.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import gaussian_kde

DEFAULT_BINS = 20


def histogram_tv(a: np.ndarray, b: np.ndarray, bins: int) -> float:
    """Total variation between shared-bin histograms of two 1-D samples."""
    pooled_min = min(a.min(), b.min())
    pooled_max = max(a.max(), b.max())
    if pooled_max == pooled_min:
        return 0.0
    edges = np.linspace(pooled_min, pooled_max, bins + 1)
    pa, _ = np.histogram(a, bins=edges)
    pb, _ = np.histogram(b, bins=edges)
    pa = pa / pa.sum()
    pb = pb / pb.sum()
    return float(0.5 * np.abs(pa - pb).sum())


def _kde_tv(a: np.ndarray, b: np.ndarray, grid_size: int = 512) -> float:
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi == lo:
        return 0.0
    span = hi - lo
    grid = np.linspace(lo - 0.1 * span, hi + 0.1 * span, grid_size)
    try:
        ka = gaussian_kde(a)(grid)
        kb = gaussian_kde(b)(grid)
    except np.linalg.LinAlgError:
        return 0.0  # degenerate sample, no spread to compare
    ka = ka / np.trapezoid(ka, grid)
    kb = kb / np.trapezoid(kb, grid)
    tv = 0.5 * np.trapezoid(np.abs(ka - kb), grid)
    return float(min(1.0, tv))


def _views(a: np.ndarray, b: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    views = [(a[:, d], b[:, d]) for d in range(a.shape[1])]
    direction = b.mean(axis=0) - a.mean(axis=0)
    norm = np.linalg.norm(direction)
    if norm > 1e-12:
        direction = direction / norm
        views.append((a @ direction, b @ direction))
    return views


def diversity_shift(
    features_a: np.ndarray,
    features_b: np.ndarray,
    *,
    bins: int = DEFAULT_BINS,
    method: str = "histogram",
) -> float:
    """Worst-view total variation distance between two feature sets.

    Both inputs are (n, d) arrays sharing d; one-dimensional inputs may be
    flat.  The result is symmetric and lies in [0, 1].  Raises when either
    sample is smaller than the bin count, where histogram estimates stop
    being meaningful.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"feature shapes incompatible: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("features must be finite")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if method not in ("histogram", "kde"):
        raise ValueError(f"unknown method {method!r}")
    if method == "histogram" and (len(a) < bins or len(b) < bins):
        raise ValueError(
            f"samples of size {len(a)} and {len(b)} are too small for {bins} bins"
        )
    if method == "kde" and (len(a) < 2 or len(b) < 2):
        raise ValueError("kde estimate needs at least 2 samples per side")

    values = []
    for va, vb in _views(a, b):
        if method == "histogram":
            values.append(histogram_tv(va, vb, bins))
        else:
            values.append(_kde_tv(va, vb))
    return float(max(values))
