"""Near-duplicate rates between original and generated image sets.

For each original-domain / generated-domain pair, the rate is the
percentage of original images whose cosine similarity to at least one
generated image reaches the threshold (inclusive).  Similarities come from
exact pairwise dot products of unit-norm embeddings; no approximate index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cdga.diagnostics.embeddings import EmbeddingMatrix

DEFAULT_THRESHOLD = 0.95


@dataclass(frozen=True)
class NearDuplicateResult:
    rates: np.ndarray
    original_domains: tuple[str, ...]
    generated_domains: tuple[str, ...]
    threshold: float

    def rate(self, original: str, generated: str) -> float:
        i = self.original_domains.index(original)
        j = self.generated_domains.index(generated)
        return float(self.rates[i, j])

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "original_domains": list(self.original_domains),
            "generated_domains": list(self.generated_domains),
            "rates": [[float(v) for v in row] for row in self.rates],
        }


def near_duplicate_rate(
    originals: EmbeddingMatrix,
    generated: EmbeddingMatrix,
    threshold: float = DEFAULT_THRESHOLD,
) -> float:
    """Percentage of originals with a generated neighbor at >= threshold."""
    if len(originals) == 0:
        return 0.0
    if len(generated) == 0:
        return 0.0
    if originals.dim != generated.dim:
        raise ValueError(
            f"embedding dimensions differ: {originals.dim} vs {generated.dim}"
        )
    sims = originals.vectors @ generated.vectors.T
    matched = (sims >= threshold).any(axis=1)
    return float(matched.mean() * 100.0)


def near_duplicate_rates(
    originals: dict[str, EmbeddingMatrix],
    generated: dict[str, EmbeddingMatrix],
    threshold: float = DEFAULT_THRESHOLD,
) -> NearDuplicateResult:
    """Full original x generated domain matrix of near-duplicate rates."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    orig_domains = tuple(sorted(originals))
    gen_domains = tuple(sorted(generated))
    rates = np.zeros((len(orig_domains), len(gen_domains)), dtype=np.float64)
    for i, od in enumerate(orig_domains):
        for j, gd in enumerate(gen_domains):
            rates[i, j] = near_duplicate_rate(originals[od], generated[gd], threshold)
    return NearDuplicateResult(
        rates=rates,
        original_domains=orig_domains,
        generated_domains=gen_domains,
        threshold=threshold,
    )
