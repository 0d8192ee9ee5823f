"""Diagnostic report assembly and plotting.

A report is a JSON document of named sections, each carrying a status
("ok" or "skipped" with a reason) and its numbers; plots and CSV sidecars
are written next to it and referenced by relative path so the report stays
portable and byte-reproducible across output locations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class DiagnosticReport:
    config_hash: str
    sections: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)

    def add_section(self, name: str, data: dict) -> None:
        self.sections[name] = {"status": "ok", **data}

    def skip_section(self, name: str, reason: str) -> None:
        self.sections[name] = {"status": "skipped", "reason": reason}

    def add_artifact(self, name: str, path: str) -> None:
        self.artifacts[name] = path

    def to_json(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "sections": self.sections,
            "artifacts": dict(sorted(self.artifacts.items())),
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        tmp.replace(path)

    @staticmethod
    def load(path: str | Path) -> "DiagnosticReport":
        payload = json.loads(Path(path).read_text())
        return DiagnosticReport(
            config_hash=payload["config_hash"],
            sections=payload["sections"],
            artifacts=payload["artifacts"],
        )


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_near_duplicate_heatmap(result, path: str | Path) -> None:
    plt = _figure()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(result.rates, cmap="viridis", vmin=0.0)
    ax.set_xticks(range(len(result.generated_domains)))
    ax.set_xticklabels(result.generated_domains, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(result.original_domains)))
    ax.set_yticklabels(result.original_domains, fontsize=7)
    for i in range(len(result.original_domains)):
        for j in range(len(result.generated_domains)):
            ax.text(j, i, f"{result.rates[i, j]:.1f}", ha="center", va="center",
                    fontsize=6, color="white")
    ax.set_xlabel("generated")
    ax.set_ylabel("original")
    ax.set_title(f"near-duplicate rate (%) at cosine >= {result.threshold}")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_series(
    series: dict[str, tuple],
    path: str | Path,
    *,
    xlabel: str,
    ylabel: str,
    title: str = "",
    logx: bool = False,
) -> None:
    """Overlaid line plots; ``series`` maps label -> (xs, ys)."""
    plt = _figure()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(series):
        xs, ys = series[label]
        ax.plot(xs, ys, marker="o", markersize=3, label=label)
    if logx:
        ax.set_xscale("symlog", linthresh=1e-5)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bars(values: dict[str, float], path: str | Path, *, ylabel: str,
              title: str = "") -> None:
    plt = _figure()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = sorted(values)
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(labels)), 4))
    ax.bar(range(len(labels)), [values[k] for k in labels])
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
