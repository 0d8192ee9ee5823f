"""Experiment configuration: YAML loading, validation, content hashing.

A config fully determines every stage except where its outputs land, so
the content hash excludes ``out_root``; rerunning the same experiment into
a different directory produces byte-identical artifacts with the same
embedded hash.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from cdga.dataset import AugmentationKind

DEFAULT_AUGMENTATION = {
    "mode": "cdga_pg",
    "batch_size": 1,  # int, or "balanced" for per-cell equalizing sizes
    "target_descriptions": {},
    "seed": 0,
}

DEFAULT_BACKEND = {
    "kind": "stub",
    "params": {},
    "workers": 1,
    "max_retries": 1,
}

DEFAULT_BENCHMARK = {
    "algorithms": ["erm", "augmented"],
    "n_hparams": 1,
    "n_trials": 1,
    "model": {"architecture": "small_cnn", "width": 8, "pretrained": False},
    "space": {},
    "steps": 500,
    "checkpoint_every": 100,
    "image_size": 24,
    "selection_rules": ["train_validation", "oracle"],
}

DEFAULT_DIAGNOSTICS = {
    "sections": [
        "near_dup",
        "tsne",
        "hessian_trace",
        "diversity",
        "robustness",
        "sharpness",
    ],
    "target": None,  # defaults to the first benchmark target
    "near_dup_threshold": 0.95,
    "bins": 10,
    "encoder": "pixel_stats",
    "max_images_per_domain": 64,
    "tsne_per_class": True,
    "fgsm_grid": [0.0, 0.001, 0.01, 0.05, 0.1],
    "pgd_rho": 0.05,
    "pgd_iters": [1, 2, 5],
    "sharpness_rho": 0.05,
    "steps": 200,
    "checkpoint_every": 40,
}


class ConfigError(ValueError):
    """The experiment configuration is malformed."""


def _merge(defaults: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path}.{key}")
        if isinstance(defaults[key], dict) and key not in ("params", "space",
                                                           "target_descriptions", "model"):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}.{key} must be a mapping")
            out[key] = _merge(defaults[key], value, f"{path}.{key}")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    dataset_root: str
    targets: list[str]
    out_root: str = "runs/cdga"
    seed: int = 0
    suite: str | None = None
    descriptions: dict = field(default_factory=dict)
    augmentation: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_AUGMENTATION))
    backend: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_BACKEND))
    benchmark: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_BENCHMARK))
    diagnostics: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_DIAGNOSTICS))

    def __post_init__(self) -> None:
        if not self.targets:
            raise ConfigError("at least one target domain is required")
        if len(set(self.targets)) != len(self.targets):
            raise ConfigError("targets must be unique")
        try:
            AugmentationKind(self.augmentation["mode"])
        except ValueError as exc:
            raise ConfigError(f"unknown augmentation mode: {self.augmentation['mode']}") from exc
        b = self.augmentation["batch_size"]
        if not (b == "balanced" or (isinstance(b, int) and b >= 1)):
            raise ConfigError("augmentation batch_size must be a positive int or 'balanced'")
        if self.benchmark["n_hparams"] < 1 or self.benchmark["n_trials"] < 1:
            raise ConfigError("n_hparams and n_trials must be >= 1")
        bad = [a for a in self.benchmark["algorithms"] if a not in ("erm", "augmented")]
        if bad:
            raise ConfigError(f"unknown benchmark algorithms: {bad}")
        from cdga.selection import ALL_RULES

        bad = [r for r in self.benchmark["selection_rules"] if r not in ALL_RULES]
        if bad:
            raise ConfigError(f"unknown selection rules: {bad}")

    @property
    def mode_kind(self) -> AugmentationKind:
        return AugmentationKind(self.augmentation["mode"])

    def domain_descriptions(self) -> dict[str, str]:
        """Preset suite descriptions overlaid with explicit ones."""
        merged: dict[str, str] = {}
        if self.suite:
            from cdga.prompts import descriptions_for

            merged.update(descriptions_for(self.suite))
        merged.update(self.descriptions)
        return merged

    def to_json(self) -> dict:
        return {
            "dataset_root": self.dataset_root,
            "targets": list(self.targets),
            "out_root": self.out_root,
            "seed": self.seed,
            "suite": self.suite,
            "descriptions": dict(self.descriptions),
            "augmentation": copy.deepcopy(self.augmentation),
            "backend": copy.deepcopy(self.backend),
            "benchmark": copy.deepcopy(self.benchmark),
            "diagnostics": copy.deepcopy(self.diagnostics),
        }


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    payload = yaml.safe_load(Path(path).read_text())
    if not isinstance(payload, dict):
        raise ConfigError("config file must hold a mapping")
    payload.update(overrides)
    known = {
        "dataset_root",
        "targets",
        "out_root",
        "seed",
        "suite",
        "descriptions",
        "augmentation",
        "backend",
        "benchmark",
        "diagnostics",
    }
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    for section, defaults in (
        ("augmentation", DEFAULT_AUGMENTATION),
        ("backend", DEFAULT_BACKEND),
        ("benchmark", DEFAULT_BENCHMARK),
        ("diagnostics", DEFAULT_DIAGNOSTICS),
    ):
        if section in payload:
            if not isinstance(payload[section], dict):
                raise ConfigError(f"{section} must be a mapping")
            payload[section] = _merge(defaults, payload[section], section)
    return ExperimentConfig(**payload)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(payload) -> str:
    """Stable content hash of any JSON-representable payload."""
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()[:16]


def experiment_hash(config: ExperimentConfig) -> str:
    """Hash of everything that determines artifact content (not location)."""
    payload = config.to_json()
    payload.pop("out_root")
    return config_hash(payload)
