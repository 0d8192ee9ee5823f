"""ERM training over multi-domain manifests with checkpointed metrics.

The objective is the sum over training domains of the per-domain mean
cross-entropy; every optimization step draws an equal-sized sub-batch from
each training domain.  Generated pseudo-domains train under their source
domain's group, and every entry belongs to a per-domain 80/20 train/val
split in which generated images inherit the membership of their source
image.
"""

from __future__ import annotations

import re
import warnings
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from cdga.dataset import DomainDatasetManifest, parse_generated_domain, training_group
from cdga.models import ModelSpec, build_model

_SLOT_SUFFIX = re.compile(r"__s\d+$")

DEFAULT_SEARCH_SPACE: dict[str, dict] = {
    "lr": {"default": 3e-3, "log_uniform": (1e-4, 1e-2)},
    "weight_decay": {"default": 0.0, "log_uniform": (1e-6, 1e-2)},
    "batch_size": {"default": 16, "choice": (8, 16, 32)},
    "steps": {"default": 500, "const": 500},
}


def erm_loss(
    probabilities: np.ndarray,
    labels: np.ndarray,
    domain_ids: np.ndarray,
    n_domains: int | None = None,
) -> float:
    """Sum over domains of the mean negative log-likelihood per domain.

    ``probabilities`` holds one probability row per sample.  Domains are
    identified by integer ids; each domain present contributes the mean of
    -log p[label] over its samples.  When ``n_domains`` is given, ids must
    lie in [0, n_domains) and a declared domain with no samples contributes
    zero and raises a warning flag.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    domain_ids = np.asarray(domain_ids)
    if p.ndim != 2 or len(labels) != len(p) or len(domain_ids) != len(p):
        raise ValueError("probabilities, labels, and domain ids must align")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be finite and non-negative")
    if not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1")
    if np.any(labels < 0) or np.any(labels >= p.shape[1]):
        raise ValueError("labels out of range")
    picked = p[np.arange(len(p)), labels]
    if np.any(picked <= 0):
        raise ValueError("zero probability assigned to a true label")
    nll = -np.log(picked)
    if n_domains is not None:
        if np.any(domain_ids < 0) or np.any(domain_ids >= n_domains):
            raise ValueError("domain ids out of range")
        domains: Iterable[int] = range(n_domains)
    else:
        domains = np.unique(domain_ids)
    total = 0.0
    for d in domains:
        mask = domain_ids == d
        if not mask.any():
            warnings.warn(f"domain {d} contributed no samples to the loss", stacklevel=2)
            continue
        total += float(nll[mask].mean())
    return total


@dataclass(frozen=True)
class TrainConfig:
    model: ModelSpec
    hparams: dict
    seed: int
    target_domain: str
    train_domains: tuple[str, ...]
    holdout_domain: str | None = None
    image_size: int = 24
    checkpoint_every: int = 50
    algorithm: str = "ERM"
    hparam_index: int = 0
    trial_index: int = 0

    def __post_init__(self) -> None:
        if self.target_domain in self.train_domains:
            raise ValueError("target domain cannot also be a training domain")
        if self.holdout_domain is not None and self.holdout_domain not in self.train_domains:
            raise ValueError("holdout domain must be one of the training domains")

    def to_json(self) -> dict:
        return {
            "model": self.model.to_json(),
            "hparams": dict(self.hparams),
            "seed": self.seed,
            "target_domain": self.target_domain,
            "train_domains": list(self.train_domains),
            "holdout_domain": self.holdout_domain,
            "image_size": self.image_size,
            "checkpoint_every": self.checkpoint_every,
            "algorithm": self.algorithm,
            "hparam_index": self.hparam_index,
            "trial_index": self.trial_index,
        }

    @staticmethod
    def from_json(payload: dict) -> "TrainConfig":
        payload = dict(payload)
        payload["model"] = ModelSpec.from_json(payload["model"])
        payload["train_domains"] = tuple(payload["train_domains"])
        return TrainConfig(**payload)


@dataclass
class Checkpoint:
    step: int
    train_val_acc: dict[str, float]
    leave_out_acc: float | None
    target_acc: float
    state: dict | None = None

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "train_val_acc": dict(sorted(self.train_val_acc.items())),
            "leave_out_acc": self.leave_out_acc,
            "target_acc": self.target_acc,
        }

    @staticmethod
    def from_json(payload: dict) -> "Checkpoint":
        return Checkpoint(
            step=payload["step"],
            train_val_acc=dict(payload["train_val_acc"]),
            leave_out_acc=payload.get("leave_out_acc"),
            target_acc=payload["target_acc"],
        )


@dataclass
class BenchmarkRun:
    config: TrainConfig
    checkpoints: list[Checkpoint]
    status: str = "ok"

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "checkpoints": [c.to_json() for c in self.checkpoints],
            "status": self.status,
        }

    @staticmethod
    def from_json(payload: dict) -> "BenchmarkRun":
        return BenchmarkRun(
            config=TrainConfig.from_json(payload["config"]),
            checkpoints=[Checkpoint.from_json(c) for c in payload["checkpoints"]],
            status=payload["status"],
        )


@dataclass
class DatasetTensors:
    """Decoded images for one manifest, kept on CPU for reuse across runs."""

    images: torch.Tensor
    labels: torch.Tensor
    entry_ids: list[str]
    domains: list[str]
    groups: list[str]
    classes: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.entry_ids)


def load_dataset_tensors(manifest: DomainDatasetManifest, image_size: int = 24) -> DatasetTensors:
    arrays = np.empty((len(manifest.entries), 3, image_size, image_size), dtype=np.float32)
    labels = np.empty(len(manifest.entries), dtype=np.int64)
    entry_ids, domains, groups = [], [], []
    for i, entry in enumerate(manifest.entries):
        with Image.open(manifest.path_of(entry)) as img:
            rgb = img.convert("RGB").resize((image_size, image_size))
            arrays[i] = np.asarray(rgb, dtype=np.float32).transpose(2, 0, 1) / 255.0
        labels[i] = entry.class_index
        entry_ids.append(entry.entry_id)
        domain = manifest.domains[entry.domain_index]
        domains.append(domain)
        groups.append(training_group(domain))
    return DatasetTensors(
        images=torch.from_numpy(arrays),
        labels=torch.from_numpy(labels),
        entry_ids=entry_ids,
        domains=domains,
        groups=groups,
        classes=manifest.classes,
    )


def _source_entry_id(entry_id: str, domain: str) -> str | None:
    """Original entry a generated entry descends from, or None for originals."""
    parsed = parse_generated_domain(domain)
    if parsed is None:
        return None
    source_domain = parsed[0]
    _, class_name, stem = entry_id.split("/", 2)
    return f"{source_domain}/{class_name}/{_SLOT_SUFFIX.sub('', stem)}"


def make_validation_split(
    tensors: DatasetTensors, seed: int, val_fraction: float = 0.2
) -> set[str]:
    """Entry ids assigned to validation.

    Each original domain is split 80/20 with a domain-keyed seeded shuffle;
    a generated image lands on whichever side its source image did.
    """
    originals: dict[str, list[str]] = {}
    for eid, domain in zip(tensors.entry_ids, tensors.domains):
        if parse_generated_domain(domain) is None:
            originals.setdefault(domain, []).append(eid)
    val_ids: set[str] = set()
    for domain in sorted(originals):
        ids = sorted(originals[domain])
        rng = np.random.default_rng([seed, zlib.crc32(domain.encode())])
        perm = rng.permutation(len(ids))
        n_val = int(len(ids) * val_fraction)
        val_ids.update(ids[i] for i in perm[:n_val])
    for eid, domain in zip(tensors.entry_ids, tensors.domains):
        source = _source_entry_id(eid, domain)
        if source is not None and source in val_ids:
            val_ids.add(eid)
    return val_ids


def _accuracy(model: torch.nn.Module, images: torch.Tensor, labels: torch.Tensor,
              batch: int = 256) -> float:
    if len(labels) == 0:
        raise ValueError("cannot evaluate accuracy on an empty set")
    model.eval()
    correct = 0
    with torch.no_grad():
        for i in range(0, len(labels), batch):
            logits = model(images[i : i + batch])
            correct += int((logits.argmax(dim=1) == labels[i : i + batch]).sum())
    model.train()
    return correct / len(labels)


def train(
    config: TrainConfig,
    manifest: DomainDatasetManifest | None = None,
    *,
    tensors: DatasetTensors | None = None,
    capture_states: bool = False,
) -> BenchmarkRun:
    """Run ERM on the training domains and record metrics at a fixed cadence.

    Checkpoints carry per-group validation accuracy, accuracy on the held
    out training domain when one is configured, and target-domain accuracy
    (recorded for reporting; selection rules other than the oracle must not
    read it).  A non-finite loss marks the run failed and stops it, keeping
    the checkpoints collected so far.
    """
    if tensors is None:
        if manifest is None:
            raise ValueError("either a manifest or preloaded tensors is required")
        tensors = load_dataset_tensors(manifest, image_size=config.image_size)

    groups_present = set(tensors.groups)
    missing = [d for d in config.train_domains if d not in groups_present]
    if missing:
        raise ValueError(f"training domains missing from dataset: {missing}")
    if config.target_domain not in tensors.domains:
        raise ValueError(f"target domain missing from dataset: {config.target_domain}")

    val_ids = make_validation_split(tensors, seed=config.seed)
    is_val = np.array([eid in val_ids for eid in tensors.entry_ids])
    groups = np.array(tensors.groups)
    domains = np.array(tensors.domains)

    active = [d for d in config.train_domains if d != config.holdout_domain]
    train_idx = {
        d: np.flatnonzero((groups == d) & ~is_val) for d in active
    }
    val_idx = {d: np.flatnonzero((groups == d) & is_val) for d in active}
    for d in active:
        if len(train_idx[d]) == 0:
            raise ValueError(f"training domain {d!r} has no training-split images")
    target_idx = np.flatnonzero(domains == config.target_domain)
    holdout_idx = (
        np.flatnonzero(domains == config.holdout_domain)
        if config.holdout_domain is not None
        else None
    )

    torch.manual_seed(config.seed)
    model = build_model(config.model, num_classes=len(tensors.classes),
                        image_size=config.image_size)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=float(config.hparams.get("lr", 1e-3)),
        weight_decay=float(config.hparams.get("weight_decay", 0.0)),
    )
    batch = int(config.hparams.get("batch_size", 16))
    steps = int(config.hparams.get("steps", 300))
    sampler = torch.Generator().manual_seed(config.seed)

    X, y = tensors.images, tensors.labels
    checkpoints: list[Checkpoint] = []
    status = "ok"

    def evaluate(step: int) -> Checkpoint:
        ckpt = Checkpoint(
            step=step,
            train_val_acc={
                d: _accuracy(model, X[val_idx[d]], y[val_idx[d]])
                for d in active
                if len(val_idx[d]) > 0
            },
            leave_out_acc=(
                _accuracy(model, X[holdout_idx], y[holdout_idx])
                if holdout_idx is not None
                else None
            ),
            target_acc=_accuracy(model, X[target_idx], y[target_idx]),
        )
        if capture_states:
            ckpt.state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return ckpt

    for step in range(1, steps + 1):
        parts_x, parts_y, sizes = [], [], []
        for d in active:
            pool = train_idx[d]
            pick = torch.randint(len(pool), (batch,), generator=sampler)
            idx = torch.from_numpy(pool)[pick]
            parts_x.append(X[idx])
            parts_y.append(y[idx])
            sizes.append(batch)
        logits = model(torch.cat(parts_x))
        targets = torch.cat(parts_y)
        loss = logits.new_zeros(())
        offset = 0
        for size in sizes:
            loss = loss + F.cross_entropy(
                logits[offset : offset + size], targets[offset : offset + size]
            )
            offset += size
        if not torch.isfinite(loss):
            status = "failed"
            break
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if step % config.checkpoint_every == 0 or step == steps:
            checkpoints.append(evaluate(step))

    return BenchmarkRun(config=config, checkpoints=checkpoints, status=status)


def _sample_hparams(space: Mapping[str, Mapping], rng: np.random.Generator,
                    use_defaults: bool) -> dict:
    out = {}
    for name in sorted(space):
        spec = space[name]
        if "const" in spec:
            out[name] = spec["const"]
        elif use_defaults:
            out[name] = spec["default"]
        elif "log_uniform" in spec:
            lo, hi = spec["log_uniform"]
            out[name] = float(10 ** rng.uniform(np.log10(lo), np.log10(hi)))
        elif "uniform" in spec:
            lo, hi = spec["uniform"]
            out[name] = float(rng.uniform(lo, hi))
        elif "choice" in spec:
            options = list(spec["choice"])
            out[name] = options[int(rng.integers(len(options)))]
        else:
            out[name] = spec["default"]
    return out


def random_search(
    space: Mapping[str, Mapping],
    n_hparams: int,
    n_trials: int,
    seed: int,
    base: TrainConfig,
) -> list[TrainConfig]:
    """Enumerate n_hparams x n_trials configs in (hparam, trial) order.

    Hyperparameter choice 0 uses each dimension's default (the single-run
    protocol with n_hparams=1 trains exactly the default configuration);
    later choices are drawn at random.  Within one choice, trials differ
    only in the training seed.
    """
    if n_hparams < 1 or n_trials < 1:
        raise ValueError("n_hparams and n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    hparam_sets = [
        _sample_hparams(space, rng, use_defaults=(h == 0)) for h in range(n_hparams)
    ]
    configs = []
    for h, hp in enumerate(hparam_sets):
        for t in range(n_trials):
            configs.append(
                replace(
                    base,
                    hparams=dict(hp),
                    seed=seed + 1000 * h + t,
                    hparam_index=h,
                    trial_index=t,
                )
            )
    return configs
