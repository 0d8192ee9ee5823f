"""Multi-domain image dataset manifests and augmentation bookkeeping.

A dataset on disk is a tree ``root/<domain>/<class>/<image>`` with image
files ending in .jpg, .jpeg, or .png (case-insensitive).  Scanning such a
tree yields an immutable manifest; everything downstream (generation
planning, training, diagnostics) operates on manifests rather than raw
directory walks.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path, PurePosixPath
from typing import Iterable, Sequence

import numpy as np

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")

# Prefix and separator for pseudo-domains holding generated images.
GENERATED_PREFIX = "gen_"
GENERATED_SEPARATOR = "__to__"
TARGET_TOKEN = "TARGET"


class ManifestError(ValueError):
    """Raised when a dataset tree or manifest violates the layout contract."""


@dataclass(frozen=True)
class ManifestEntry:
    """One labeled image: indices into the manifest's domain/class lists."""

    domain_index: int
    class_index: int
    relative_path: str
    entry_id: str


@dataclass(frozen=True)
class DomainDatasetManifest:
    """Immutable snapshot of a multi-domain classification dataset."""

    root: Path
    domains: tuple[str, ...]
    classes: tuple[str, ...]
    entries: tuple[ManifestEntry, ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for e in self.entries:
            if not 0 <= e.domain_index < len(self.domains):
                raise ManifestError(f"domain index out of range: {e}")
            if not 0 <= e.class_index < len(self.classes):
                raise ManifestError(f"class index out of range: {e}")
            if e.entry_id in seen:
                raise ManifestError(f"duplicate entry id: {e.entry_id}")
            seen.add(e.entry_id)

    @cached_property
    def _by_id(self) -> dict[str, ManifestEntry]:
        return {e.entry_id: e for e in self.entries}

    def entry(self, entry_id: str) -> ManifestEntry:
        return self._by_id[entry_id]

    def domain_of(self, entry: ManifestEntry) -> str:
        return self.domains[entry.domain_index]

    def class_of(self, entry: ManifestEntry) -> str:
        return self.classes[entry.class_index]

    def path_of(self, entry: ManifestEntry) -> Path:
        return self.root / entry.relative_path

    def entries_in(self, domain: str, class_name: str | None = None) -> list[ManifestEntry]:
        d = self.domains.index(domain)
        if class_name is None:
            return [e for e in self.entries if e.domain_index == d]
        c = self.classes.index(class_name)
        return [e for e in self.entries if e.domain_index == d and e.class_index == c]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class CountTable:
    """Per-(domain, class) image counts; rows are domains, columns classes."""

    counts: np.ndarray
    domains: tuple[str, ...]
    classes: tuple[str, ...]

    def __post_init__(self) -> None:
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape != (len(self.domains), len(self.classes)):
            raise ValueError(
                f"counts shape {c.shape} does not match "
                f"{len(self.domains)} domains x {len(self.classes)} classes"
            )
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def max_cell(self) -> int:
        return int(self.counts.max()) if self.counts.size else 0


class AugmentationKind(str, enum.Enum):
    """Generation rules: cross-domain (CDGA), CDGA* adds target prompts,
    same-domain (SDGA); PG = prompt guidance, IG = image guidance."""

    CDGA_PG = "cdga_pg"
    CDGA_IG = "cdga_ig"
    CDGA_STAR_PG = "cdga_star_pg"
    SDGA_PG_LABEL = "sdga_pg_label"
    SDGA_PG_LABEL_DOMAIN = "sdga_pg_label_domain"
    SDGA_IG_LABEL = "sdga_ig_label"

    @property
    def is_cross_domain(self) -> bool:
        return self in (
            AugmentationKind.CDGA_PG,
            AugmentationKind.CDGA_IG,
            AugmentationKind.CDGA_STAR_PG,
        )

    @property
    def uses_target_prompt(self) -> bool:
        return self is AugmentationKind.CDGA_STAR_PG

    @property
    def guidance(self) -> str:
        if self in (AugmentationKind.CDGA_IG, AugmentationKind.SDGA_IG_LABEL):
            return "image"
        return "prompt"


@dataclass(frozen=True)
class AugmentationMode:
    """An augmentation recipe: the rule plus the generation batch size.

    ``batch_size`` is either a single positive int applied everywhere or a
    per-(source domain, class) integer table aligned with a CountTable
    (balanced generation).  ``target_description`` is required by the
    target-prompt rule and must stay unset otherwise.
    """

    kind: AugmentationKind
    batch_size: int | np.ndarray = 1
    target_description: str | None = None
    # Off by default: the size formula implies exactly one target-guided
    # image per entry; turning this on generates b of them instead.
    target_full_batch: bool = False

    def __post_init__(self) -> None:
        b = self.batch_size
        if isinstance(b, np.ndarray):
            if b.ndim != 2:
                raise ValueError("batch size table must be 2-D (domains x classes)")
            if np.any(b < 0):
                raise ValueError("batch sizes must be non-negative")
        elif int(b) < 1:
            raise ValueError("scalar batch size must be >= 1")
        if self.kind.uses_target_prompt and not self.target_description:
            raise ValueError(f"{self.kind.value} requires a target domain description")
        if not self.kind.uses_target_prompt and self.target_description is not None:
            raise ValueError("target description is only meaningful for target-prompt modes")
        if self.target_full_batch and not self.kind.uses_target_prompt:
            raise ValueError("target_full_batch applies only to target-prompt modes")

    def batch_for(self, domain_index: int, class_index: int) -> int:
        if isinstance(self.batch_size, np.ndarray):
            return int(self.batch_size[domain_index, class_index])
        return int(self.batch_size)


def _is_image(name: str) -> bool:
    return name.lower().endswith(IMAGE_EXTENSIONS)


def scan_dataset(root: str | Path) -> DomainDatasetManifest:
    """Walk ``root/<domain>/<class>/<image>`` into a manifest.

    Domains and classes are sorted lexicographically; the class list is the
    union over domains.  Stray files and empty directories produce warnings
    on the manifest, not errors.  A missing root is fatal.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root does not exist: {root}")

    warnings: list[str] = []
    domains = sorted(d.name for d in os.scandir(root) if d.is_dir())
    for item in os.scandir(root):
        if not item.is_dir() and _is_image(item.name):
            warnings.append(f"stray file outside domain directories: {item.name}")

    class_set: set[str] = set()
    for domain in domains:
        for item in os.scandir(root / domain):
            if item.is_dir():
                class_set.add(item.name)
            else:
                warnings.append(f"stray file at domain level: {domain}/{item.name}")
    classes = sorted(class_set)

    entries: list[ManifestEntry] = []
    for di, domain in enumerate(domains):
        domain_has_files = False
        for ci, class_name in enumerate(classes):
            class_dir = root / domain / class_name
            if not class_dir.is_dir():
                continue
            files = sorted(f.name for f in os.scandir(class_dir) if f.is_file())
            images = [f for f in files if _is_image(f)]
            for f in files:
                if not _is_image(f):
                    warnings.append(f"non-image file skipped: {domain}/{class_name}/{f}")
            if not images:
                warnings.append(f"empty class directory: {domain}/{class_name}")
                continue
            domain_has_files = True
            for name in images:
                stem = PurePosixPath(name).stem
                entries.append(
                    ManifestEntry(
                        domain_index=di,
                        class_index=ci,
                        relative_path=f"{domain}/{class_name}/{name}",
                        entry_id=f"{domain}/{class_name}/{stem}",
                    )
                )
        if not domain_has_files:
            warnings.append(f"empty domain directory: {domain}")

    return DomainDatasetManifest(
        root=root,
        domains=tuple(domains),
        classes=tuple(classes),
        entries=tuple(entries),
        warnings=tuple(warnings),
    )


def count_per_class_domain(manifest: DomainDatasetManifest) -> CountTable:
    counts = np.zeros((len(manifest.domains), len(manifest.classes)), dtype=np.int64)
    for e in manifest.entries:
        counts[e.domain_index, e.class_index] += 1
    return CountTable(counts=counts, domains=manifest.domains, classes=manifest.classes)


def balanced_batch_sizes(counts: CountTable) -> np.ndarray:
    """Per-cell batch sizes that equalize cells to the largest one.

    b[j][c] = ceil(m / counts[j][c]) with m the maximum cell count; empty
    cells get 0 and are excluded from generation.  An all-empty table is an
    error.
    """
    m = counts.max_cell
    if m == 0:
        raise ValueError("cannot balance an empty dataset: all cells are zero")
    c = counts.counts
    b = np.zeros_like(c)
    populated = c > 0
    b[populated] = -(-m // c[populated])  # ceil division
    return b


def augmented_size(
    count: int,
    n_train_domains: int,
    batch_size: int,
    kind: AugmentationKind | AugmentationMode,
) -> int:
    """Total images originating from a cell of ``count`` originals.

    Cross-domain generation pairs each original with every training domain
    (including its own), so a cell grows to (b*n + 1) * count; the
    target-prompt variant adds exactly one extra image per original for
    (b*n + 2) * count; same-domain generation gives (b + 1) * count.
    """
    target_full_batch = False
    if isinstance(kind, AugmentationMode):
        target_full_batch = kind.target_full_batch
        kind = kind.kind
    if count < 0 or n_train_domains < 1 or batch_size < 1:
        raise ValueError("count must be >= 0, domains and batch size >= 1")
    if kind is AugmentationKind.CDGA_STAR_PG:
        extra = batch_size if target_full_batch else 1
        return (batch_size * n_train_domains + 1 + extra) * count
    if kind.is_cross_domain:
        return (batch_size * n_train_domains + 1) * count
    return (batch_size + 1) * count


def generated_domain_name(source_domain: str, guidance_domain: str) -> str:
    """Pseudo-domain directory for images generated from ``source_domain``
    with guidance toward ``guidance_domain``."""
    return f"{GENERATED_PREFIX}{source_domain}{GENERATED_SEPARATOR}{guidance_domain}"


def parse_generated_domain(name: str) -> tuple[str, str] | None:
    """Invert generated_domain_name; None for ordinary domain names."""
    if not name.startswith(GENERATED_PREFIX) or GENERATED_SEPARATOR not in name:
        return None
    body = name[len(GENERATED_PREFIX):]
    source, _, guidance = body.partition(GENERATED_SEPARATOR)
    if not source or not guidance:
        return None
    return source, guidance


def training_group(domain_name: str) -> str:
    """Domain under which a (possibly generated) domain is grouped for
    training accounting: generated pseudo-domains belong to their source."""
    parsed = parse_generated_domain(domain_name)
    return parsed[0] if parsed else domain_name


def save_manifest(manifest: DomainDatasetManifest, path: str | Path) -> None:
    """Serialize to JSON with the root stored relative to the file.

    Keeping the root relative makes manifests byte-identical across output
    locations, which downstream determinism checks rely on.
    """
    path = Path(path)
    rel_root = os.path.relpath(manifest.root, path.parent)
    payload = {
        "root": Path(rel_root).as_posix(),
        "domains": list(manifest.domains),
        "classes": list(manifest.classes),
        "entries": [
            {
                "domain": manifest.domains[e.domain_index],
                "class": manifest.classes[e.class_index],
                "path": e.relative_path,
                "id": e.entry_id,
            }
            for e in manifest.entries
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def load_manifest(path: str | Path) -> DomainDatasetManifest:
    path = Path(path)
    payload = json.loads(path.read_text())
    domains = tuple(payload["domains"])
    classes = tuple(payload["classes"])
    d2i = {d: i for i, d in enumerate(domains)}
    c2i = {c: i for i, c in enumerate(classes)}
    entries = tuple(
        ManifestEntry(
            domain_index=d2i[e["domain"]],
            class_index=c2i[e["class"]],
            relative_path=e["path"],
            entry_id=e["id"],
        )
        for e in payload["entries"]
    )
    root = Path(os.path.normpath(path.parent / payload["root"]))
    return DomainDatasetManifest(root=root, domains=domains, classes=classes, entries=entries)
