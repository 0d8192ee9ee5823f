"""Cross-domain generative augmentation (CDGA) toolkit.

Plans and executes cross-domain synthetic image generation over
multi-domain classification datasets, benchmarks the result under a
DomainBed-style protocol, and quantifies domain shift with embedding,
Hessian, diversity, robustness, and sharpness diagnostics.
"""

from cdga.dataset import (
    AugmentationKind,
    AugmentationMode,
    CountTable,
    DomainDatasetManifest,
    ManifestEntry,
    ManifestError,
    augmented_size,
    balanced_batch_sizes,
    count_per_class_domain,
    load_manifest,
    save_manifest,
    scan_dataset,
)
from cdga.prompts import DOMAIN_DESCRIPTIONS, build_prompt

__version__ = "0.1.0"

__all__ = [
    "AugmentationKind",
    "AugmentationMode",
    "CountTable",
    "DomainDatasetManifest",
    "ManifestEntry",
    "ManifestError",
    "augmented_size",
    "balanced_batch_sizes",
    "count_per_class_domain",
    "load_manifest",
    "save_manifest",
    "scan_dataset",
    "DOMAIN_DESCRIPTIONS",
    "build_prompt",
]
