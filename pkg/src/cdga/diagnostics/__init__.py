"""Domain-shift diagnostics: embeddings, near-duplicates, Hessian
transferability, diversity shift, adversarial robustness, and sharpness."""

from cdga.diagnostics.embeddings import (
    EmbeddingMatrix,
    PixelStatEncoder,
    embed_images,
)
from cdga.diagnostics.neardup import NearDuplicateResult, near_duplicate_rates
from cdga.diagnostics.hessian import (
    HeadHessian,
    classifier_head_hessian,
    head_hessian_from_features,
    hessian_distance,
    spectral_norm,
)
from cdga.diagnostics.diversity import diversity_shift
from cdga.diagnostics.attacks import RobustnessCurve, fgsm, pgd, robustness_curve
from cdga.diagnostics.sharpness import SharpnessTrace, sharpness, sharpness_gap

__all__ = [
    "EmbeddingMatrix",
    "PixelStatEncoder",
    "embed_images",
    "NearDuplicateResult",
    "near_duplicate_rates",
    "HeadHessian",
    "classifier_head_hessian",
    "head_hessian_from_features",
    "hessian_distance",
    "spectral_norm",
    "diversity_shift",
    "RobustnessCurve",
    "fgsm",
    "pgd",
    "robustness_curve",
    "SharpnessTrace",
    "sharpness",
    "sharpness_gap",
]
