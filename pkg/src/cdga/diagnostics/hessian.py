"""Classifier-head Hessians and the spectral-norm transfer distance.

For a softmax head z = W x (no bias) under mean cross-entropy, the Hessian
with respect to the flattened weights has the closed form

    H = (1/N) sum_n (diag(p_n) - p_n p_n^T)  kron  (x_n x_n^T)

with p_n the predicted probabilities and x_n the penultimate features; the
Kronecker ordering matches the row-major layout of W.ravel().  The
distance between two heads' Hessians is the spectral norm of their
difference, the quantity that bounds the second-order term when a minimum
found on one domain is evaluated on another.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

DENSE_FALLBACK_MAX_DIM = 512


@dataclass(frozen=True)
class HeadHessian:
    matrix: np.ndarray
    domain: str
    step: int | None = None
    n_samples: int | None = None

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"Hessian must be square, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("Hessian has non-finite entries")
        scale = max(1.0, float(np.abs(m).max()))
        if np.abs(m - m.T).max() > 1e-8 * scale:
            raise ValueError("Hessian must be symmetric")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def head_hessian_from_features(
    features: np.ndarray,
    weights: np.ndarray,
    *,
    domain: str = "",
    step: int | None = None,
) -> HeadHessian:
    """Closed-form head Hessian from penultimate features and head weights.

    ``features`` is N x D, ``weights`` is C x D; the result is CD x CD and
    positive semi-definite.  All-zero features give the zero matrix.
    """
    X = np.asarray(features, dtype=np.float64)
    W = np.asarray(weights, dtype=np.float64)
    if X.ndim != 2 or W.ndim != 2 or X.shape[1] != W.shape[1]:
        raise ValueError(
            f"features {X.shape} and weights {W.shape} are incompatible"
        )
    if len(X) == 0:
        raise ValueError("need at least one sample")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(W))):
        raise ValueError("non-finite features or weights")
    P = softmax_rows(X @ W.T)
    C, D = W.shape
    H = np.zeros((C * D, C * D), dtype=np.float64)
    for p, x in zip(P, X):
        S = np.diag(p) - np.outer(p, p)
        H += np.kron(S, np.outer(x, x))
    H /= len(X)
    H = 0.5 * (H + H.T)  # kill accumulation asymmetry at machine precision
    return HeadHessian(matrix=H, domain=domain, step=step, n_samples=len(X))


def classifier_head_hessian(
    model,
    images,
    *,
    domain: str = "",
    step: int | None = None,
    batch: int = 256,
) -> HeadHessian:
    """Head Hessian of a torch model exposing ``features()`` and ``head``."""
    import torch

    if getattr(model.head, "bias", None) is not None:
        raise ValueError("closed form covers bias-free heads only")
    model.eval()
    chunks = []
    with torch.no_grad():
        for i in range(0, len(images), batch):
            chunks.append(model.features(images[i : i + batch]).double().cpu().numpy())
    features = np.concatenate(chunks, axis=0)
    weights = model.head.weight.detach().double().cpu().numpy()
    return head_hessian_from_features(features, weights, domain=domain, step=step)


def spectral_norm(
    matrix: np.ndarray,
    *,
    max_iter: int = 2000,
    tol: float = 1e-10,
    seed: int = 0,
) -> float:
    """Largest absolute eigenvalue of a symmetric matrix by power iteration.

    Falls back to a dense eigensolver when iteration has not converged and
    the matrix is small enough; otherwise returns the last estimate with a
    warning.
    """
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    n = M.shape[0]
    if n == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = M @ v
        new_sigma = float(np.linalg.norm(w))
        if new_sigma == 0.0:
            return 0.0
        v = w / new_sigma
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1.0):
            return new_sigma
        sigma = new_sigma
    if n <= DENSE_FALLBACK_MAX_DIM:
        return float(np.abs(scipy.linalg.eigvalsh(M)).max())
    warnings.warn("spectral norm power iteration did not converge; returning last estimate")
    return sigma


def hessian_distance(a: HeadHessian, b: HeadHessian, **kwargs) -> float:
    """Spectral norm of the difference between two head Hessians."""
    if a.dim != b.dim:
        raise ValueError(f"Hessian dimensions differ: {a.dim} vs {b.dim}")
    return spectral_norm(a.matrix - b.matrix, **kwargs)
