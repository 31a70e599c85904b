"""RBF anchor kernel maps.

All matrices follow the column-sample convention: a modality is stored as a
``(d, n)`` array whose columns are samples.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateKernelError, InvalidArgumentError, InvalidDataError


@dataclass(frozen=True)
class KernelMap:
    """Anchor set and width defining ``kappa(x)`` for one modality.

    Attributes:
        anchors: ``(d, M)`` array, columns are anchor points.
        sigma: kernel width, ``kappa_i(x) = exp(-||x - a_i||^2 / sigma)``.
        modality_id: index of the modality this map belongs to.
    """

    anchors: np.ndarray
    sigma: float
    modality_id: int = 0

    def __post_init__(self):
        if self.anchors.ndim != 2 or self.anchors.shape[1] < 1:
            raise InvalidArgumentError("anchors must be a (d, M) array with M >= 1")
        if not self.sigma > 0:
            raise InvalidArgumentError(f"sigma must be positive, got {self.sigma}")

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[1]

    @property
    def dim(self) -> int:
        return self.anchors.shape[0]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return kernel_features(self, X)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-D feature matrix, got ndim={X.ndim}")
    return X


def center_features(X) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the per-feature mean across samples.

    Returns the centered ``(d, n)`` matrix and the ``(d,)`` mean, which must be
    reused to center unseen queries.
    """
    X = _as_matrix(X)
    if X.shape[1] < 1 or X.shape[0] < 1:
        raise InvalidDataError("feature matrix must have at least one row and column")
    if not np.all(np.isfinite(X)):
        raise InvalidDataError("feature matrix contains non-finite values")
    mean = X.mean(axis=1)
    return X - mean[:, None], mean


def estimate_sigma(X) -> float:
    """Mean squared distance over all ordered sample pairs.

    ``(1/n^2) sum_{i,j} ||x_i - x_j||^2`` equals ``(2/n) sum_i ||x_i - xbar||^2``,
    so the full average is computed exactly in O(nd) without enumerating pairs.
    """
    X = _as_matrix(X)
    n = X.shape[1]
    if n < 2:
        raise InvalidArgumentError("estimate_sigma needs at least two samples")
    # shifting by the first sample keeps identical columns exactly zero
    shifted = X - X[:, :1]
    centered = shifted - shifted.mean(axis=1, keepdims=True)
    sigma = 2.0 * float(np.einsum("ij,ij->", centered, centered)) / n
    if not sigma > 0:
        raise DegenerateKernelError("all samples are identical; kernel width is zero")
    return sigma


def sample_anchors(X, M: int, seed: int = 0, modality_id: int = 0) -> KernelMap:
    """Pick ``M`` distinct columns of ``X`` uniformly at random as anchors."""
    X = _as_matrix(X)
    n = X.shape[1]
    if not 1 <= M <= n:
        raise InvalidArgumentError(f"anchor count M={M} must lie in [1, n={n}]")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=M, replace=False)
    return KernelMap(anchors=X[:, idx].copy(), sigma=estimate_sigma(X), modality_id=modality_id)


def kernel_features(kmap: KernelMap, X) -> np.ndarray:
    """``(M, n)`` matrix with entry ``(i, j) = exp(-||x_j - a_i||^2 / sigma)``."""
    X = _as_matrix(X)
    if X.shape[0] != kmap.dim:
        raise InvalidArgumentError(
            f"feature dimension {X.shape[0]} does not match anchors ({kmap.dim})"
        )
    sq = cdist(kmap.anchors.T, X.T, metric="sqeuclidean")
    return np.exp(-sq / kmap.sigma)
