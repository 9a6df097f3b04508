"""Initial embedding channels.

Four schemes: uniform noise, products of color channels, and two
density encodings that fit a Gaussian to each of ``2**d`` pixel clusters
(clusters from RGB k-means, or from weighted spectral clustering) and
mix the resulting density maps into ``d`` binary-coded channels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .graph import AffinityGraph
from .segment import kmeans
from .sparsela import smallest_generalized_eigvecs
from .validation import check_features, check_image

logger = logging.getLogger(__name__)

SCHEMES = ("random", "color_combo", "gmm_density", "wsc_density")
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class GaussianModel:
    mean: np.ndarray
    covariance: np.ndarray

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        dim = self.mean.size
        chol = np.linalg.cholesky(self.covariance)
        z = np.linalg.solve(chol, (x - self.mean).T)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        return -0.5 * (np.sum(z * z, axis=0) + logdet + dim * np.log(2 * np.pi))

    def pdf(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_pdf(x))


def _center(y: np.ndarray) -> np.ndarray:
    return y - y.mean(axis=0)


def init_random(n: int, d: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return _center(rng.uniform(-0.5, 0.5, size=(n, d)))


def init_color_combo(img: np.ndarray, d: int) -> np.ndarray:
    """Mean-centered products R*G, R*B, G*B, R*G*B (first ``d``)."""
    img = check_image(img, allow_gray=False)
    if not 1 <= d <= 4:
        raise ValueError(f"color combination supports 1 <= d <= 4, got {d}")
    r, g, b = (img[:, :, c].ravel() for c in range(3))
    chans = np.column_stack([r * g, r * b, g * b, r * g * b])[:, :d]
    return _center(chans)


def fit_gaussian(x: np.ndarray, reg: float = 1e-4) -> GaussianModel:
    """Sample mean and covariance with ``reg * trace / dim`` added to the diagonal."""
    mean = x.mean(axis=0)
    diff = x - mean
    cov = diff.T @ diff / x.shape[0]
    dim = cov.shape[0]
    floor = max(reg * np.trace(cov) / dim, 1e-12)
    return GaussianModel(mean, cov + floor * np.eye(dim))


def fit_clusters_kmeans(features, k: int, seed: int = 0):
    """k-means labels and one regularized Gaussian per non-empty cluster.

    Returns ``(labels, models)``; labels are compacted when a cluster is
    empty, so ``len(models)`` can be smaller than ``k``.
    """
    x = check_features(features)
    labels, _, _ = kmeans(x, k, seed)
    present = np.flatnonzero(np.bincount(labels, minlength=k))
    if present.size < k:
        logger.warning("k-means left %d empty clusters; dropping them", k - present.size)
        remap = np.full(k, -1)
        remap[present] = np.arange(present.size)
        labels = remap[labels]
    models = [fit_gaussian(x[labels == c]) for c in range(present.size)]
    return labels, models


def channel_members(d: int, i: int) -> list[int]:
    """0-based model indices mixed into channel ``i`` (1-based)."""
    size = 2**d
    idx = {
        (2 ** (d + 1 - i) * j + k) % size
        for j in range(1, 2 ** (i - 1) + 1)
        for k in range(1, 2 ** (d - i) + 1)
    }
    # the index pattern is 1-based with 0 standing for the last model
    return sorted((m - 1) % size for m in idx)


def density_encode(models, features, d: int) -> np.ndarray:
    """Sum ``2**(d-1)`` density maps per channel, then subtract the mean."""
    x = check_features(features)
    models = list(models)
    if len(models) != 2**d:
        raise ValueError(f"density encoding needs {2**d} models, got {len(models)}")
    dens = np.column_stack([mdl.pdf(x) for mdl in models])
    out = np.column_stack([dens[:, channel_members(d, i)].sum(axis=1) for i in range(1, d + 1)])
    return _center(out)


def _pad_models(models: list, labels: np.ndarray, target: int) -> list:
    if len(models) == target:
        return models
    logger.warning("padding %d -> %d Gaussians with the largest cluster", len(models), target)
    big = int(np.argmax(np.bincount(labels)))
    return models + [models[big]] * (target - len(models))


def _ordered_models(models, labels, colors) -> list:
    """Order Gaussians by mean luminance of their member pixels."""
    luma = colors @ LUMA if colors.shape[1] == 3 else colors[:, 0]
    keys = [luma[labels == c].mean() for c in range(len(models))]
    order = np.argsort(keys, kind="stable")
    return [models[c] for c in order]


def _check_cluster_count(n: int, d: int) -> None:
    if 2**d > n:
        raise ValueError(f"{2**d} clusters requested for {n} pixels")


def init_gmm_density(img: np.ndarray, d: int, seed: int = 0) -> np.ndarray:
    img = check_image(img)
    colors = img.reshape(img.shape[0] * img.shape[1], -1)
    _check_cluster_count(colors.shape[0], d)
    labels, models = fit_clusters_kmeans(colors, 2**d, seed)
    models = _pad_models(_ordered_models(models, labels, colors), labels, 2**d)
    return density_encode(models, colors, d)


def spectral_features(graph: AffinityGraph, d: int, seed: int = 0) -> np.ndarray:
    """Nontrivial generalized eigenvectors scaled by ``1/sqrt(eigenvalue)``."""
    vals, vecs = smallest_generalized_eigvecs(graph.laplacian(), graph.degrees, d + 1, seed=seed)
    vals, vecs = vals[1:], vecs[:, 1:]
    floor = 1e-12 * max(vals.max(), 1.0)
    return vecs / np.sqrt(np.maximum(vals, floor))


def init_wsc_density(img: np.ndarray, graph: AffinityGraph, d: int, seed: int = 0) -> np.ndarray:
    img = check_image(img)
    colors = img.reshape(img.shape[0] * img.shape[1], -1)
    if graph.n != colors.shape[0]:
        raise ValueError("graph and image sizes differ")
    _check_cluster_count(graph.n, d)
    feats = spectral_features(graph, d, seed)
    labels, models = fit_clusters_kmeans(feats, 2**d, seed)
    models = _pad_models(_ordered_models(models, labels, colors), labels, 2**d)
    return density_encode(models, feats, d)


def initialize(scheme: str, img: np.ndarray, graph: AffinityGraph, d: int, seed: int = 0):
    if scheme == "random":
        return init_random(graph.n, d, seed)
    if scheme == "color_combo":
        return init_color_combo(img, d)
    if scheme == "gmm_density":
        return init_gmm_density(img, d, seed)
    if scheme == "wsc_density":
        return init_wsc_density(img, graph, d, seed)
    raise ValueError(f"unknown initialization {scheme!r}; choose from {SCHEMES}")
