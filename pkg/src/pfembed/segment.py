"""Clustering-based segmentation of embedding channels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_features

DYNAMIC_KS = tuple(range(5, 26, 2))


@dataclass
class Segmentation:
    labels: np.ndarray  # (height, width)
    k: int

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class ClusterScheme:
    """How the number of clusters is chosen.

    ``fixed`` takes k from each ground truth, ``dynamic`` tries the odd
    values 5..25, ``explicit`` uses ``k``.
    """

    kind: str = "explicit"
    k: int = 2

    def __post_init__(self):
        if self.kind not in ("fixed", "dynamic", "explicit"):
            raise ValueError(f"unknown cluster scheme {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # explicit differences keep the result exact for duplicated points
    out = np.empty((x.shape[0], centers.shape[0]))
    for c in range(centers.shape[0]):
        diff = x - centers[c]
        out[:, c] = np.einsum("ij,ij->i", diff, diff)
    return out


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of k-means++ seeds (D^2 sampling)."""
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    closest = _sq_dists(x, x[idx])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a seed; take unused points in order
            unused = np.setdiff1d(np.arange(n), idx)
            idx.append(int(unused[0]))
        else:
            cdf = np.cumsum(closest)
            pick = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            idx.append(min(pick, n - 1))
        closest = np.minimum(closest, _sq_dists(x, x[idx[-1:]])[:, 0])
    return np.array(idx)


def kmeans(features, k: int, seed: int = 0, max_iters: int = 100):
    """Lloyd's algorithm with k-means++ seeding.

    Ties go to the lowest center index; a cluster that empties is reseeded
    with the point farthest from its current center. Returns
    ``(labels, centers, inertia)``.
    """
    x = check_features(features)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centers = x[kmeans_plusplus(x, k, rng)].copy()
    labels = None
    for _ in range(max_iters):
        dist = _sq_dists(x, centers)
        new = np.argmin(dist, axis=1)
        counts = np.bincount(new, minlength=k)
        for c in np.flatnonzero(counts == 0):
            # take the farthest point whose cluster can spare it
            own = np.where(counts[new] > 1, dist[np.arange(n), new], -1.0)
            far = int(np.argmax(own))
            counts[new[far]] -= 1
            counts[c] += 1
            new[far] = c
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            centers[c] = x[labels == c].mean(axis=0)
    dist = _sq_dists(x, centers)
    inertia = float(dist[np.arange(n), labels].sum())
    return labels, centers, inertia


def compact_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel to 0..k-1 in order of first appearance."""
    flat = labels.ravel()
    _, first, inv = np.unique(flat, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    return rank[inv].reshape(labels.shape)


def cluster_map(features: np.ndarray, shape: tuple[int, int], k: int, seed: int = 0,
                max_iters: int = 100) -> Segmentation:
    labels, _, _ = kmeans(features, k, seed, max_iters)
    lab = compact_labels(labels.reshape(shape))
    return Segmentation(lab, int(lab.max()) + 1)


def segment_clustering(result, shape, scheme: ClusterScheme, use_weighted: bool = True,
                       gt=None, seed: int = 0):
    """Cluster pixel feature rows of an embedding into label maps.

    ``result`` is an :class:`EmbeddingResult` or an ``(n, d)`` array.
    Returns one :class:`Segmentation` for ``explicit``, one per ground truth
    for ``fixed`` and one per candidate k for ``dynamic``.
    """
    if hasattr(result, "y_weighted"):
        feats = result.y_weighted if use_weighted else result.y
    else:
        feats = np.asarray(result, dtype=np.float64)
    if scheme.kind == "explicit":
        return cluster_map(feats, shape, scheme.k, seed)
    if gt is None:
        raise ValueError(f"the {scheme.kind} scheme needs ground-truth segmentations")
    if scheme.kind == "fixed":
        return [cluster_map(feats, shape, int(np.unique(g).size), seed) for g in gt]
    return [cluster_map(feats, shape, k, seed) for k in DYNAMIC_KS]
