"""Locally connected pixel graphs, affinities and difference matrices.

Pixels are indexed row-major, ``i = row * width + col``. Images are
``(height, width)`` or ``(height, width, channels)`` float arrays in [0, 1];
label maps are ``(height, width)`` integer arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .sparsela import SparseMatrix
from .validation import check_image, check_label_map

WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Window of pixels connected to each pixel.

    ``chessboard`` is the (2r+1) x (2r+1) square; ``cityblock`` keeps
    offsets with ``|dy| + |dx| <= r`` (radius 1 gives 4-connectivity).
    """

    radius: int = 3
    metric: str = "chessboard"

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"radius must be an integer >= 1, got {self.radius}")
        if self.metric not in ("chessboard", "cityblock"):
            raise ValueError(f"unknown neighborhood metric {self.metric!r}")

    def offsets(self) -> list[tuple[int, int]]:
        """Forward offsets ``(dy, dx)``; each unordered pair appears once."""
        r = self.radius
        out = []
        for dy in range(0, r + 1):
            for dx in range(-r, r + 1):
                if dy == 0 and dx <= 0:
                    continue
                if self.metric == "cityblock" and abs(dy) + abs(dx) > r:
                    continue
                out.append((dy, dx))
        return out


@dataclass(frozen=True, eq=False)
class AffinityGraph:
    """Symmetric weighted edge list over an ``height x width`` pixel grid."""

    n: int
    i: np.ndarray
    j: np.ndarray
    w: np.ndarray
    degrees: np.ndarray
    shape: tuple[int, int] | None = None

    @classmethod
    def from_edges(cls, n, i, j, w, shape=None) -> "AffinityGraph":
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        w = np.asarray(w, dtype=np.float64)
        if not (i.shape == j.shape == w.shape):
            raise ValueError("edge arrays must have equal length")
        if np.any(i >= j):
            raise ValueError("edges must satisfy i < j")
        if i.size and (i.min() < 0 or j.max() >= n):
            raise IndexError("edge endpoint out of range")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("edge weights must be finite and non-negative")
        deg = np.bincount(i, weights=w, minlength=n) + np.bincount(j, weights=w, minlength=n)
        return cls(int(n), i, j, w, deg, shape)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.i.tolist(), self.j.tolist(), self.w.tolist()))

    @property
    def n_edges(self) -> int:
        return int(self.w.size)

    def adjacency(self) -> sp.csr_matrix:
        a = sp.coo_matrix((self.w, (self.i, self.j)), shape=(self.n, self.n))
        return (a + a.T).tocsr()

    def laplacian(self) -> SparseMatrix:
        """Combinatorial Laplacian ``D - W``."""
        return SparseMatrix.from_scipy(sp.diags(self.degrees) - self.adjacency())


def grid_edges(width: int, height: int, spec: NeighborhoodSpec) -> tuple[np.ndarray, np.ndarray]:
    """All pixel pairs within the neighborhood, sorted lexicographically by (i, j)."""
    if width < 1 or height < 1:
        raise ValueError(f"grid must be at least 1x1, got {width}x{height}")
    rows, cols = np.divmod(np.arange(width * height), width)
    ii, jj = [], []
    for dy, dx in spec.offsets():
        ok = (rows + dy < height) & (cols + dx >= 0) & (cols + dx < width)
        src = np.flatnonzero(ok)
        ii.append(src)
        jj.append(src + dy * width + dx)
    i = np.concatenate(ii) if ii else np.zeros(0, dtype=np.int64)
    j = np.concatenate(jj) if jj else np.zeros(0, dtype=np.int64)
    order = np.lexsort((j, i))
    return i[order].astype(np.int64), j[order].astype(np.int64)


def _coords(idx: np.ndarray, width: int):
    r, c = np.divmod(idx, width)
    return r.astype(np.float64), c.astype(np.float64)


def affinity_color(
    img: np.ndarray,
    edges: tuple[np.ndarray, np.ndarray],
    sigma_c: float = 0.1,
    sigma_x: float = 12.0,
    floor: float = WEIGHT_FLOOR,
) -> AffinityGraph:
    """Normalized-cut style color/proximity affinity, floored at ``floor``."""
    if sigma_c <= 0 or sigma_x <= 0:
        raise ValueError("sigma_c and sigma_x must be positive")
    img = check_image(img)
    h, w = img.shape[:2]
    colors = img.reshape(h * w, -1)
    i, j = edges
    dc = np.sum((colors[i] - colors[j]) ** 2, axis=1)
    ri, ci = _coords(i, w)
    rj, cj = _coords(j, w)
    dx = (ri - rj) ** 2 + (ci - cj) ** 2
    wts = np.exp(-dc / sigma_c**2) * np.exp(-dx / sigma_x**2)
    return AffinityGraph.from_edges(h * w, i, j, np.maximum(wts, floor), (h, w))


@lru_cache(maxsize=256)
def _bresenham(dy: int, dx: int) -> tuple[tuple[int, int], ...]:
    """Pixel offsets on the digital segment from (0, 0) to (dy, dx), inclusive."""
    pts = []
    y, x = 0, 0
    sy = 1 if dy >= 0 else -1
    sx = 1 if dx >= 0 else -1
    ady, adx = abs(dy), abs(dx)
    err = adx - ady
    while True:
        pts.append((y, x))
        if y == dy and x == dx:
            break
        e2 = 2 * err
        if e2 > -ady:
            err -= ady
            x += sx
        if e2 < adx:
            err += adx
            y += sy
    return tuple(pts)


def segment_pixels(i: int, j: int, width: int) -> list[int]:
    """Pixels on the rasterized segment between pixels ``i`` and ``j``.

    The segment is always traced from the lower index, so the result does
    not depend on argument order.
    """
    a, b = min(i, j), max(i, j)
    ra, ca = divmod(a, width)
    rb, cb = divmod(b, width)
    return [(ra + y) * width + (ca + x) for y, x in _bresenham(rb - ra, cb - ca)]


def affinity_intervening_contour(
    boundary: np.ndarray,
    edges: tuple[np.ndarray, np.ndarray],
    rho: float = 0.1,
    floor: float = WEIGHT_FLOOR,
    shape: tuple[int, int] | None = None,
) -> AffinityGraph:
    """Affinity ``exp(-max boundary on the segment i->j / rho)``."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    boundary = check_image(boundary)
    if boundary.ndim == 3:
        if boundary.shape[2] != 1:
            raise ValueError("boundary map must have a single channel")
        boundary = boundary[:, :, 0]
    h, w = boundary.shape
    if shape is not None and tuple(shape) != (h, w):
        raise ValueError(f"boundary map is {h}x{w}, pixel grid is {shape[0]}x{shape[1]}")
    flat = boundary.ravel()
    i, j = edges
    if i.size and max(i.max(), j.max()) >= h * w:
        raise ValueError("edges do not fit the boundary map dimensions")
    ri, ci = np.divmod(i, w)
    rj, cj = np.divmod(j, w)
    dy, dx = rj - ri, cj - ci
    peak = np.zeros(i.size)
    # all edges sharing an offset share the same rasterized segment
    key = dy * (4 * w + 1) + dx
    for kv in np.unique(key):
        sel = np.flatnonzero(key == kv)
        oy, ox = int(dy[sel[0]]), int(dx[sel[0]])
        for y, x in _bresenham(oy, ox):
            peak[sel] = np.maximum(peak[sel], flat[(ri[sel] + y) * w + ci[sel] + x])
    wts = np.exp(-peak / rho)
    return AffinityGraph.from_edges(h * w, i, j, np.maximum(wts, floor), (h, w))


def _difference(g: AffinityGraph, vals: np.ndarray) -> SparseMatrix:
    t = g.n_edges
    rows = np.repeat(np.arange(t), 2)
    cols = np.column_stack([g.i, g.j]).ravel()
    data = np.column_stack([vals, -vals]).ravel()
    return SparseMatrix.from_scipy(sp.csr_matrix((data, (rows, cols)), shape=(t, g.n)))


def build_m(g: AffinityGraph) -> SparseMatrix:
    """t x n weighted difference matrix: row k has +w at i and -w at j."""
    return _difference(g, g.w)


def build_m_prime(g: AffinityGraph) -> SparseMatrix:
    """Difference matrix with square-root weights; its Gram matrix is ``D - W``."""
    return _difference(g, np.sqrt(g.w))


def boundary_edge_stats(gt: np.ndarray, spec: NeighborhoodSpec) -> tuple[float, float]:
    """Return ``(r_b, r_e)`` for a ground-truth label map.

    ``r_b`` counts 4-connected label transitions (crack edges) per pixel;
    ``r_e`` is the fraction of graph edges joining different labels.
    """
    gt = check_label_map(gt)
    h, w = gt.shape
    if h < 2 or w < 2:
        raise ValueError("label map must be at least 2x2")
    cracks = np.count_nonzero(gt[:, 1:] != gt[:, :-1]) + np.count_nonzero(gt[1:, :] != gt[:-1, :])
    i, j = grid_edges(w, h, spec)
    flat = gt.ravel()
    r_e = np.count_nonzero(flat[i] != flat[j]) / i.size
    return cracks / (h * w), float(r_e)
