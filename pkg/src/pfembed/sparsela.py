"""Sparse and small dense linear algebra kernels.

CSR storage, Gram products, banded sparse Cholesky with triangular solves,
a Gram-route thin SVD with polar orthonormalization, and a smallest-k
generalized eigensolver for graph Laplacians.

Dense matrices are plain 2-D float64 numpy arrays throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

__all__ = [
    "SparseMatrix",
    "CholeskyFactor",
    "ThinSvd",
    "NotPositiveDefiniteError",
    "ConvergenceError",
    "from_triplets",
    "multiply",
    "gram",
    "cholesky_factor",
    "solve",
    "jacobi_eigh",
    "thin_svd",
    "orthonormal_polar",
    "smallest_generalized_eigvecs",
]

RANK_TOL = 1e-12


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot is not strictly positive."""

    def __init__(self, index: int):
        super().__init__(f"matrix is not positive definite (pivot {index})")
        self.index = index


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix with float64 values.

    Construct through :func:`from_triplets` or :meth:`from_scipy`; both
    canonicalize (sorted columns, summed duplicates, no stored zeros).
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _csr: sp.csr_matrix = field(default=None, repr=False, compare=False)

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        csr = sp.csr_matrix(mat, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        csr.indptr = csr.indptr.astype(np.int64)
        csr.indices = csr.indices.astype(np.int64)
        for arr in (csr.indptr, csr.indices, csr.data):
            arr.setflags(write=False)
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data, csr)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    @property
    def T(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr.T)

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def scale_rows(self, w: np.ndarray) -> "SparseMatrix":
        return SparseMatrix.from_scipy(sp.diags(np.asarray(w, dtype=np.float64)) @ self._csr)

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            return SparseMatrix.from_scipy(self._csr @ other._csr)
        return multiply(self, other)


def from_triplets(triplets, n_rows: int, n_cols: int) -> SparseMatrix:
    """Build a CSR matrix from ``(row, col, value)`` triplets.

    Duplicates are summed and entries that cancel to zero are dropped.
    ``triplets`` may also be a ``(rows, cols, values)`` tuple of arrays.
    """
    if isinstance(triplets, tuple) and len(triplets) == 3 and np.ndim(triplets[0]) == 1:
        rows, cols, vals = (np.asarray(a) for a in triplets)
    else:
        arr = list(triplets)
        rows = np.array([t[0] for t in arr], dtype=np.int64)
        cols = np.array([t[1] for t in arr], dtype=np.int64)
        vals = np.array([t[2] for t in arr], dtype=np.float64)
    rows = rows.astype(np.int64, copy=False)
    cols = cols.astype(np.int64, copy=False)
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
        raise IndexError(f"row index out of range for {n_rows} rows")
    if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
        raise IndexError(f"column index out of range for {n_cols} columns")
    coo = sp.coo_matrix((vals.astype(np.float64), (rows, cols)), shape=(n_rows, n_cols))
    return SparseMatrix.from_scipy(coo.tocsr())


def multiply(a: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse-dense product ``a @ x``; ``x`` may be 1-D or 2-D."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != a.n_cols:
        raise ValueError(f"shape mismatch: {a.shape} @ {x.shape}")
    return np.asarray(a.to_scipy() @ x)


def gram(m: SparseMatrix) -> SparseMatrix:
    """``m.T @ m``; for a difference matrix this is the squared-weight Laplacian."""
    csr = m.to_scipy()
    return SparseMatrix.from_scipy(csr.T.tocsr() @ csr)


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    """Lower Cholesky factor held in LAPACK lower-band storage.

    ``band[k, j]`` stores ``lower[j + k, j]``. Fill-in never leaves the
    band of the input, so no reordering is needed for grid graphs in
    natural pixel order. ``permutation`` is reserved for a fill-reducing
    ordering and is currently always ``None``.
    """

    n: int
    bandwidth: int
    band: np.ndarray = field(repr=False)
    permutation: np.ndarray | None = None

    @property
    def lower(self) -> SparseMatrix:
        kd, n = self.bandwidth, self.n
        rows, cols, vals = [], [], []
        for k in range(kd + 1):
            j = np.arange(n - k)
            rows.append(j + k)
            cols.append(j)
            vals.append(self.band[k, : n - k])
        return from_triplets(
            (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)), n, n
        )


def _lower_bandwidth(a: SparseMatrix) -> int:
    rows = np.repeat(np.arange(a.n_rows), np.diff(a.row_offsets))
    offs = rows - a.col_indices
    return int(offs.max()) if offs.size else 0


def cholesky_factor(a: SparseMatrix) -> CholeskyFactor:
    """Factor a symmetric positive definite matrix as ``lower @ lower.T``."""
    if a.n_rows != a.n_cols:
        raise ValueError(f"matrix must be square, got {a.shape}")
    n = a.n_rows
    kd = _lower_bandwidth(a)
    coo = a.to_scipy().tocoo()
    keep = coo.row >= coo.col
    ab = np.zeros((kd + 1, n), dtype=np.float64, order="F")
    ab[coo.row[keep] - coo.col[keep], coo.col[keep]] = coo.data[keep]
    c, info = lapack.dpbtrf(ab, lower=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"dpbtrf: illegal argument {-info}")
    return CholeskyFactor(n=n, bandwidth=kd, band=c)


def solve(factor: CholeskyFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve ``A x = rhs`` by forward then backward substitution."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != factor.n:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, factor is {factor.n}x{factor.n}")
    vec = rhs.ndim == 1
    b = np.asfortranarray(rhs.reshape(factor.n, -1))
    if b.shape[1] == 0:
        return rhs.copy()
    x, info = lapack.dpbtrs(factor.band, b, lower=1)
    if info != 0:
        raise ValueError(f"dpbtrs: illegal argument {-info}")
    return x[:, 0].copy() if vec else np.ascontiguousarray(x)


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi.

    Returns ``(w, v)`` with eigenvalues in descending order.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.abs(a).max() if a.size else 0.0
    if scale == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


class ThinSvd(NamedTuple):
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    rank: int


def _complete_columns(u: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace invalid columns of ``u`` by orthonormal complement vectors.

    Candidates are canonical basis vectors taken in index order, each
    projected twice against the accepted columns.
    """
    n = u.shape[0]
    basis = [u[:, j] for j in np.flatnonzero(valid)]
    out = u.copy()
    e = 0
    for j in np.flatnonzero(~valid):
        while e < n:
            cand = np.zeros(n)
            cand[e] = 1.0
            e += 1
            for _ in range(2):
                for q in basis:
                    cand -= (q @ cand) * q
            nrm = np.linalg.norm(cand)
            if nrm > 1e-8:
                cand /= nrm
                break
        else:
            raise ValueError("cannot complete an orthonormal basis: d > n")
        basis.append(cand)
        out[:, j] = cand
    return out


def thin_svd(a: np.ndarray) -> ThinSvd:
    """Thin SVD of an n x d matrix through the d x d Gram matrix."""
    a = np.asarray(a, dtype=np.float64)
    n, d = a.shape
    if d > n:
        raise ValueError(f"thin_svd needs d <= n, got {a.shape}")
    evals, v = jacobi_eigh(a.T @ a)
    sigma = np.sqrt(np.clip(evals, 0.0, None))
    valid = sigma > RANK_TOL * sigma[0] if d and sigma[0] > 0 else np.zeros(d, dtype=bool)
    u = np.zeros((n, d))
    u[:, valid] = (a @ v[:, valid]) / sigma[valid]
    if not valid.all():
        u = _complete_columns(u, valid)
    return ThinSvd(u, sigma, v, int(valid.sum()))


def orthonormal_polar(a: np.ndarray, return_rank: bool = False):
    """Closest matrix with orthonormal columns, ``U @ V.T``.

    Rank-deficient directions are completed deterministically; the
    achieved rank is returned with ``return_rank=True``.
    """
    svd = thin_svd(a)
    p = svd.u @ svd.v.T
    # the Gram route squares the condition number; one more pass on a
    # nearly orthonormal matrix restores orthogonality to rounding level
    if p.shape[1] and np.abs(p.T @ p - np.eye(p.shape[1])).max() > 1e-13:
        again = thin_svd(p)
        p = again.u @ again.v.T
    return (p, svd.rank) if return_rank else p


def smallest_generalized_eigvecs(
    l: SparseMatrix,
    d_diag: np.ndarray,
    k: int,
    tol: float = 1e-10,
    max_iters: int = 2000,
    seed: int = 0,
):
    """Smallest ``k`` eigenpairs of ``L y = lam D y`` for a graph Laplacian.

    Block inverse iteration on the shifted pencil ``L + mu D`` with a
    D-orthonormal basis and Rayleigh-Ritz extraction. Returns
    ``(values, vectors)``, vectors D-orthonormal, values ascending.
    """
    d_diag = np.asarray(d_diag, dtype=np.float64)
    n = l.n_rows
    if k > n:
        raise ValueError(f"k={k} exceeds matrix size {n}")
    if np.any(d_diag <= 0):
        raise ValueError("degree vector must be strictly positive")
    mu = 1e-6 * d_diag.sum() / n
    shifted = SparseMatrix.from_scipy(l.to_scipy() + mu * sp.diags(d_diag))
    factor = cholesky_factor(shifted)
    block = min(n, max(2 * k, k + 8))
    sqrt_d = np.sqrt(d_diag)
    lnorm = np.abs(l.values).max() if l.nnz else 1.0

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, block))
    x[:, 0] = 1.0
    resid = np.inf
    for _ in range(max_iters):
        z = solve(factor, d_diag[:, None] * x)
        q, _ = np.linalg.qr(sqrt_d[:, None] * z)
        q = q / sqrt_d[:, None]
        lq = multiply(l, q)
        h = q.T @ lq
        h = 0.5 * (h + h.T)
        w, v = jacobi_eigh(h)
        order = np.argsort(w, kind="stable")
        w, v = w[order], v[:, order]
        x = q @ v
        lx = lq @ v
        r = lx[:, :k] - (d_diag[:, None] * x[:, :k]) * w[:k]
        resid = float(np.abs(r).max())
        if resid <= tol * lnorm:
            vecs = x[:, :k]
            signs = np.where(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(k)] < 0, -1.0, 1.0)
            return w[:k].copy(), vecs * signs
    raise ConvergenceError("generalized eigensolver did not converge", resid / lnorm)
