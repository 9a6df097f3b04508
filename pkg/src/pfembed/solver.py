"""Piecewise flat embedding solver.

Minimizes the sum of weighted absolute pairwise channel differences
``||M Y||_{1,p}`` subject to ``Y^T D Y = I``. Stage I nests split Bregman
iterations (sparse solve, shrinkage, dual update) inside an orthogonality
splitting loop (polar projection, Bregman update). Stage II drops the
projection and keeps iterating the inner loop at a smaller penalty, either
on the plain L1,1 objective or as a reweighted sequence of L1,1 problems
for ``p < 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy.sparse as sp

from .graph import AffinityGraph, build_m
from .sparsela import (
    CholeskyFactor,
    SparseMatrix,
    cholesky_factor,
    gram,
    multiply,
    orthonormal_polar,
    smallest_generalized_eigvecs,
    solve,
)

logger = logging.getLogger(__name__)

FLAT_ETA = 1e-12


class DivergenceError(FloatingPointError):
    def __init__(self, where: str, iteration: int):
        super().__init__(f"non-finite values in {where} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class PfeConfig:
    """Solver parameters. Defaults are the clustering profile."""

    d: int = 4
    p: float = 1.0
    lam: float = 40000.0
    r_stage1: float = 600.0
    r_stage2: float = 10.0
    alpha: float = 0.1
    epsilon_w: float = 1e-5
    outer_iters_s1: int = 5
    inner_iters_s1: int = 8
    stage2_iters: int = 40
    outer_iters_s2_l1p: int = 5
    inner_iters_s2_l1p: int = 20
    inner_tol: float = 1e-6
    reweighting: str = "alpha"
    reference_pixels: float | None = 321 * 481
    check_residual: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        for name in ("lam", "r_stage1", "r_stage2", "epsilon_w", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.alpha <= 50:
            raise ValueError(f"alpha must lie in (0, 50], got {self.alpha}")
        for name in ("outer_iters_s1", "inner_iters_s1", "stage2_iters",
                     "outer_iters_s2_l1p", "inner_iters_s2_l1p"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.reweighting not in ("alpha", "derivative"):
            raise ValueError(f"unknown reweighting {self.reweighting!r}")
        if self.reference_pixels is not None and not self.reference_pixels > 0:
            raise ValueError("reference_pixels must be positive or None")

    def scaled(self, n: int) -> "PfeConfig":
        """Penalties rescaled from ``reference_pixels`` to an ``n``-pixel image.

        The constraint fixes the channel magnitude at about ``1/sqrt(n)``
        while the L1 term is linear and the penalties quadratic in it, so
        ``lam`` and ``r`` must grow with ``sqrt(n)`` to keep the same
        balance. Returns a config with ``reference_pixels=None``.
        """
        if self.reference_pixels is None:
            return self
        f = float(np.sqrt(n / self.reference_pixels))
        return replace(self, lam=self.lam * f, r_stage1=self.r_stage1 * f,
                       r_stage2=self.r_stage2 * f, reference_pixels=None)

    @classmethod
    def clustering_profile(cls, **overrides) -> "PfeConfig":
        return cls(**overrides)

    @classmethod
    def boundary_profile(cls, **overrides) -> "PfeConfig":
        base = dict(lam=4000.0, r_stage1=600.0, r_stage2=10.0, alpha=50.0, epsilon_w=1e-2)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class EmbeddingState:
    y: np.ndarray
    p_mat: np.ndarray
    b: np.ndarray
    c: np.ndarray
    e: np.ndarray
    factor: CholeskyFactor | None = None
    factor_key: tuple | None = None
    trace: list = field(default_factory=list)
    orthogonality: list = field(default_factory=list)
    f_frozen: np.ndarray | None = None

    @property
    def energy_trace(self) -> np.ndarray:
        return np.array([row.sum() for row in self.trace])

    @property
    def channel_trace(self) -> np.ndarray:
        d = self.y.shape[1]
        return np.array(self.trace).reshape(-1, d)


@dataclass
class EmbeddingResult:
    y: np.ndarray
    eta: np.ndarray
    y_weighted: np.ndarray
    energy_trace: np.ndarray
    per_channel_energy: np.ndarray
    channel_trace: np.ndarray
    flat_channels: tuple = ()
    stage1_iterations: int = 0


def energy(m: SparseMatrix, y: np.ndarray):
    """``(sum |M Y|, per-channel sums)``."""
    my = np.abs(multiply(m, y))
    if my.ndim == 1:
        my = my[:, None]
    per = my.sum(axis=0)
    return float(per.sum()), per


def energy_l1p(m: SparseMatrix, y: np.ndarray, p: float) -> float:
    """``sum_i ||m_i^T Y||_1^p``."""
    rows = np.abs(multiply(m, y)).reshape(m.n_rows, -1).sum(axis=1)
    return float(np.sum(rows**p))


def shrink(x, gamma: float):
    """Soft threshold ``sign(x) * max(|x| - gamma, 0)``."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - gamma, 0.0)


def system_matrix(m: SparseMatrix, d_vec: np.ndarray, lam: float, r: float) -> SparseMatrix:
    """``lam * M^T M + r * D``."""
    return SparseMatrix.from_scipy(lam * gram(m).to_scipy() + r * sp.diags(d_vec))


def factor_system(state: EmbeddingState, m: SparseMatrix, d_vec, lam: float, r: float, tag=None):
    state.factor = cholesky_factor(system_matrix(m, d_vec, lam, r))
    state.factor_key = (float(lam), float(r), tag)
    return state


def inner_step_a1(state, m, d_sqrt, f_target, lam, r, tag=None, d_vec=None):
    """Solve ``(lam S + r D) Y = r D^{1/2} F + lam M^T (C - E)``."""
    if state.factor is None or state.factor_key != (float(lam), float(r), tag):
        raise ValueError(
            f"Cholesky factor was built for {state.factor_key}, requested {(lam, r, tag)}"
        )
    rhs = r * d_sqrt[:, None] * f_target + lam * multiply(m.T, state.c - state.e)
    y = solve(state.factor, rhs)
    if d_vec is not None:
        lhs = lam * multiply(m.T, multiply(m, y)) + r * d_vec[:, None] * y
        scale = max(np.abs(rhs).max(), np.finfo(float).tiny)
        if np.abs(lhs - rhs).max() >= 1e-8 * scale:
            raise ArithmeticError("linear system residual above tolerance")
    return y


def split_bregman_inner(state, m, d_sqrt, lam, r, f_target, iters, tol=1e-6,
                        energy_m=None, tag=None, check_residual=False):
    """Run up to ``iters`` split Bregman iterations on the inner L1 problem."""
    energy_m = m if energy_m is None else energy_m
    d_vec = d_sqrt**2 if check_residual else None
    for it in range(iters):
        y_new = inner_step_a1(state, m, d_sqrt, f_target, lam, r, tag, d_vec)
        my = multiply(m, y_new)
        c = shrink(my + state.e, 1.0 / lam)
        e = state.e + my - c
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(e))):
            raise DivergenceError("split Bregman inner loop", it)
        step = np.abs(y_new - state.y).max() / max(np.abs(y_new).max(), np.finfo(float).tiny)
        state.y, state.c, state.e = y_new, c, e
        state.trace.append(energy(energy_m, y_new)[1])
        if step <= tol:
            break
    return state


def soc_outer_step(state, m, d_sqrt, lam, r, inner_iters, tol=1e-6, check_residual=False):
    """One orthogonality-splitting step: inner solve, polar projection, Bregman update."""
    f_target = state.p_mat - state.b
    split_bregman_inner(state, m, d_sqrt, lam, r, f_target, inner_iters, tol,
                        check_residual=check_residual)
    dy = d_sqrt[:, None] * state.y
    state.p_mat = orthonormal_polar(dy + state.b)
    state.b = state.b + dy - state.p_mat
    if not np.all(np.isfinite(state.b)):
        raise DivergenceError("orthogonality splitting", len(state.orthogonality))
    d = state.p_mat.shape[1]
    state.orthogonality.append(float(np.abs(state.p_mat.T @ state.p_mat - np.eye(d)).max()))
    state.f_frozen = state.p_mat - state.b
    return state


def init_state(m: SparseMatrix, d_vec: np.ndarray, init_y: np.ndarray) -> EmbeddingState:
    init_y = np.array(init_y, dtype=np.float64)
    n, d = init_y.shape
    if n != m.n_cols:
        raise ValueError(f"initialization has {n} rows, graph has {m.n_cols} nodes")
    p0 = orthonormal_polar(np.sqrt(d_vec)[:, None] * init_y)
    t = m.n_rows
    state = EmbeddingState(
        y=init_y, p_mat=p0, b=np.zeros((n, d)), c=np.zeros((t, d)), e=np.zeros((t, d))
    )
    state.f_frozen = p0.copy()
    return state


def run_stage1(m: SparseMatrix, d_vec: np.ndarray, init_y: np.ndarray, cfg: PfeConfig):
    """Full nested Bregman iterations with the large orthogonality penalty."""
    d_vec = np.asarray(d_vec, dtype=np.float64)
    state = init_state(m, d_vec, init_y)
    if cfg.outer_iters_s1 == 0:
        return state
    d_sqrt = np.sqrt(d_vec)
    factor_system(state, m, d_vec, cfg.lam, cfg.r_stage1)
    for k in range(cfg.outer_iters_s1):
        soc_outer_step(state, m, d_sqrt, cfg.lam, cfg.r_stage1, cfg.inner_iters_s1,
                       cfg.inner_tol, cfg.check_residual)
        logger.debug("stage I outer %d: energy %.6g", k, state.trace[-1].sum())
    return state


def run_stage2_l11(state, m, d_sqrt, lam, r_stage2, iters, tol=1e-6, check_residual=False):
    """Inner iterations only, with ``F`` frozen from the last stage I step."""
    if iters == 0:
        return state
    factor_system(state, m, d_sqrt**2, lam, r_stage2)
    return split_bregman_inner(state, m, d_sqrt, lam, r_stage2, state.f_frozen, iters, tol,
                               check_residual=check_residual)


def residual_weighting(y: np.ndarray, m: SparseMatrix, d_vec: np.ndarray):
    """Channel weights from residual cost.

    Returns ``(eta, y_weighted, flat)`` where ``eta_v = sqrt(||M y_v||_1 /
    ||D^{1/2} y_v||_2)``, ``y_weighted_v = y_v / ||y_v|| / eta_v`` and
    ``flat`` lists channels whose ``eta`` hit the floor.
    """
    y = np.asarray(y, dtype=np.float64)
    norms = np.linalg.norm(y, axis=0)
    if np.any(norms == 0):
        raise ValueError(f"degenerate all-zero channel(s): {np.flatnonzero(norms == 0).tolist()}")
    num = np.abs(multiply(m, y)).sum(axis=0)
    den = np.linalg.norm(np.sqrt(d_vec)[:, None] * y, axis=0)
    eta = np.sqrt(num / den)
    flat = tuple(int(v) for v in np.flatnonzero(eta < FLAT_ETA))
    if flat:
        logger.warning("channels %s are flat; weight capped at %g", flat, 1 / FLAT_ETA)
    eta = np.maximum(eta, FLAT_ETA)
    return eta, (y / norms) / eta, flat


def reweight(m: SparseMatrix, y_hat: np.ndarray, cfg: PfeConfig, y_raw=None) -> np.ndarray:
    """Majorizer weights for the next reweighted L1,1 problem.

    ``"alpha"``: ``max(alpha * ||m_i' Y_hat||_1, eps) ** (p - 1)`` on the
    residual-weighted channels. ``"derivative"``: ``p * max(||m_i' Y||_1,
    eps) ** (p - 1)`` on the raw channels, the slope of ``t ** p``.
    """
    if cfg.reweighting == "derivative":
        rows = np.abs(multiply(m, y_raw)).sum(axis=1)
        w = cfg.p * np.maximum(rows, cfg.epsilon_w) ** (cfg.p - 1)
    else:
        rows = np.abs(multiply(m, y_hat)).sum(axis=1)
        w = np.maximum(cfg.alpha * rows, cfg.epsilon_w) ** (cfg.p - 1)
    return w


def run_stage2_l1p(state, m, d_sqrt, cfg: PfeConfig):
    """Stage II for ``p < 1`` by majorization-minimization.

    Each outer step solves a row-reweighted L1,1 problem with the inner
    loop, then recomputes the weights from the residual-weighted channels.
    With ``p == 1`` the weights never change, so the whole budget runs as
    one uninterrupted L1,1 stage.
    """
    if cfg.p == 1:
        return run_stage2_l11(state, m, d_sqrt, cfg.lam, cfg.r_stage2,
                              cfg.outer_iters_s2_l1p * cfg.inner_iters_s2_l1p,
                              cfg.inner_tol, cfg.check_residual)
    d_vec = d_sqrt**2
    w = np.ones(m.n_rows)
    for k in range(cfg.outer_iters_s2_l1p):
        m_hat = m.scale_rows(w)
        factor_system(state, m_hat, d_vec, cfg.lam, cfg.r_stage2, tag=k)
        split_bregman_inner(state, m_hat, d_sqrt, cfg.lam, cfg.r_stage2, state.f_frozen,
                            cfg.inner_iters_s2_l1p, cfg.inner_tol, energy_m=m, tag=k,
                            check_residual=cfg.check_residual)
        _, y_hat, _ = residual_weighting(state.y, m, d_vec)
        w_next = reweight(m, y_hat, cfg, state.y)
        if not np.all(np.isfinite(w_next)):
            raise DivergenceError("reweighting", k)
        # the auxiliary split variable lives in the weighted row space
        state.c = state.c * (w_next / w)[:, None]
        w = w_next
        logger.debug("stage II MM %d: energy %.6g", k, energy_l1p(m, state.y, cfg.p))
    return state


def run_pfe(graph: AffinityGraph, cfg: PfeConfig, init_y: np.ndarray) -> EmbeddingResult:
    """Stage I, stage II (L1,1 or L1,p by ``cfg.p``), then channel weighting.

    Penalties are first rescaled to the image size (see :meth:`PfeConfig.scaled`).
    """
    init_y = np.asarray(init_y, dtype=np.float64)
    if init_y.shape != (graph.n, cfg.d):
        raise ValueError(f"init_y must be {graph.n}x{cfg.d}, got {init_y.shape}")
    cfg = cfg.scaled(graph.n)
    m = build_m(graph)
    d_vec = graph.degrees
    d_sqrt = np.sqrt(d_vec)
    state = run_stage1(m, d_vec, init_y, cfg)
    n1 = len(state.trace)
    if cfg.p == 1:
        run_stage2_l11(state, m, d_sqrt, cfg.lam, cfg.r_stage2, cfg.stage2_iters,
                       cfg.inner_tol, cfg.check_residual)
    else:
        run_stage2_l1p(state, m, d_sqrt, cfg)
    eta, y_weighted, flat = residual_weighting(state.y, m, d_vec)
    chan = state.channel_trace
    return EmbeddingResult(
        y=state.y,
        eta=eta,
        y_weighted=y_weighted,
        energy_trace=state.energy_trace,
        per_channel_energy=energy(m, state.y)[1],
        channel_trace=chan,
        flat_channels=flat,
        stage1_iterations=n1,
    )


def laplacian_eigenmaps(graph: AffinityGraph, d: int, seed: int = 0):
    """Smallest nontrivial generalized eigenvectors of ``(D - W, D)``.

    Returns ``(eigenvalues, vectors)`` for ``d`` channels, the constant
    eigenvector dropped.
    """
    vals, vecs = smallest_generalized_eigvecs(graph.laplacian(), graph.degrees, d + 1, seed=seed)
    return vals[1:], vecs[:, 1:]


def with_overrides(cfg: PfeConfig, **kw) -> PfeConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
