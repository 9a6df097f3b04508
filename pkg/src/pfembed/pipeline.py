"""Run configuration and the image -> graph -> embedding -> labels pipeline.

Configuration files are UTF-8 ``key = value`` lines with ``#`` comments.
Keys are :class:`RunConfig` field names or their short command-line
aliases (``lambda``, ``r1``, ``r2``, ``eps``, ``weighted``, ``out``).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any

import numpy as np

from .graph import AffinityGraph, NeighborhoodSpec, affinity_color, affinity_intervening_contour, grid_edges
from .initialization import SCHEMES, initialize
from .metrics import MetricReport, evaluate, evaluate_fixed
from .segment import ClusterScheme, Segmentation, segment_clustering
from .solver import EmbeddingResult, PfeConfig, run_pfe
from .fileio import is_flat
from .validation import check_image, check_same_shape


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


ALIASES = {
    "lambda": "lam",
    "r1": "r_stage1",
    "r2": "r_stage2",
    "eps": "epsilon_w",
    "weighted": "use_weighted",
    "out": "output_dir",
}

PROFILES = {
    "clustering": {},
    "boundary": {"lam": 4000.0, "alpha": 50.0, "epsilon_w": 1e-2, "radius": 5},
}


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI run needs; solver fields mirror :class:`PfeConfig`."""

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
    affinity: str = "color"
    sigma_c: float = 0.1
    sigma_x: float | None = None  # None means 4 * radius
    rho: float = 0.1
    radius: int = 3
    metric: str = "chessboard"
    boundary: str | None = None
    init: str = "wsc_density"
    scheme: str = "explicit"
    k: int = 2
    use_weighted: bool = True
    select_metric: str = "covering"
    output_dir: str = "."
    seed: int = 0

    def __post_init__(self):
        try:
            self.pfe_config()
            NeighborhoodSpec(self.radius, self.metric)
            ClusterScheme(self.scheme, self.k)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.affinity not in ("color", "contour"):
            raise ConfigError(f"affinity must be 'color' or 'contour', got {self.affinity!r}")
        if self.init not in SCHEMES:
            raise ConfigError(f"init must be one of {SCHEMES}, got {self.init!r}")
        if self.select_metric not in ("pri", "vi", "covering"):
            raise ConfigError(f"unknown selection metric {self.select_metric!r}")
        for name in ("sigma_c", "rho"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.sigma_x is not None and not self.sigma_x > 0:
            raise ConfigError("sigma_x must be positive")

    def pfe_config(self) -> PfeConfig:
        names = set(PfeConfig.field_names())
        return PfeConfig(**{f.name: getattr(self, f.name) for f in fields(self) if f.name in names})

    def neighborhood(self) -> NeighborhoodSpec:
        return NeighborhoodSpec(self.radius, self.metric)

    def cluster_scheme(self) -> ClusterScheme:
        return ClusterScheme(self.scheme, self.k)

    @property
    def effective_sigma_x(self) -> float:
        return 4.0 * self.radius if self.sigma_x is None else self.sigma_x


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(name: str, raw: Any) -> Any:
    default = _FIELDS[name].default
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if name in ("sigma_x", "reference_pixels", "boundary") and text.lower() in ("none", ""):
        return None
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or name in ("sigma_x", "reference_pixels"):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return text


def canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in _FIELDS and key != "profile":
        raise ConfigError(f"unknown configuration key {key!r}")
    return key


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[canonical_key(key)] = value.strip()
    return out


def read_config_file(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), str(path))


def build_config(*layers: dict[str, Any]) -> RunConfig:
    """Merge layers left to right (later wins) over the selected profile."""
    merged: dict[str, Any] = {}
    for layer in layers:
        for key, value in layer.items():
            if value is not None:
                merged[canonical_key(key)] = value
    profile = str(merged.pop("profile", "clustering")).strip()
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    values = dict(PROFILES[profile])
    values.update({k: _convert(k, v) for k, v in merged.items()})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_lines(cfg: RunConfig) -> list[str]:
    """Serialize as ``key = value`` lines that :func:`parse_config_text` reads back."""
    return [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(cfg)]


def build_graph(img: np.ndarray, cfg: RunConfig, boundary: np.ndarray | None = None) -> AffinityGraph:
    img = check_image(img)
    h, w = img.shape[:2]
    edges = grid_edges(w, h, cfg.neighborhood())
    if cfg.affinity == "contour":
        if boundary is None:
            raise ConfigError("contour affinity needs a boundary map")
        return affinity_intervening_contour(boundary, edges, cfg.rho, shape=(h, w))
    return affinity_color(img, edges, cfg.sigma_c, cfg.effective_sigma_x)


def embed(img: np.ndarray, cfg: RunConfig, boundary=None) -> tuple[AffinityGraph, EmbeddingResult]:
    graph = build_graph(img, cfg, boundary)
    init_y = initialize(cfg.init, img, graph, cfg.d, cfg.seed)
    return graph, run_pfe(graph, cfg.pfe_config(), init_y)


def cluster(features: np.ndarray, shape, cfg: RunConfig, gts=None):
    """Segment feature rows under the configured scheme.

    Returns ``(segmentations, report)``; ``report`` is ``None`` without
    ground truth. For the dynamic scheme the list is reordered so the
    candidate chosen by ``select_metric`` comes first.
    """
    scheme = cfg.cluster_scheme()
    if gts:
        for g in gts:
            check_same_shape(np.empty(shape), g, "segmentation and ground truth")
    out = segment_clustering(features, shape, scheme, gt=gts, seed=cfg.seed)
    if scheme.kind == "explicit":
        report = evaluate(out, gts) if gts else None
        return [out], report
    if scheme.kind == "fixed":
        return out, evaluate_fixed(out, gts)
    report = evaluate(out, gts)
    best = report.best[cfg.select_metric]
    return [out[best]] + [s for i, s in enumerate(out) if i != best], report


def segment_image(img, cfg: RunConfig, gts=None, boundary=None):
    """Embed then cluster; returns ``(result, segmentations, report)``."""
    _, result = embed(img, cfg, boundary)
    feats = result.y_weighted if cfg.use_weighted else result.y
    segs, report = cluster(feats, img.shape[:2], cfg, gts)
    return result, segs, report


def channel_histograms(y: np.ndarray, bins: int = 256) -> list[tuple[int, int, float, float, int]]:
    """Rows ``(channel, bin, lo, hi, count)`` over each channel's own range.

    A flat channel (see :func:`fileio.is_flat`) lands entirely in bin 0.
    """
    rows = []
    for v in range(y.shape[1]):
        col = y[:, v]
        lo, hi = float(col.min()), float(col.max())
        if is_flat(col):
            hi = lo + max(abs(lo), 1.0)
        counts, edges = np.histogram(col, bins=bins, range=(lo, hi))
        rows.extend((v, b, float(edges[b]), float(edges[b + 1]), int(counts[b])) for b in range(bins))
    return rows


__all__ = [
    "ConfigError",
    "MetricReport",
    "RunConfig",
    "Segmentation",
    "build_config",
    "build_graph",
    "channel_histograms",
    "cluster",
    "config_lines",
    "embed",
    "parse_config_text",
    "read_config_file",
    "segment_image",
]
