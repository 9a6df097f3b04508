"""Piecewise flat embeddings for image segmentation."""

from .estimators import PiecewiseFlatEmbedding, PiecewiseFlatSegmenter
from .graph import (
    AffinityGraph,
    NeighborhoodSpec,
    affinity_color,
    affinity_intervening_contour,
    boundary_edge_stats,
    build_m,
    build_m_prime,
    grid_edges,
)
from .initialization import initialize
from .metrics import MetricReport, covering, evaluate, rand_index, variation_of_information
from .segment import ClusterScheme, Segmentation, kmeans, segment_clustering
from .solver import EmbeddingResult, PfeConfig, residual_weighting, run_pfe

__version__ = "0.1.0"

__all__ = [
    "AffinityGraph",
    "ClusterScheme",
    "EmbeddingResult",
    "MetricReport",
    "NeighborhoodSpec",
    "PfeConfig",
    "PiecewiseFlatEmbedding",
    "PiecewiseFlatSegmenter",
    "Segmentation",
    "affinity_color",
    "affinity_intervening_contour",
    "boundary_edge_stats",
    "build_m",
    "build_m_prime",
    "covering",
    "evaluate",
    "grid_edges",
    "initialize",
    "kmeans",
    "rand_index",
    "residual_weighting",
    "run_pfe",
    "segment_clustering",
    "variation_of_information",
]
