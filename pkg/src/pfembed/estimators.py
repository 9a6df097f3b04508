"""scikit-learn style wrappers around the embedding and clustering pipeline.

Both estimators take a single image ``X`` of shape ``(h, w)`` or
``(h, w, 3)`` with values in [0, 1]; rows of the output correspond to
pixels in row-major order.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from .graph import NeighborhoodSpec, affinity_color, grid_edges
from .initialization import initialize
from .segment import cluster_map
from .solver import PfeConfig, run_pfe
from .validation import check_image


class PiecewiseFlatEmbedding(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Piecewise flat embedding of an image's pixels.

    After ``fit``: ``embedding_`` (raw channels, ``(n_pixels, d)``),
    ``weighted_embedding_``, ``eta_``, ``energy_trace_``, ``graph_``.
    ``transform`` returns the weighted channels when ``weighted`` is set.
    """

    def __init__(self, d=4, p=1.0, lam=40000.0, r_stage1=600.0, r_stage2=10.0, alpha=0.1,
                 epsilon_w=1e-5, radius=3, sigma_c=0.1, sigma_x=None, init="wsc_density",
                 reference_pixels=321 * 481, weighted=True, seed=0):
        self.d = d
        self.p = p
        self.lam = lam
        self.r_stage1 = r_stage1
        self.r_stage2 = r_stage2
        self.alpha = alpha
        self.epsilon_w = epsilon_w
        self.radius = radius
        self.sigma_c = sigma_c
        self.sigma_x = sigma_x
        self.init = init
        self.reference_pixels = reference_pixels
        self.weighted = weighted
        self.seed = seed

    def _config(self) -> PfeConfig:
        return PfeConfig(d=self.d, p=self.p, lam=self.lam, r_stage1=self.r_stage1,
                         r_stage2=self.r_stage2, alpha=self.alpha, epsilon_w=self.epsilon_w,
                         reference_pixels=self.reference_pixels, seed=self.seed)

    def fit(self, X, y=None):
        img = check_image(X)
        h, w = img.shape[:2]
        sigma_x = 4.0 * self.radius if self.sigma_x is None else self.sigma_x
        graph = affinity_color(img, grid_edges(w, h, NeighborhoodSpec(self.radius)),
                               self.sigma_c, sigma_x)
        res = run_pfe(graph, self._config(), initialize(self.init, img, graph, self.d, self.seed))
        self.graph_ = graph
        self.image_shape_ = (h, w)
        self.result_ = res
        self.embedding_ = res.y
        self.weighted_embedding_ = res.y_weighted
        self.eta_ = res.eta
        self.energy_trace_ = res.energy_trace
        return self

    def transform(self, X=None):
        """Channels of the fitted image; ``X``, if given, must be that image's shape."""
        check_is_fitted(self, "embedding_")
        if X is not None and check_image(X).shape[:2] != self.image_shape_:
            raise ValueError("transform only applies to the image passed to fit")
        return self.weighted_embedding_ if self.weighted else self.embedding_

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).transform()


class PiecewiseFlatSegmenter(ClusterMixin, BaseEstimator):
    """k-means on piecewise flat embedding channels; ``labels_`` is ``(h, w)``."""

    def __init__(self, n_clusters=2, embedding=None, max_iter=100, seed=0):
        self.n_clusters = n_clusters
        self.embedding = embedding
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y=None):
        emb = clone(self.embedding) if self.embedding is not None else PiecewiseFlatEmbedding(seed=self.seed)
        feats = emb.fit_transform(X)
        self.embedding_ = emb
        seg = cluster_map(feats, emb.image_shape_, self.n_clusters, self.seed, self.max_iter)
        self.labels_ = seg.labels
        self.n_segments_ = seg.k
        return self

    def fit_predict(self, X, y=None, **kwargs):
        return self.fit(X).labels_

    def predict(self, X=None):
        check_is_fitted(self, "labels_")
        return self.labels_

