"""scikit-learn compatible wrappers around the functional API.

Positions are passed as ``(N, 3)`` arrays (extra color columns are
ignored). The clustering estimators take embeddings as ``X`` and the
matching positions through the ``positions`` fit parameter, so they work
with ``fit_predict`` and ``get_params``/``set_params``.
"""
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .cloud import PointCloud
from .cluster import PostprocessConfig, graph_cut_cluster, radius_decremental_cluster
from .errors import InputError
from .geodesy import (
    DEFAULT_EPSILON,
    DEFAULT_K,
    DEFAULT_TAU,
    euclidean_distance_matrix,
    geodesic_distance_matrix,
    similarity_matrix,
)
from .loss import LossConfig, optimize_embeddings


def _as_cloud(X) -> PointCloud:
    X = check_array(X, ensure_min_samples=1)
    if X.shape[1] < 3:
        raise InputError("need at least three position columns")
    return PointCloud(X[:, :3])


class GeodesicSimilarity(TransformerMixin, BaseEstimator):
    """Map point positions to the ``N x N`` similarity target.

    ``method`` is ``fw`` (graph geodesics via Floyd-Warshall), ``sparse``
    (same distances via Dijkstra), ``knn`` (one-hop graph distances) or
    ``euclidean``.
    """

    def __init__(self, k=DEFAULT_K, tau=DEFAULT_TAU, epsilon=DEFAULT_EPSILON, method="fw", threads=None):
        self.k = k
        self.tau = tau
        self.epsilon = epsilon
        self.method = method
        self.threads = threads

    def _distances(self, X):
        cloud = _as_cloud(X)
        if self.method == "euclidean":
            return euclidean_distance_matrix(cloud)
        return geodesic_distance_matrix(cloud, self.k, self.tau, self.method, self.threads)

    def fit(self, X, y=None):
        self.distances_ = self._distances(X)
        self.n_features_in_ = check_array(X).shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "distances_")
        return similarity_matrix(self._distances(X), self.epsilon)

    def fit_transform(self, X, y=None, **fit_params):
        self.fit(X)
        return similarity_matrix(self.distances_, self.epsilon)


class ContrastiveEmbedding(BaseEstimator):
    """Learn per-point embeddings by gradient descent on the contrastive loss.

    Like t-SNE there is no out-of-sample ``transform``: use
    ``fit_transform``. When ``n_points`` is below the cloud size only the
    subsample is embedded; ``indices_`` gives its rows.
    """

    def __init__(self, n_components=3, target="graph", n_views=1, discrepancy="squared",
                 n_points=10000, epsilon=0.05, k=DEFAULT_K, tau=DEFAULT_TAU,
                 steps=1000, learning_rate=100.0, random_state=0):
        self.n_components = n_components
        self.target = target
        self.n_views = n_views
        self.discrepancy = discrepancy
        self.n_points = n_points
        self.epsilon = epsilon
        self.k = k
        self.tau = tau
        self.steps = steps
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y=None):
        cloud = _as_cloud(X)
        config = LossConfig(target=self.target, n_views=self.n_views, discrepancy=self.discrepancy,
                            n_points=self.n_points, epsilon=self.epsilon, k=self.k, tau=self.tau)
        res = optimize_embeddings(cloud, config, self.steps, self.learning_rate,
                                  seed=self.random_state, dim=self.n_components)
        self.embedding_ = res.embeddings
        self.loss_trace_ = res.loss_trace
        self.indices_ = res.indices
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_


class _PostprocessBase(ClusterMixin, BaseEstimator):
    _func = None

    def __init__(self, steps=4, merge_threshold=0.9, agglomerative_threshold=0.3,
                 radial_plane="xy", k=DEFAULT_K, tau=DEFAULT_TAU):
        self.steps = steps
        self.merge_threshold = merge_threshold
        self.agglomerative_threshold = agglomerative_threshold
        self.radial_plane = radial_plane
        self.k = k
        self.tau = tau

    def fit(self, X, y=None, positions=None):
        if positions is None:
            raise InputError("positions must be passed to fit")
        e = check_array(X)
        cloud = _as_cloud(positions)
        config = PostprocessConfig(self.steps, self.merge_threshold, self.agglomerative_threshold,
                                   self.radial_plane, self.k, self.tau)
        assign = type(self)._func(cloud, e, config)
        self.labels_ = assign.labels
        self.confidences_ = assign.confidences
        self.n_clusters_ = assign.n_instances
        self.assignment_ = assign
        return self


class RadiusDecrementalClustering(_PostprocessBase):
    """Tip-first clustering with a shrinking exclusion radius."""

    _func = staticmethod(radius_decremental_cluster)


class GraphCutClustering(_PostprocessBase):
    """Tip seeds grown into leaves by seeded minimum cuts on the kNN graph."""

    _func = staticmethod(graph_cut_cluster)
