"""kNN surface graphs, all-pairs geodesic distances and similarity targets."""
from __future__ import annotations

import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .cloud import PointCloud
from .errors import InputError

log = logging.getLogger(__name__)

DEFAULT_K = 7
DEFAULT_TAU = 0.02  # meters
DEFAULT_EPSILON = 1e-8
DEFAULT_BLOCK = 64
THREADS_ENV = "LEAFCONTRAST_THREADS"


@dataclass(frozen=True, eq=False)
class KnnGraph:
    """Undirected graph with ``edges[m] = (i, j)``, ``i < j``, sorted
    lexicographically, and Euclidean ``weights[m]``."""

    n_vertices: int
    edges: np.ndarray
    weights: np.ndarray
    k: int
    tau: float

    @property
    def n_edges(self) -> int:
        return len(self.weights)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_vertices)

    def to_sparse(self) -> sp.csr_matrix:
        """Symmetric CSR adjacency; zero-length edges stay as explicit entries."""
        i, j = self.edges.T if self.n_edges else (np.empty(0, int), np.empty(0, int))
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        data = np.concatenate([self.weights, self.weights])
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_vertices, self.n_vertices))


def _positions(cloud):
    if isinstance(cloud, PointCloud):
        return cloud.positions
    pos = np.asarray(cloud, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise InputError(f"expected (N, 3) positions, got {pos.shape}")
    return pos


def build_knn_graph(cloud, k: int = DEFAULT_K, tau: float = DEFAULT_TAU) -> KnnGraph:
    """Connect every point to its ``k`` nearest neighbors no farther than ``tau``.

    The directed relation is symmetrized by union, so a vertex may end up
    with more than ``k`` incident edges.
    """
    pos = _positions(cloud)
    n = len(pos)
    if n < 1:
        raise InputError("build_knn_graph needs at least one point")
    if k < 1:
        raise InputError("k must be >= 1")
    if not tau > 0:
        raise InputError("tau must be > 0")
    kq = min(k + 1, n)
    dist, nbr = cKDTree(pos).query(pos, k=kq)
    dist = dist.reshape(n, kq)
    nbr = nbr.reshape(n, kq)
    pairs = set()
    for i in range(n):
        taken = 0
        for d, j in zip(dist[i], nbr[i]):
            if j == i:
                continue
            if taken == k:
                break
            taken += 1
            if d <= tau:
                pairs.add((min(i, j), max(i, j)))
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    weights = np.linalg.norm(pos[edges[:, 0]] - pos[edges[:, 1]], axis=1) if len(edges) else np.empty(0)
    return KnnGraph(n, edges, weights, int(k), float(tau))


def init_distance_matrix(graph: KnnGraph) -> np.ndarray:
    """Edge lengths where an edge exists, 0 on the diagonal, inf elsewhere."""
    d = np.full((graph.n_vertices, graph.n_vertices), np.inf)
    np.fill_diagonal(d, 0.0)
    if graph.n_edges:
        i, j = graph.edges.T
        d[i, j] = graph.weights
        d[j, i] = graph.weights
    return d


def _check_premetric(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise InputError(f"distance matrix must be square, got {d.shape}")
    if np.isnan(d).any():
        raise InputError("distance matrix contains NaN")
    if (d < 0).any():
        raise InputError("distance matrix contains negative entries")
    if not np.array_equal(d, d.T):
        raise InputError("distance matrix is not symmetric")
    if np.any(np.diag(d) != 0):
        raise InputError("distance matrix diagonal must be zero")
    return d


def resolve_threads(threads: Optional[int] = None) -> int:
    """Thread count: explicit argument, else the environment cap, else numba's default."""
    from . import _fw_kernels

    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else _fw_kernels.max_threads()
    threads = int(threads)
    if threads < 1:
        raise InputError("threads must be >= 1")
    cap = _fw_kernels.max_threads()
    if threads > cap:
        log.warning("requested %d threads, numba allows %d", threads, cap)
        threads = cap
    return threads


@contextmanager
def _numba_threads(n):
    import numba

    prev = numba.get_num_threads()
    numba.set_num_threads(n)
    try:
        yield
    finally:
        numba.set_num_threads(prev)


def floyd_warshall(d, block_size: int = DEFAULT_BLOCK, threads: Optional[int] = None) -> np.ndarray:
    """All-pairs shortest-path closure of a symmetric pre-metric.

    Cache-blocked Floyd-Warshall; the output is bitwise identical for every
    ``threads`` value. Unreachable pairs stay ``inf``. The input is copied.
    """
    from ._fw_kernels import blocked_closure

    d = _check_premetric(d)
    if block_size < 1:
        raise InputError("block_size must be >= 1")
    out = np.array(d, dtype=np.float64, order="C", copy=True)
    if len(out) < 2:
        return out
    with _numba_threads(resolve_threads(threads)):
        blocked_closure(out, int(block_size))
    return out


def apsp_sparse(graph: KnnGraph) -> np.ndarray:
    """Per-source Dijkstra over the sparse graph; matches ``floyd_warshall``."""
    if graph.n_vertices < 2:
        return init_distance_matrix(graph)
    return shortest_path(graph.to_sparse(), method="D", directed=False)


def euclidean_distance_matrix(cloud) -> np.ndarray:
    pos = _positions(cloud)
    if len(pos) < 1:
        raise InputError("euclidean_distance_matrix needs at least one point")
    return cdist(pos, pos)


def geodesic_distance_matrix(cloud, k: int = DEFAULT_K, tau: float = DEFAULT_TAU,
                             method: str = "fw", threads: Optional[int] = None) -> np.ndarray:
    """kNN graph followed by the chosen closure (``fw``, ``sparse`` or ``knn``).

    ``knn`` skips the closure and returns the one-hop matrix.
    """
    graph = build_knn_graph(cloud, k, tau)
    if method == "fw":
        return floyd_warshall(init_distance_matrix(graph), threads=threads)
    if method == "sparse":
        return apsp_sparse(graph)
    if method == "knn":
        return init_distance_matrix(graph)
    raise InputError(f"unknown geodesic method {method!r}")


def similarity_matrix(d, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Inverse-distance similarity ``1/(D + eps)`` scaled so its maximum is 1.

    With a zero diagonal the result is ``eps / (D + eps)``: 1 at zero
    distance, 0 for unreachable pairs.
    """
    if not epsilon > 0:
        raise InputError("epsilon must be > 0")
    d = np.asarray(d, dtype=np.float64)
    if (d < 0).any() or np.isnan(d).any():
        raise InputError("distances must be non-negative")
    s = 1.0 / (d + epsilon)
    return s / s.max()
