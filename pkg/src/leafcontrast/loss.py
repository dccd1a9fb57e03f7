"""Spatially informed contrastive loss on per-point embeddings.

The loss compares the cross-similarity ``C = E0_hat @ E1_hat.T`` of
row-normalized embeddings against a target ``T``: the identity
(point-to-point), or the inverse-distance similarity of Euclidean or graph
geodesic distances. In one-view mode ``E1`` is ``E0``.

Discrepancy modes
-----------------
``squared``  sum of ``(T - C)**2`` (default; bounded below by 0)
``absolute`` sum of ``|T - C|``
``literal``  sum of ``T - C`` as written, which is unbounded below and
             only useful for fidelity experiments
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .cloud import PointCloud, subsample
from .errors import DivergenceError, InputError
from .geodesy import (
    DEFAULT_EPSILON,
    DEFAULT_K,
    DEFAULT_TAU,
    euclidean_distance_matrix,
    geodesic_distance_matrix,
    similarity_matrix,
)

TARGETS = ("identity", "euclidean", "graph")
DISCREPANCIES = ("squared", "absolute", "literal")


@dataclass
class LossConfig:
    target: str = "graph"
    n_views: int = 1
    discrepancy: str = "squared"
    n_points: int = 10000
    epsilon: float = DEFAULT_EPSILON
    reduction: str = "mean"
    mask_diagonal: bool = False
    k: int = DEFAULT_K
    tau: float = DEFAULT_TAU
    distance_method: str = "fw"

    def __post_init__(self):
        if self.target not in TARGETS:
            raise InputError(f"target must be one of {TARGETS}")
        if self.n_views not in (1, 2):
            raise InputError("n_views must be 1 or 2")
        if self.discrepancy not in DISCREPANCIES:
            raise InputError(f"discrepancy must be one of {DISCREPANCIES}")
        if self.n_points < 1:
            raise InputError("n_points must be >= 1")
        if not self.epsilon > 0:
            raise InputError("epsilon must be > 0")
        if self.reduction not in ("mean", "sum"):
            raise InputError("reduction must be 'mean' or 'sum'")

    def to_dict(self):
        return asdict(self)


def normalize_embeddings(e) -> np.ndarray:
    """Divide every row by its Euclidean norm."""
    e = np.asarray(e, dtype=np.float64)
    norms = np.linalg.norm(e, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise InputError(f"embedding row {bad[0]} has zero norm")
    return e / norms[:, None]


def cross_similarity(e0, e1) -> np.ndarray:
    e0 = np.asarray(e0, dtype=np.float64)
    e1 = np.asarray(e1, dtype=np.float64)
    if e0.shape != e1.shape:
        raise InputError(f"embedding shapes differ: {e0.shape} vs {e1.shape}")
    return e0 @ e1.T


def _views(e_views) -> List[np.ndarray]:
    if isinstance(e_views, np.ndarray) and e_views.ndim == 2:
        e_views = [e_views]
    views = [np.asarray(e, dtype=np.float64) for e in e_views]
    if len(views) not in (1, 2):
        raise InputError("expected one or two embedding views")
    for e in views:
        if e.ndim != 2:
            raise InputError("embeddings must be 2-D")
        if not np.all(np.isfinite(e)):
            raise InputError("embeddings contain non-finite values")
    if len(views) == 2 and views[0].shape != views[1].shape:
        raise InputError(f"view shapes differ: {views[0].shape} vs {views[1].shape}")
    return views


def _target(target, n) -> np.ndarray:
    if target is None or (isinstance(target, str) and target == "identity"):
        return np.eye(n)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != (n, n):
        raise InputError(f"target must have shape ({n}, {n}), got {t.shape}")
    return t


def _residual(e_views, target, config):
    views = _views(e_views)
    n = views[0].shape[0]
    T = _target(target, n)
    normed = [normalize_embeddings(e) for e in views]
    C = cross_similarity(normed[0], normed[-1])
    scale = 1.0 / (n * n) if config.reduction == "mean" else 1.0
    mask = None
    if config.mask_diagonal:
        mask = 1.0 - np.eye(n)
    return views, normed, T - C, scale, mask


def contrastive_loss(e_views, target=None, config: Optional[LossConfig] = None) -> float:
    """Loss of raw embeddings (one array or a pair of views) against ``target``.

    ``target=None`` selects the identity (point-to-point) target.
    """
    config = config or LossConfig()
    _, _, R, scale, mask = _residual(e_views, target, config)
    if config.discrepancy == "squared":
        f = R * R
    elif config.discrepancy == "absolute":
        f = np.abs(R)
    else:
        f = R
    if mask is not None:
        f = f * mask
    return float(scale * f.sum())


def _unnormalize_grad(e, e_hat, g_hat):
    """Pull a gradient w.r.t. normalized rows back to the raw rows."""
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    radial = np.sum(g_hat * e_hat, axis=1, keepdims=True)
    return (g_hat - radial * e_hat) / norms


def loss_gradient(e_views, target=None, config: Optional[LossConfig] = None) -> List[np.ndarray]:
    """Exact gradient of ``contrastive_loss`` w.r.t. each raw embedding view."""
    config = config or LossConfig()
    views, normed, R, scale, mask = _residual(e_views, target, config)
    if config.discrepancy == "squared":
        G = -2.0 * scale * R
    elif config.discrepancy == "absolute":
        G = -scale * np.sign(R)
    else:
        G = np.full_like(R, -scale)
    if mask is not None:
        G = G * mask
    if len(views) == 1:
        g_hat = (G + G.T) @ normed[0]
        return [_unnormalize_grad(views[0], normed[0], g_hat)]
    g0 = G @ normed[1]
    g1 = G.T @ normed[0]
    return [
        _unnormalize_grad(views[0], normed[0], g0),
        _unnormalize_grad(views[1], normed[1], g1),
    ]


def build_target(cloud: PointCloud, config: LossConfig, threads=None) -> np.ndarray:
    """Target matrix for ``config.target`` computed on ``cloud``'s geometry."""
    n = len(cloud)
    if config.target == "identity":
        return np.eye(n)
    if config.target == "euclidean":
        d = euclidean_distance_matrix(cloud)
    else:
        d = geodesic_distance_matrix(cloud, config.k, config.tau, config.distance_method, threads)
    return similarity_matrix(d, config.epsilon)


@dataclass
class OptimizationResult:
    embeddings: np.ndarray
    loss_trace: np.ndarray
    indices: np.ndarray
    target: np.ndarray = field(repr=False)


def optimize_embeddings(cloud: PointCloud, config: Optional[LossConfig] = None, steps: int = 500,
                        learning_rate: float = 100.0, seed=0, dim: int = 3,
                        threads=None) -> OptimizationResult:
    """Fit free per-point embeddings to the target by plain gradient descent.

    Stands in for a backbone: every point owns a ``dim``-vector, initialized
    uniformly in ``[-0.1, 0.1]^dim`` and normalized. The cloud is subsampled
    to ``config.n_points`` once; target and loss share that subsample, whose
    original indices are returned in ``indices``. ``loss_trace[t]`` is the
    loss before step ``t``; its last entry is the final loss.

    With mean reduction the gradients shrink like ``1/N``, hence the large
    default step size.
    """
    config = config or LossConfig()
    if len(cloud) < 2:
        raise InputError("optimize_embeddings needs at least two points")
    if steps < 0:
        raise InputError("steps must be >= 0")
    sub, idx = subsample(cloud, config.n_points, seed=seed)
    T = build_target(sub, config, threads)
    rng = np.random.default_rng(seed)
    e = rng.uniform(-0.1, 0.1, size=(len(sub), dim))
    e = normalize_embeddings(e)
    trace = np.empty(steps + 1)
    for step in range(steps + 1):
        views = [e] * config.n_views
        trace[step] = contrastive_loss(views, T, config)
        if step == steps:
            break
        grads = loss_gradient(views, T, config)
        e = e - learning_rate * sum(grads)
        if not np.all(np.isfinite(e)):
            raise DivergenceError(f"embeddings became non-finite at step {step + 1}")
        if np.any(np.linalg.norm(e, axis=1) == 0):
            raise DivergenceError(f"an embedding collapsed to zero at step {step + 1}")
    return OptimizationResult(e, trace, idx, T)
