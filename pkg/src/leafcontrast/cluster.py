"""Bottom-up leaf instance extraction from per-point embeddings.

``radius_decremental_cluster`` starts at the leaf tips (points outside an
initial radius around the plant center) and shrinks the radius step by
step, merging each newly found cluster into the existing instance whose
mean embedding is most cosine-similar when that similarity reaches the
merge threshold. ``graph_cut_cluster`` reuses the tip pass as seeds and
separates each seed from the others with a minimum s-t cut over the kNN
graph. ``dbscan`` and plain ``agglomerative_cluster`` are baselines.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional

import networkx as nx
import numpy as np
from networkx.algorithms.flow import boykov_kolmogorov
from scipy.spatial import cKDTree
from sklearn.cluster import DBSCAN

from .cloud import PointCloud, plant_center
from .errors import InputError
from .geodesy import DEFAULT_K, DEFAULT_TAU, build_knn_graph

NOISE = -1


@dataclass(eq=False)
class InstanceAssignment:
    """Per-point instance ids (``-1`` marks noise) and per-instance confidence."""

    labels: np.ndarray
    confidences: np.ndarray
    fallback: bool = False

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        ids = np.unique(self.labels[self.labels != NOISE])
        if ids.size and not np.array_equal(ids, np.arange(ids.size)):
            raise InputError("instance ids must be contiguous from 0")
        if len(self.confidences) != ids.size:
            raise InputError("need one confidence per instance")

    @property
    def n_instances(self) -> int:
        return len(self.confidences)

    def members(self, instance: int) -> np.ndarray:
        return np.flatnonzero(self.labels == instance)

    def to_rows(self):
        for i, lab in enumerate(self.labels):
            conf = self.confidences[lab] if lab != NOISE else 0.0
            yield i, int(lab), float(conf)


def save_assignment(assign: InstanceAssignment, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("point_index,instance_id,confidence\n")
        for i, lab, conf in assign.to_rows():
            fh.write(f"{i},{lab},{conf!r}\n")


def load_assignment(path) -> InstanceAssignment:
    import csv

    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["point_index", "instance_id", "confidence"]:
            raise InputError("line 1: expected header point_index,instance_id,confidence")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2])))
            except (ValueError, IndexError):
                raise InputError(f"line {lineno}: malformed assignment row") from None
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise InputError("point indices must cover 0..N-1 exactly once")
    labels = np.array([r[1] for r in rows], dtype=np.int64)
    k = labels.max() + 1 if len(labels) and labels.max() >= 0 else 0
    conf = np.zeros(k)
    for _, lab, c in rows:
        if lab >= 0:
            conf[lab] = c
    return InstanceAssignment(labels, conf)


# ------------------------------------------------------------- helpers


def _unit_rows(e: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    return np.divide(e, norms, out=np.zeros_like(e), where=norms > 0)


def _cos(a: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cosine similarity of vector ``a`` with each row of ``B`` (0 for zero vectors)."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(B, axis=1)
    denom = na * nb
    return np.divide(B @ a, denom, out=np.zeros(len(B)), where=denom > 0)


def _relabel(labels: np.ndarray) -> np.ndarray:
    """Map ids to 0..K-1 in order of first appearance; noise stays -1."""
    out = np.full_like(labels, NOISE)
    mapping = {}
    for i, lab in enumerate(labels):
        if lab == NOISE:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def centroid_confidence(embeddings: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Leave-one-out agreement of each instance, clamped to [0, 1].

    Every member is compared (cosine) with the mean of the *other* members;
    the instance score is the average. Excluding the member itself keeps
    tiny fragments from looking perfectly consistent: a singleton scores 0.
    """
    k = labels.max() + 1 if len(labels) and labels.max() >= 0 else 0
    conf = np.zeros(k)
    for c in range(k):
        members = embeddings[labels == c]
        m = len(members)
        if m < 2:
            continue
        others = (members.sum(axis=0)[None, :] - members) / (m - 1)
        num = np.sum(members * others, axis=1)
        den = np.linalg.norm(members, axis=1) * np.linalg.norm(others, axis=1)
        sims = np.divide(num, den, out=np.zeros(m), where=den > 0)
        conf[c] = float(np.clip(sims.mean(), 0.0, 1.0))
    return conf


def _finish(embeddings, labels, fallback=False) -> InstanceAssignment:
    labels = _relabel(np.asarray(labels))
    return InstanceAssignment(labels, centroid_confidence(embeddings, labels), fallback)


def _check_pair(cloud, embeddings):
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise InputError("embeddings must be 2-D")
    if len(e) != len(cloud):
        raise InputError(f"{len(e)} embeddings for {len(cloud)} points")
    if not np.all(np.isfinite(e)):
        raise InputError("embeddings contain non-finite values")
    return e


# ------------------------------------------------------- agglomerative


def _average_linkage_labels(e: np.ndarray, threshold: float) -> np.ndarray:
    n = len(e)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    u = _unit_rows(e)
    S = u @ u.T
    np.fill_diagonal(S, -np.inf)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    parent = np.arange(n)
    rowarg = np.argmax(S, axis=1)
    rowmax = S[np.arange(n), rowarg]
    while True:
        cand = np.where(active, rowmax, -np.inf)
        i = int(np.argmax(cand))
        best = cand[i]
        if not best >= threshold:
            break
        j = int(rowarg[i])
        # merge j into i; i < j by the lowest-index rule
        i, j = min(i, j), max(i, j)
        merged = (size[i] * S[i] + size[j] * S[j]) / (size[i] + size[j])
        merged[i] = -np.inf
        merged[j] = -np.inf
        merged[~active] = -np.inf
        S[i] = merged
        S[:, i] = merged
        S[j] = -np.inf
        S[:, j] = -np.inf
        size[i] += size[j]
        active[j] = False
        parent[parent == j] = i
        rowmax[j] = -np.inf
        # rows whose cached best pointed at i or j must be rescanned
        stale = active & ((rowarg == i) | (rowarg == j))
        stale[i] = True
        for r in np.flatnonzero(stale):
            rowarg[r] = int(np.argmax(S[r]))
            rowmax[r] = S[r, rowarg[r]]
        others = np.flatnonzero(active & ~stale)
        if others.size:
            col = S[others, i]
            better = (col > rowmax[others]) | ((col == rowmax[others]) & (i < rowarg[others]))
            rowmax[others[better]] = col[better]
            rowarg[others[better]] = i
    return parent


def agglomerative_cluster(embeddings, gamma_agg: float = 0.3) -> InstanceAssignment:
    """Average-linkage agglomeration under cosine similarity.

    Merges the most similar pair (lowest index pair on ties) while its
    linkage similarity is at least ``gamma_agg``. Memory is O(N^2).
    """
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise InputError("embeddings must be 2-D")
    return _finish(e, _average_linkage_labels(e, gamma_agg))


# ---------------------------------------------------- radius decremental


@dataclass
class PostprocessConfig:
    steps: int = 4
    merge_threshold: float = 0.9
    agglomerative_threshold: float = 0.3
    radial_plane: str = "xy"
    k: int = DEFAULT_K
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if int(self.steps) < 1:
            raise InputError("steps must be >= 1")
        if self.radial_plane not in ("xy", "3d"):
            raise InputError("radial_plane must be 'xy' or '3d'")

    def to_dict(self):
        return asdict(self)


def initial_radius(cloud):
    """Half the smaller of the x and y half-extents about the plant center.

    Returns ``(r_init, center)``.
    """
    pos = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    center = plant_center(pos)
    dx = np.max(np.abs(pos[:, 0] - center[0]))
    dy = np.max(np.abs(pos[:, 1] - center[1]))
    return float(min(dx, dy) / 2), center


def radial_distance(positions, center, plane="xy") -> np.ndarray:
    rel = np.asarray(positions) - center
    if plane == "xy":
        rel = rel[:, :2]
    return np.linalg.norm(rel, axis=1)


class _Instances:
    """Growing instances with running embedding sums for mean comparison."""

    def __init__(self, n, dim):
        self.labels = np.full(n, NOISE, dtype=np.int64)
        self.sums: List[np.ndarray] = []
        self.counts: List[int] = []
        self.dim = dim

    def means(self) -> np.ndarray:
        if not self.sums:
            return np.empty((0, self.dim))
        return np.array(self.sums) / np.array(self.counts)[:, None]

    def absorb(self, members, e, gamma) -> int:
        """Merge ``members`` into the best-matching instance or open a new one."""
        mean = e[members].mean(axis=0)
        target = -1
        if self.sums:
            sims = _cos(mean, self.means())
            best = int(np.argmax(sims))
            if sims[best] >= gamma:
                target = best
        if target < 0:
            target = len(self.sums)
            self.sums.append(np.zeros(self.dim))
            self.counts.append(0)
        self.labels[members] = target
        self.sums[target] = self.sums[target] + e[members].sum(axis=0)
        self.counts[target] += len(members)
        return target


def _cluster_pass(inst: _Instances, candidates, e, config):
    sub = _average_linkage_labels(e[candidates], config.agglomerative_threshold)
    for root in np.unique(sub):
        inst.absorb(candidates[sub == root], e, config.merge_threshold)


def radius_decremental_cluster(cloud: PointCloud, embeddings,
                               config: Optional[PostprocessConfig] = None) -> InstanceAssignment:
    """Cluster from the leaf tips inwards with radius ``r_init * (1 - t/steps)``.

    Pass ``t = 0`` handles the tips outside ``r_init``; at ``t = steps`` the
    radius is 0 and every remaining point is clustered. New clusters join
    the instance with the most similar mean embedding if that cosine
    similarity is at least ``merge_threshold``.
    """
    config = config or PostprocessConfig()
    e = _check_pair(cloud, embeddings)
    n = len(e)
    if n == 0:
        return InstanceAssignment(np.empty(0, int), np.empty(0))
    r_init, center = initial_radius(cloud)
    radial = radial_distance(cloud.positions, center, config.radial_plane)
    inst = _Instances(n, e.shape[1])
    steps = int(config.steps)
    for t in range(steps + 1):
        unassigned = inst.labels == NOISE
        if t < steps:
            r = r_init * (1 - t / steps)
            unassigned &= radial > r
        candidates = np.flatnonzero(unassigned)
        if candidates.size:
            _cluster_pass(inst, candidates, e, config)
    return _finish(e, inst.labels)


# ------------------------------------------------------------ graph cut


def _min_cut_source_side(base: nx.DiGraph, sources, sinks) -> set:
    """Nodes reachable from the sources in the residual graph of a max flow.

    This is the smallest source side among all minimum cuts, so regions
    cut off from every terminal stay unclaimed.
    """
    g = base.copy()
    for s in sources:
        g.add_edge("_src", int(s))
    for t in sinks:
        g.add_edge(int(t), "_snk")
    R = boykov_kolmogorov(g, "_src", "_snk")
    seen = {"_src"}
    stack = ["_src"]
    while stack:
        u = stack.pop()
        for v, attr in R[u].items():
            if v not in seen and attr["flow"] < attr["capacity"]:
                seen.add(v)
                stack.append(v)
    seen.discard("_src")
    return seen


def graph_cut_cluster(cloud: PointCloud, embeddings,
                      config: Optional[PostprocessConfig] = None) -> InstanceAssignment:
    """Seeded min-cut variant of the radius postprocessing.

    The tip pass at ``r_init`` yields seeds. Over the kNN graph with edge
    capacity ``max(0, cos(e_i, e_j))`` each seed in turn is cut from the
    union of the other seeds and claims the unassigned points on its side.
    Points no cut claimed join the instance with the most similar mean
    embedding, and a final pass merges instances whose means reach
    ``merge_threshold``.
    """
    config = config or PostprocessConfig()
    e = _check_pair(cloud, embeddings)
    n = len(e)
    if n == 0:
        return InstanceAssignment(np.empty(0, int), np.empty(0))
    r_init, center = initial_radius(cloud)
    radial = radial_distance(cloud.positions, center, config.radial_plane)
    tips = np.flatnonzero(radial > r_init)
    if r_init == 0 or tips.size == 0:
        labels = _average_linkage_labels(e, config.agglomerative_threshold)
        return _finish(e, labels, fallback=True)

    inst = _Instances(n, e.shape[1])
    _cluster_pass(inst, tips, e, config)
    seeds = [np.flatnonzero(inst.labels == s) for s in range(len(inst.sums))]
    labels = inst.labels.copy()

    if len(seeds) > 1:
        graph = build_knn_graph(cloud, config.k, config.tau)
        u = _unit_rows(e)
        base = nx.DiGraph()
        base.add_nodes_from(range(n))
        if graph.n_edges:
            i, j = graph.edges.T
            caps = np.maximum(0.0, np.sum(u[i] * u[j], axis=1))
            for a, b, c in zip(i.tolist(), j.tolist(), caps.tolist()):
                base.add_edge(a, b, capacity=c)
                base.add_edge(b, a, capacity=c)
        for s, members in enumerate(seeds):
            sinks = np.concatenate([m for t, m in enumerate(seeds) if t != s])
            side = _min_cut_source_side(base, members, sinks)
            claim = np.fromiter(side, dtype=np.int64, count=len(side))
            claim = claim[labels[claim] == NOISE]
            labels[claim] = s
    else:
        labels[:] = 0

    left = np.flatnonzero(labels == NOISE)
    if left.size:
        means = np.array([e[labels == s].mean(axis=0) for s in range(len(seeds))])
        um = _unit_rows(means)
        sims = _unit_rows(e[left]) @ um.T
        labels[left] = np.argmax(sims, axis=1)

    # final merge of instances with similar means, in ascending id order
    merged = _Instances(n, e.shape[1])
    for s in range(len(seeds)):
        members = np.flatnonzero(labels == s)
        if members.size:
            merged.absorb(members, e, config.merge_threshold)
    return _finish(e, merged.labels)


# --------------------------------------------------------------- DBSCAN


def dbscan(features, eps: float, min_pts: int) -> InstanceAssignment:
    """Density-based clustering with the Euclidean metric; noise gets ``-1``.

    Confidence of an instance is one minus the fraction of noise points in
    its members' eps-neighborhoods, floored at 0.5.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise InputError("features must be 2-D")
    if not eps > 0:
        raise InputError("eps must be > 0")
    if min_pts < 1:
        raise InputError("min_pts must be >= 1")
    if len(x) == 0:
        return InstanceAssignment(np.empty(0, int), np.empty(0))
    raw = DBSCAN(eps=eps, min_samples=int(min_pts)).fit_predict(x)
    labels = _relabel(raw)
    k = labels.max() + 1 if labels.max() >= 0 else 0
    conf = np.zeros(k)
    if k:
        tree = cKDTree(x)
        noise = labels == NOISE
        for c in range(k):
            hoods = tree.query_ball_point(x[labels == c], eps)
            total = sum(len(h) for h in hoods)
            noisy = sum(int(noise[h].sum()) for h in hoods)
            conf[c] = max(0.5, 1.0 - noisy / total)
    return InstanceAssignment(labels, conf)
