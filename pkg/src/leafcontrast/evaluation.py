"""Instance scoring (AP / mAP), perfect embeddings, noise models and the
noise-robustness sweep used to compare postprocessings."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

import numpy as np

from .cloud import PointCloud, plant_center
from .cluster import (
    InstanceAssignment,
    PostprocessConfig,
    agglomerative_cluster,
    dbscan,
    graph_cut_cluster,
    initial_radius,
    radius_decremental_cluster,
)
from .errors import InputError

IOU_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.951, 0.05), 2))
METHODS = ("radius", "graphcut", "dbscan", "agglomerative")
NOISE_KINDS = ("uniform", "gaussian_center")


# ----------------------------------------------------------- embeddings


def perfect_embeddings(cloud: PointCloud, d: Optional[int] = None) -> np.ndarray:
    """One standard basis vector per ground-truth instance."""
    if cloud.labels is None:
        raise InputError("perfect_embeddings needs a labeled cloud")
    ids, inverse = np.unique(cloud.labels, return_inverse=True)
    d = len(ids) if d is None else int(d)
    if d < len(ids):
        raise InputError(f"embedding size {d} < {len(ids)} instances")
    e = np.zeros((len(cloud), d))
    e[np.arange(len(cloud)), inverse] = 1.0
    return e


@dataclass(frozen=True)
class NoiseConfig:
    """``uniform``: every component gets ``U(-m, m)``. ``gaussian_center``:
    the bound shrinks as ``m * exp(-d^2 / (2 sigma^2))`` with the point's
    xy-distance ``d`` to the plant center; ``sigma=None`` means ``r_init/2``.
    """

    kind: str = "uniform"
    magnitude: float = 0.0
    sigma: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InputError(f"noise kind must be one of {NOISE_KINDS}")
        if self.magnitude < 0:
            raise InputError("noise magnitude must be >= 0")
        if self.sigma is not None and not self.sigma > 0:
            raise InputError("sigma must be > 0")


def noise_envelope(cloud: PointCloud, magnitude: float, sigma: Optional[float] = None) -> np.ndarray:
    """Per-point noise bound of the ``gaussian_center`` model."""
    if sigma is None:
        sigma = initial_radius(cloud)[0] / 2
        if not sigma > 0:
            raise InputError("default sigma is zero for this cloud; pass sigma explicitly")
    c = plant_center(cloud)
    d2 = np.sum((cloud.positions[:, :2] - c[:2]) ** 2, axis=1)
    return magnitude * np.exp(-d2 / (2 * sigma ** 2))


def add_noise(e, cloud: PointCloud, config: NoiseConfig) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if len(e) != len(cloud):
        raise InputError(f"{len(e)} embeddings for {len(cloud)} points")
    rng = np.random.default_rng(config.seed)
    if config.kind == "uniform":
        bound = np.full((len(e), 1), config.magnitude)
    else:
        bound = noise_envelope(cloud, config.magnitude, config.sigma)[:, None]
    u = rng.uniform(-1.0, 1.0, e.shape)
    return e + u * bound


# --------------------------------------------------------------- scoring


def instance_iou(pred_points, gt_points) -> float:
    a, b = set(map(int, pred_points)), set(map(int, gt_points))
    union = len(a | b)
    if union == 0:
        raise InputError("IoU of two empty sets is undefined")
    return len(a & b) / union


def _iou_matrix(pred_labels, gt_labels):
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    gt_ids = np.unique(gt_labels[gt_labels >= 0])
    k = pred_labels.max() + 1 if len(pred_labels) and pred_labels.max() >= 0 else 0
    g_index = np.searchsorted(gt_ids, gt_labels)
    inter = np.zeros((k, len(gt_ids)))
    valid = (pred_labels >= 0) & (gt_labels >= 0)
    np.add.at(inter, (pred_labels[valid], g_index[valid]), 1)
    p_size = np.bincount(pred_labels[pred_labels >= 0], minlength=k)
    g_size = np.bincount(g_index[gt_labels >= 0], minlength=len(gt_ids))
    union = p_size[:, None] + g_size[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def _match(pred: InstanceAssignment, iou: np.ndarray, threshold: float):
    order = sorted(range(pred.n_instances), key=lambda p: (-pred.confidences[p], p))
    free = np.ones(iou.shape[1], dtype=bool)
    tp = np.zeros(len(order), dtype=bool)
    for rank, p in enumerate(order):
        if not free.any():
            continue
        cand = np.where(free, iou[p], -1.0)
        g = int(np.argmax(cand))
        if cand[g] >= threshold:
            tp[rank] = True
            free[g] = False
    return tp


def _area_under_pr(tp: np.ndarray, n_gt: int) -> float:
    if n_gt == 0:
        return 1.0 if len(tp) == 0 else 0.0
    if len(tp) == 0:
        return 0.0
    # integer counts make exact rational integration cheap; the result
    # is then the correctly rounded float
    ctp = np.cumsum(tp).tolist()
    area = Fraction(0)
    best = Fraction(0)
    prev_recall = Fraction(0)
    points = [(Fraction(c, n_gt), Fraction(c, i + 1)) for i, c in enumerate(ctp)]
    # precision envelope: max precision at any recall >= the current one
    envelope = []
    for recall, precision in reversed(points):
        best = max(best, precision)
        envelope.append((recall, best))
    for recall, precision in reversed(envelope):
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return float(area)


def average_precision(pred: InstanceAssignment, gt_labels, iou_threshold: float = 0.5) -> float:
    """All-points interpolated AP with greedy confidence-ordered matching.

    Each prediction, by descending confidence (ascending id on ties),
    takes the unmatched ground-truth instance of highest IoU if that IoU
    reaches ``iou_threshold``; otherwise it is a false positive.
    """
    gt_labels = np.asarray(gt_labels)
    if len(gt_labels) != len(pred.labels):
        raise InputError("prediction and ground truth cover different point counts")
    iou = _iou_matrix(pred.labels, gt_labels)
    return _area_under_pr(_match(pred, iou, iou_threshold), iou.shape[1])


@dataclass
class APResult:
    thresholds: tuple
    ap: np.ndarray
    map: float
    ap50: float
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray


def mean_average_precision(pred: InstanceAssignment, gt_labels,
                           thresholds: Sequence[float] = IOU_THRESHOLDS) -> APResult:
    """AP averaged over IoU thresholds 0.50:0.05:0.95, plus AP@0.50."""
    gt_labels = np.asarray(gt_labels)
    iou = _iou_matrix(pred.labels, gt_labels)
    n_gt = iou.shape[1]
    aps, tps, fps, fns = [], [], [], []
    for t in thresholds:
        tp = _match(pred, iou, t)
        aps.append(_area_under_pr(tp, n_gt))
        tps.append(int(tp.sum()))
        fps.append(int((~tp).sum()))
        fns.append(n_gt - int(tp.sum()))
    ap50 = aps[list(thresholds).index(0.5)] if 0.5 in thresholds else average_precision(pred, gt_labels, 0.5)
    return APResult(tuple(thresholds), np.array(aps), float(np.mean(aps)), float(ap50),
                    np.array(tps), np.array(fps), np.array(fns))


# ----------------------------------------------------------------- sweep


@dataclass
class SweepConfig:
    kinds: Sequence[str] = NOISE_KINDS
    reps: int = 5
    seed: int = 0
    embedding_dim: Optional[int] = None
    sigma: Optional[float] = None
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    dbscan_eps: float = 0.5
    dbscan_min_pts: int = 10

    def __post_init__(self):
        if isinstance(self.postprocess, dict):
            self.postprocess = PostprocessConfig(**self.postprocess)
        for kind in self.kinds:
            if kind not in NOISE_KINDS:
                raise InputError(f"unknown noise kind {kind!r}")
        if self.reps < 1:
            raise InputError("reps must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SweepRow:
    method: str
    noise_kind: str
    magnitude: float
    rep: int
    map: float
    ap50: float


def run_method(method: str, cloud: PointCloud, e: np.ndarray, config: SweepConfig) -> InstanceAssignment:
    if method == "radius":
        return radius_decremental_cluster(cloud, e, config.postprocess)
    if method == "graphcut":
        return graph_cut_cluster(cloud, e, config.postprocess)
    if method == "dbscan":
        return dbscan(e, config.dbscan_eps, config.dbscan_min_pts)
    if method == "agglomerative":
        return agglomerative_cluster(e, config.postprocess.agglomerative_threshold)
    raise InputError(f"unknown method {method!r}; choose from {METHODS}")


def noise_sweep(clouds, methods: Sequence[str], magnitudes: Sequence[float],
                config: Optional[SweepConfig] = None) -> List[SweepRow]:
    """Score each method on noisy perfect embeddings.

    ``clouds`` is one labeled cloud or a sequence of them; a row's scores
    are averaged over the clouds. All methods see identical noise for a
    given (kind, magnitude, rep) cell. Rows come sorted by method, kind,
    magnitude and rep.
    """
    config = config or SweepConfig()
    if isinstance(clouds, PointCloud):
        clouds = [clouds]
    for m in methods:
        if m not in METHODS:
            raise InputError(f"unknown method {m!r}; choose from {METHODS}")
    for c in clouds:
        if c.labels is None:
            raise InputError("noise_sweep needs labeled clouds")
    rows = []
    for method in sorted(methods):
        for ki, kind in enumerate(sorted(config.kinds)):
            for mi, mag in enumerate(sorted(magnitudes)):
                for rep in range(config.reps):
                    scores, ap50s = [], []
                    for ci, cloud in enumerate(clouds):
                        seq = np.random.SeedSequence([config.seed, NOISE_KINDS.index(kind), mi, rep, ci])
                        noise_seed = int(seq.generate_state(1)[0])
                        e = perfect_embeddings(cloud, config.embedding_dim)
                        e = add_noise(e, cloud, NoiseConfig(kind, float(mag), config.sigma, noise_seed))
                        res = mean_average_precision(run_method(method, cloud, e, config), cloud.labels)
                        scores.append(res.map)
                        ap50s.append(res.ap50)
                    rows.append(SweepRow(method, kind, float(mag), rep,
                                         float(np.mean(scores)), float(np.mean(ap50s))))
    return rows


SWEEP_COLUMNS = ("method", "noise_kind", "magnitude", "rep", "map", "ap50")


def write_sweep(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in rows:
            fh.write(f"{r.method},{r.noise_kind},{r.magnitude!r},{r.rep},{r.map!r},{r.ap50!r}\n")


def read_sweep(path) -> List[SweepRow]:
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SWEEP_COLUMNS:
            raise InputError(f"line 1: expected header {','.join(SWEEP_COLUMNS)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append(SweepRow(row[0], row[1], float(row[2]), int(row[3]),
                                     float(row[4]), float(row[5])))
            except (ValueError, IndexError):
                raise InputError(f"line {lineno}: malformed sweep row") from None
    return rows


def summarize_sweep(rows: Sequence[SweepRow]) -> List[dict]:
    """Mean and sample standard deviation of mAP per (method, kind, magnitude)."""
    groups: Dict[tuple, List[SweepRow]] = {}
    for r in rows:
        groups.setdefault((r.method, r.noise_kind, r.magnitude), []).append(r)
    out = []
    for (method, kind, mag), rs in sorted(groups.items()):
        maps = np.array([r.map for r in rs])
        ap50 = np.array([r.ap50 for r in rs])
        out.append({
            "method": method,
            "noise_kind": kind,
            "magnitude": mag,
            "n": len(rs),
            "map_mean": float(maps.mean()),
            "map_std": float(maps.std(ddof=1)) if len(rs) > 1 else 0.0,
            "ap50_mean": float(ap50.mean()),
            "ap50_std": float(ap50.std(ddof=1)) if len(rs) > 1 else 0.0,
        })
    return out


def write_summary(summary: Sequence[dict], path) -> None:
    cols = ("method", "noise_kind", "magnitude", "n", "map_mean", "map_std", "ap50_mean", "ap50_std")
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for s in summary:
            fh.write(",".join(repr(s[c]) if isinstance(s[c], float) else str(s[c]) for c in cols) + "\n")
