"""Point-cloud data model, file I/O, subsampling and synthetic plants."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import InputError

CSV_COLUMNS = ("x", "y", "z", "r", "g", "b")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points with positions (meters), RGB colors in [0, 1] and optional
    non-negative integer instance labels.

    Arrays are copied and made read-only on construction.
    """

    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.size == 0:
            pos = pos.reshape(0, 3)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InputError(f"positions must have shape (N, 3), got {pos.shape}")
        n = pos.shape[0]
        if not np.all(np.isfinite(pos)):
            raise InputError("positions contain non-finite coordinates")
        if self.colors is None:
            col = np.full((n, 3), 0.5)
        else:
            col = np.asarray(self.colors, dtype=np.float64)
            if col.size == 0:
                col = col.reshape(0, 3)
        if col.shape != (n, 3):
            raise InputError(f"colors must have shape ({n}, 3), got {col.shape}")
        if np.any(~np.isfinite(col)) or np.any((col < 0) | (col > 1)):
            raise InputError("colors must lie within [0, 1]")
        lab = None
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (n,):
                raise InputError(f"labels must have shape ({n},), got {lab.shape}")
            if n and not np.issubdtype(lab.dtype, np.integer):
                if not np.all(np.mod(lab, 1) == 0):
                    raise InputError("labels must be integers")
            lab = lab.astype(np.int64)
            if np.any(lab < 0):
                raise InputError("labels must be non-negative")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "colors", _frozen(col))
        object.__setattr__(self, "labels", None if lab is None else _frozen(lab))

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def take(self, indices) -> "PointCloud":
        """Sub-cloud with the rows at ``indices``, in that order."""
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.positions[idx],
            self.colors[idx],
            None if self.labels is None else self.labels[idx],
        )

    def with_positions(self, positions) -> "PointCloud":
        return PointCloud(positions, self.colors, self.labels)

    def features(self) -> np.ndarray:
        """The (N, 6) position+color matrix a backbone would consume."""
        return np.hstack([self.positions, self.colors])


# ---------------------------------------------------------------- file I/O


def _detect_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
        if fmt in ("ply", "ply-ascii"):
            return "ply"
        if fmt == "csv":
            return "csv"
        raise InputError(f"unknown cloud format {fmt!r}")
    return "ply" if str(path).lower().endswith(".ply") else "csv"


def load_cloud(path, format: Optional[str] = None) -> PointCloud:
    """Read a cloud from CSV (``x,y,z,r,g,b[,label]``) or ASCII PLY."""
    fmt = _detect_format(path, format)
    text = Path(path).read_text()
    if fmt == "csv":
        return _parse_csv(text)
    return _parse_ply(text)


def _parse_csv(text: str) -> PointCloud:
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise InputError("line 1: missing header") from None
    header = [h.strip() for h in header]
    if tuple(header) == CSV_COLUMNS:
        has_label = False
    elif tuple(header) == CSV_COLUMNS + ("label",):
        has_label = True
    else:
        raise InputError(f"line 1: expected header x,y,z,r,g,b[,label], got {','.join(header)}")
    ncol = len(header)
    pos, col, lab = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != ncol:
            raise InputError(f"line {lineno}: expected {ncol} columns, got {len(row)}")
        try:
            vals = [float(v) for v in row[:6]]
        except ValueError as exc:
            raise InputError(f"line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"line {lineno}: non-finite value")
        if any(v < 0 or v > 1 for v in vals[3:]):
            raise InputError(f"line {lineno}: color outside [0, 1]")
        pos.append(vals[:3])
        col.append(vals[3:])
        if has_label:
            try:
                label = int(row[6])
            except ValueError:
                raise InputError(f"line {lineno}: label {row[6]!r} is not an integer") from None
            if label < 0:
                raise InputError(f"line {lineno}: negative label")
            lab.append(label)
    return PointCloud(
        np.array(pos, dtype=np.float64).reshape(-1, 3),
        np.array(col, dtype=np.float64).reshape(-1, 3),
        np.array(lab, dtype=np.int64) if has_label else None,
    )


def _parse_ply(text: str) -> PointCloud:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise InputError("line 1: not a PLY file")
    n = None
    props = []
    end = None
    in_vertex = False
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1:2] != ["ascii"]:
            raise InputError(f"line {lineno}: only ascii PLY is supported")
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            props.append(parts[-1])
        elif parts[0] == "end_header":
            end = lineno
            break
    if end is None or n is None:
        raise InputError("PLY header incomplete")
    for name in ("x", "y", "z"):
        if name not in props:
            raise InputError(f"PLY vertex element lacks property {name}")
    has_color = all(c in props for c in ("red", "green", "blue"))
    has_label = "label" in props
    body = lines[end:end + n]
    if len(body) < n:
        raise InputError(f"line {end + len(body) + 1}: expected {n} vertices, got {len(body)}")
    pos = np.empty((n, 3))
    col = np.full((n, 3), 0.5)
    lab = np.empty(n, dtype=np.int64)
    ix = [props.index(c) for c in ("x", "y", "z")]
    ic = [props.index(c) for c in ("red", "green", "blue")] if has_color else []
    for row, line in enumerate(body):
        lineno = end + row + 1
        parts = line.split()
        if len(parts) != len(props):
            raise InputError(f"line {lineno}: expected {len(props)} values, got {len(parts)}")
        try:
            pos[row] = [float(parts[i]) for i in ix]
            if has_color:
                col[row] = [int(parts[i]) / 255.0 for i in ic]
            if has_label:
                lab[row] = int(parts[props.index("label")])
        except ValueError as exc:
            raise InputError(f"line {lineno}: {exc}") from None
        if not np.all(np.isfinite(pos[row])):
            raise InputError(f"line {lineno}: non-finite value")
    return PointCloud(pos, np.clip(col, 0, 1), lab if has_label else None)


def save_cloud(cloud: PointCloud, path, format: Optional[str] = None) -> None:
    """Write ``cloud``. CSV output round-trips exactly through load_cloud."""
    fmt = _detect_format(path, format)
    if fmt == "csv":
        text = _format_csv(cloud)
    else:
        text = _format_ply(cloud)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _format_csv(cloud: PointCloud) -> str:
    header = list(CSV_COLUMNS) + (["label"] if cloud.has_labels else [])
    out = [",".join(header)]
    for i in range(len(cloud)):
        vals = [repr(float(v)) for v in cloud.positions[i]]
        vals += [repr(float(v)) for v in cloud.colors[i]]
        if cloud.has_labels:
            vals.append(str(int(cloud.labels[i])))
        out.append(",".join(vals))
    return "\n".join(out) + "\n"


def _format_ply(cloud: PointCloud) -> str:
    head = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
    ]
    if cloud.has_labels:
        head.append("property int label")
    head.append("end_header")
    rgb = np.rint(cloud.colors * 255).astype(int)
    out = head
    for i in range(len(cloud)):
        vals = [repr(float(v)) for v in cloud.positions[i]] + [str(c) for c in rgb[i]]
        if cloud.has_labels:
            vals.append(str(int(cloud.labels[i])))
        out.append(" ".join(vals))
    return "\n".join(out) + "\n"


# ------------------------------------------------------------- geometry


def plant_center(cloud) -> np.ndarray:
    """Arithmetic mean of the positions."""
    pos = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    if len(pos) == 0:
        raise InputError("plant_center of an empty cloud")
    return pos.mean(axis=0)


def subsample(cloud: PointCloud, n: int, seed=0) -> Tuple[PointCloud, np.ndarray]:
    """Uniformly sample ``min(n, N)`` points without replacement.

    Uses a seeded partial Fisher-Yates shuffle; the chosen indices are
    returned in ascending order so the sub-cloud keeps the original order.
    """
    if n < 1:
        raise InputError("subsample size must be >= 1")
    N = len(cloud)
    if N == 0:
        raise InputError("cannot subsample an empty cloud")
    if n >= N:
        idx = np.arange(N)
        return cloud.take(idx), idx
    rng = np.random.default_rng(seed)
    perm = np.arange(N)
    for i in range(n):
        j = int(rng.integers(i, N))
        perm[i], perm[j] = perm[j], perm[i]
    idx = np.sort(perm[:n])
    return cloud.take(idx), idx


# ------------------------------------------------------- synthetic plants


@dataclass(frozen=True)
class SynthPlantParams:
    n_leaves: int = 3
    points_per_leaf: int = 100
    stem_points: int = 0
    leaf_length: float = 0.15
    leaf_width: float = 0.06
    droop_angle: float = 0.6
    position_jitter: float = 0.001
    seed: int = 0
    petiole_radius: float = 0.01
    stem_height: float = 0.02

    def __post_init__(self):
        if int(self.n_leaves) < 1:
            raise InputError("n_leaves must be >= 1")
        if int(self.points_per_leaf) < 1:
            raise InputError("points_per_leaf must be >= 1")
        if int(self.stem_points) < 0:
            raise InputError("stem_points must be >= 0")
        if not self.leaf_length > self.leaf_width > 0:
            raise InputError("need leaf_length > leaf_width > 0")
        if self.position_jitter < 0 or self.petiole_radius < 0 or self.stem_height < 0:
            raise InputError("jitter, petiole radius and stem height must be >= 0")


def _midrib(s, length, droop, rise):
    """Arc-length parametrised midrib in the (radial, z) plane.

    The tangent elevation starts at ``rise`` and decreases linearly by
    ``droop`` over the leaf.
    """
    if abs(droop) < 1e-12:
        return s * length * math.cos(rise), s * length * math.sin(rise)
    radial = length * (np.sin(rise) - np.sin(rise - droop * s)) / droop
    height = length * (np.cos(rise - droop * s) - np.cos(rise)) / droop
    return radial, height


def synth_plant(params: SynthPlantParams = SynthPlantParams()) -> PointCloud:
    """Labeled rosette: ``n_leaves`` drooping elliptical leaves around the origin.

    Leaf ``i`` points along azimuth ``2*pi*i/n_leaves`` and starts at
    ``petiole_radius`` from the vertical stem axis, so all petioles crowd
    the center. Stem points sit on a thin vertical segment below the
    petioles and take the label of the leaf whose petiole is closest.
    """
    p = params
    rng = np.random.default_rng(p.seed)
    n_leaves = int(p.n_leaves)
    m = int(p.points_per_leaf)
    rise = p.droop_angle / 2
    pos, col, lab = [], [], []
    starts = []
    for leaf in range(n_leaves):
        az = 2 * math.pi * leaf / n_leaves
        radial_dir = np.array([math.cos(az), math.sin(az), 0.0])
        lateral_dir = np.array([-math.sin(az), math.cos(az), 0.0])
        # area-uniform samples of the (s, v) ellipse via rejection
        s_acc = np.empty(0)
        v_acc = np.empty(0)
        while s_acc.size < m:
            s = rng.random(2 * m)
            v = rng.uniform(-1, 1, 2 * m)
            keep = v ** 2 <= 1 - (2 * s - 1) ** 2
            s_acc = np.concatenate([s_acc, s[keep]])
            v_acc = np.concatenate([v_acc, v[keep]])
        s, v = s_acc[:m], v_acc[:m]
        radial, height = _midrib(s, p.leaf_length, p.droop_angle, rise)
        lateral = v * p.leaf_width / 2
        base = np.array([0.0, 0.0, p.stem_height]) + p.petiole_radius * radial_dir
        pts = (
            base
            + radial[:, None] * radial_dir
            + lateral[:, None] * lateral_dir
            + height[:, None] * np.array([0.0, 0.0, 1.0])
        )
        starts.append(base)
        pos.append(pts)
        shade = rng.uniform(-0.05, 0.05, size=(m, 1))
        leaf_col = np.array([0.15, 0.45 + 0.3 * leaf / max(n_leaves, 1), 0.1])
        col.append(np.clip(leaf_col + shade, 0, 1))
        lab.append(np.full(m, leaf))
    if p.stem_points:
        k = int(p.stem_points)
        z = rng.uniform(0, p.stem_height, k)
        ang = rng.uniform(0, 2 * math.pi, k)
        rad = p.petiole_radius * rng.random(k)
        stem = np.column_stack([rad * np.cos(ang), rad * np.sin(ang), z])
        starts_arr = np.array(starts)
        nearest = np.argmin(
            ((stem[:, None, :] - starts_arr[None, :, :]) ** 2).sum(-1), axis=1
        )
        pos.append(stem)
        col.append(np.tile([0.35, 0.3, 0.15], (k, 1)))
        lab.append(nearest)
    positions = np.concatenate(pos)
    if p.position_jitter:
        positions = positions + rng.uniform(-p.position_jitter, p.position_jitter, positions.shape)
    return PointCloud(positions, np.concatenate(col), np.concatenate(lab).astype(np.int64))


def plant_fixtures(count: int = 20, points_per_leaf: int = 150, stem_points: int = 10,
                   seed: int = 0) -> List[PointCloud]:
    """Rosettes with 3 to 8 leaves (cycling), seeded ``seed, seed+1, ...``."""
    if count < 1:
        raise InputError("count must be >= 1")
    return [synth_plant(SynthPlantParams(n_leaves=3 + i % 6, points_per_leaf=points_per_leaf,
                                         stem_points=stem_points, seed=seed + i))
            for i in range(count)]


def two_leaf_overlap(spacing: float = 0.004, gap: float = 0.03):
    """Two strip leaves where the second folds back above the first.

    Leaf 0 runs along +x at z=0. Leaf 1 leaves the stem along -x, turns
    over a half circle and runs back along +x at height ``gap`` (keep it
    above the kNN radius). Returns ``(cloud, (p1, p2, p3))`` with ``p1`` on
    leaf 0 and ``p2``, ``p3`` on leaf 1: ``p2`` sits straight above ``p1``
    and is nearer to it in space than to ``p3``.
    """
    ws = np.arange(-0.01, 0.01 + 1e-12, spacing)
    # centerlines in the (x, z) plane
    x0 = np.arange(0.0, 0.1 + 1e-12, spacing)
    leaf0_path = np.column_stack([x0, np.zeros_like(x0)])
    back = -np.arange(spacing, 0.04 + 1e-12, spacing)
    radius = gap / 2
    n_arc = max(int(round(math.pi * radius / spacing)), 2)
    t = np.linspace(0.0, math.pi, n_arc + 1)[1:-1]
    arc = np.column_stack([-0.04 - radius * np.sin(t), radius - radius * np.cos(t)])
    x_top = np.arange(-0.04, 0.1 + 1e-12, spacing)
    leaf1_path = np.vstack([
        np.column_stack([back, np.zeros_like(back)]),
        arc,
        np.column_stack([x_top, np.full_like(x_top, gap)]),
    ])

    def extrude(path):
        return np.array([[x, w, z] for x, z in path for w in ws])

    leaf0 = extrude(leaf0_path)
    leaf1 = extrude(leaf1_path)
    positions = np.vstack([leaf0, leaf1])
    labels = np.concatenate([np.zeros(len(leaf0), int), np.ones(len(leaf1), int)])

    def nearest(target):
        return int(np.argmin(np.linalg.norm(positions - target, axis=1)))

    w_mid = ws[len(ws) // 2]
    p1 = nearest([0.06, w_mid, 0.0])
    p2 = nearest([0.06, w_mid, gap])
    p3 = nearest([0.06 - 1.4 * gap, w_mid, gap])
    return PointCloud(positions, None, labels), (p1, p2, p3)
