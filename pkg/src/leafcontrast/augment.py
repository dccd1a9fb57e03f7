"""Correspondence-preserving augmentations of a single plant cloud.

Leaf occlusion cuts 2D ellipses out of the xy-projection, leaf distortion
rotates every point by Euler angles that grow with its distance to the
plant center, and the standard rigid/noise/erase augmentations round it
out. ``make_views`` composes them into one or two index-aligned views.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cloud import PointCloud, plant_center, subsample
from .errors import InputError


def _rng(seed, *stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *stream]))


# ------------------------------------------------------------ occlusion


@dataclass(frozen=True)
class OcclusionParams:
    """``k_ellipses`` cut-outs with semi-axes drawn from ``U(0, delta)``.

    ``delta[0]`` bounds the major semi-axis and ``delta[1]`` the minor one.
    """

    k_ellipses: int = 2
    delta: Tuple[float, float] = (0.08, 0.03)
    seed: int = 0

    def __post_init__(self):
        if int(self.k_ellipses) < 1:
            raise InputError("k_ellipses must be >= 1")
        if len(self.delta) != 2 or min(self.delta) <= 0:
            raise InputError("delta must hold two positive lengths")


@dataclass(frozen=True)
class Ellipse:
    center: Tuple[float, float]
    a: float  # semi-axis along x
    b: float  # semi-axis along y
    major_axis: str


def ellipse_value(xy: np.ndarray, ellipse: Ellipse) -> np.ndarray:
    """Implicit ellipse function; points with value <= 0 are inside."""
    xy = np.atleast_2d(xy)
    cx, cy = ellipse.center
    return (xy[:, 0] - cx) ** 2 / ellipse.a ** 2 + (xy[:, 1] - cy) ** 2 / ellipse.b ** 2 - 1.0


def sample_ellipses(cloud: PointCloud, params: OcclusionParams) -> List[Ellipse]:
    """Draw the ellipses ``leaf_occlusion`` would cut from ``cloud``."""
    rng = _rng(params.seed, 1)
    center = plant_center(cloud)
    rel = cloud.positions[:, :2] - center[:2]
    out = []
    for _ in range(int(params.k_ellipses)):
        axis = 0 if rng.random() < 0.5 else 1
        # (0, delta] keeps the semi-axes strictly positive
        major = params.delta[0] * (1.0 - rng.random())
        minor = params.delta[1] * (1.0 - rng.random())
        tip = int(np.argmax(rel[:, axis]))
        mu = tuple(float(v) for v in cloud.positions[tip, :2])
        if axis == 0:
            out.append(Ellipse(mu, major, minor, "x"))
        else:
            out.append(Ellipse(mu, minor, major, "y"))
    return out


def apply_ellipses(cloud: PointCloud, ellipses: Sequence[Ellipse]) -> Tuple[PointCloud, np.ndarray]:
    """Remove every point whose xy-projection lies in any ellipse."""
    inside = np.zeros(len(cloud), dtype=bool)
    for e in ellipses:
        inside |= ellipse_value(cloud.positions[:, :2], e) <= 0
    kept = np.flatnonzero(~inside)
    return cloud.take(kept), kept


def leaf_occlusion(cloud: PointCloud, params: OcclusionParams) -> Tuple[PointCloud, np.ndarray]:
    """Cut ``params.k_ellipses`` leaf-sized ellipses anchored at the plant's
    outermost points. Returns the surviving cloud and its original indices.
    """
    if len(cloud) == 0:
        raise InputError("leaf_occlusion needs a non-empty cloud")
    return apply_ellipses(cloud, sample_ellipses(cloud, params))


# ----------------------------------------------------------- distortion


@dataclass(frozen=True)
class DistortionParams:
    theta_max: Tuple[float, float, float] = (0.1, 0.1, 0.3)
    seed: int = 0
    about_center: bool = True

    def __post_init__(self):
        if len(self.theta_max) != 3:
            raise InputError("theta_max must hold three angles")
        if any(not 0 <= t <= math.pi for t in self.theta_max):
            raise InputError("theta_max angles must lie in [0, pi]")


def euler_matrices(angles: np.ndarray) -> np.ndarray:
    """Stack of ``Rz(gamma) @ Ry(beta) @ Rx(alpha)`` for rows (alpha, beta, gamma)."""
    angles = np.atleast_2d(angles)
    ca, cb, cg = np.cos(angles).T
    sa, sb, sg = np.sin(angles).T
    R = np.empty((len(angles), 3, 3))
    R[:, 0, 0] = cg * cb
    R[:, 0, 1] = cg * sb * sa - sg * ca
    R[:, 0, 2] = cg * sb * ca + sg * sa
    R[:, 1, 0] = sg * cb
    R[:, 1, 1] = sg * sb * sa + cg * ca
    R[:, 1, 2] = sg * sb * ca - cg * sa
    R[:, 2, 0] = -sb
    R[:, 2, 1] = cb * sa
    R[:, 2, 2] = cb * ca
    return R


def per_point_angles(cloud: PointCloud, fractions, theta_max) -> np.ndarray:
    """Euler angles scaled by each point's normalized distance to the center."""
    d = np.linalg.norm(cloud.positions - plant_center(cloud), axis=1)
    dmax = d.max()
    scale = d / dmax if dmax > 0 else np.zeros_like(d)
    return scale[:, None] * (np.asarray(fractions, float) * np.asarray(theta_max, float))


def apply_distortion(cloud: PointCloud, fractions, theta_max, about_center: bool = True) -> PointCloud:
    """Rotate each point by its distance-scaled Euler angles."""
    if len(cloud) == 0:
        raise InputError("leaf_distortion needs a non-empty cloud")
    R = euler_matrices(per_point_angles(cloud, fractions, theta_max))
    pivot = plant_center(cloud) if about_center else np.zeros(3)
    rel = cloud.positions - pivot
    return cloud.with_positions(np.einsum("nij,nj->ni", R, rel) + pivot)


def sample_distortion(params: DistortionParams) -> np.ndarray:
    return _rng(params.seed, 2).random(3)


def leaf_distortion(cloud: PointCloud, params: DistortionParams) -> PointCloud:
    """Wind-like distortion: outer points swing further than inner ones."""
    return apply_distortion(cloud, sample_distortion(params), params.theta_max, params.about_center)


# ------------------------------------------------------------- standard

_KINDS = ("rotate", "translate", "jitter", "erase")


def _random_rotation(rng, max_angle):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, max_angle)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def standard_augment(cloud: PointCloud, kind: str, magnitude: float, seed=0) -> Tuple[PointCloud, np.ndarray]:
    """``rotate`` (max angle, radians), ``translate`` (max offset per axis),
    ``jitter`` (max per-coordinate noise) or ``erase`` (fraction of points
    removed as one spherical neighborhood around a random point).
    """
    if magnitude < 0:
        raise InputError("magnitude must be >= 0")
    n = len(cloud)
    identity = np.arange(n)
    if kind not in _KINDS:
        raise InputError(f"unknown augmentation {kind!r}")
    rng = _rng(seed, 3, _KINDS.index(kind))
    if kind == "rotate":
        if n == 0:
            return cloud, identity
        c = plant_center(cloud)
        R = _random_rotation(rng, magnitude)
        return cloud.with_positions((cloud.positions - c) @ R.T + c), identity
    if kind == "translate":
        t = rng.uniform(-magnitude, magnitude, 3)
        return cloud.with_positions(cloud.positions + t), identity
    if kind == "jitter":
        if magnitude == 0:
            return cloud, identity
        noise = rng.uniform(-magnitude, magnitude, cloud.positions.shape)
        return cloud.with_positions(cloud.positions + noise), identity
    # erase
    if magnitude > 1:
        raise InputError("erase fraction must lie in [0, 1]")
    n_remove = int(round(magnitude * n))
    if n_remove == 0:
        return cloud, identity
    anchor = cloud.positions[int(rng.integers(n))]
    order = np.argsort(np.linalg.norm(cloud.positions - anchor, axis=1), kind="stable")
    kept = np.sort(order[n_remove:])
    return cloud.take(kept), kept


# ---------------------------------------------------------------- views


@dataclass
class ViewConfig:
    """Which augmentations build the views.

    Removal augmentations (``occlusion``, ``erase``) and ``n_points``
    subsampling act once on the shared base; ``distortion``, ``rotate``,
    ``translate`` and ``jitter`` act per view.
    """

    n_views: int = 1
    rotate: float = 0.0
    translate: float = 0.0
    jitter: float = 0.0
    erase: float = 0.0
    occlusion: Optional[dict] = None
    distortion: Optional[dict] = None
    n_points: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_views not in (1, 2):
            raise InputError("n_views must be 1 or 2")
        for name in ("rotate", "translate", "jitter", "erase"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        if self.n_points is not None and self.n_points < 1:
            raise InputError("n_points must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ViewConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown view config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Views:
    views: List[PointCloud]
    base: PointCloud
    index_map: np.ndarray
    draws: dict = field(default_factory=dict)


def make_views(cloud: PointCloud, config: ViewConfig) -> Views:
    """Build ``config.n_views`` index-aligned views of ``cloud``.

    Point ``i`` of every view corresponds to ``base`` point ``i`` and to
    original point ``index_map[i]``.
    """
    draws = {}
    base, idx = cloud, np.arange(len(cloud))
    if config.occlusion is not None:
        occ = OcclusionParams(**{"seed": config.seed, **config.occlusion})
        ellipses = sample_ellipses(base, occ)
        draws["ellipses"] = [asdict(e) for e in ellipses]
        base, kept = apply_ellipses(base, ellipses)
        idx = idx[kept]
    if config.erase > 0:
        base, kept = standard_augment(base, "erase", config.erase, seed=config.seed)
        idx = idx[kept]
    if len(base) == 0:
        raise InputError("removal augmentations emptied the cloud")
    if config.n_points is not None:
        base, kept = subsample(base, config.n_points, seed=config.seed)
        idx = idx[kept]
    views = []
    draws["views"] = []
    for v in range(config.n_views):
        view = base
        vseed = int(np.random.SeedSequence([config.seed, 100 + v]).generate_state(1)[0])
        rec = {"seed": vseed}
        if config.distortion is not None:
            dist = DistortionParams(**{**config.distortion, "seed": vseed})
            fractions = sample_distortion(dist)
            rec["distortion_fractions"] = fractions.tolist()
            view = apply_distortion(view, fractions, dist.theta_max, dist.about_center)
        for kind in ("rotate", "translate", "jitter"):
            mag = getattr(config, kind)
            if mag > 0:
                view, _ = standard_augment(view, kind, mag, seed=vseed)
        views.append(view)
        draws["views"].append(rec)
    return Views(views, base, idx, draws)
