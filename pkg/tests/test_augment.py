import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leafcontrast import (
    DistortionParams,
    InputError,
    OcclusionParams,
    PointCloud,
    ViewConfig,
    leaf_distortion,
    leaf_occlusion,
    make_views,
    plant_center,
    standard_augment,
)
from leafcontrast.augment import (
    Ellipse,
    apply_distortion,
    apply_ellipses,
    ellipse_value,
    euler_matrices,
    per_point_angles,
    sample_ellipses,
)


def _rx(a):
    return np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])


def _ry(b):
    return np.array([[math.cos(b), 0, math.sin(b)], [0, 1, 0], [-math.sin(b), 0, math.cos(b)]])


def _rz(g):
    return np.array([[math.cos(g), -math.sin(g), 0], [math.sin(g), math.cos(g), 0], [0, 0, 1]])


angles = st.tuples(*[st.floats(-math.pi, math.pi) for _ in range(3)])


@given(angles)
def test_euler_matrix_matches_product(abc):
    a, b, g = abc
    R = euler_matrices(np.array([abc]))[0]
    assert np.allclose(R, _rz(g) @ _ry(b) @ _rx(a), atol=1e-12)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1) < 1e-12


def test_ellipse_value_sign():
    e = Ellipse((1.0, 2.0), 0.5, 0.25, "x")
    v = ellipse_value(np.array([[1.0, 2.0], [1.5, 2.0], [1.0, 2.3]]), e)
    assert v[0] == -1.0 and v[1] == 0.0 and v[2] > 0


def test_occlusion_anchors_at_outermost_point(plant):
    ellipses = sample_ellipses(plant, OcclusionParams(k_ellipses=6, seed=3))
    rel = plant.positions[:, :2] - plant_center(plant)[:2]
    tips = {tuple(plant.positions[np.argmax(rel[:, ax]), :2]) for ax in (0, 1)}
    for e in ellipses:
        assert tuple(e.center) in tips
        major, minor = (e.a, e.b) if e.major_axis == "x" else (e.b, e.a)
        assert 0 < major <= 0.08 and 0 < minor <= 0.03


def test_occlusion_removes_exactly_inside_points(plant):
    params = OcclusionParams(seed=5)
    kept_cloud, kept = leaf_occlusion(plant, params)
    inside = np.zeros(len(plant), bool)
    for e in sample_ellipses(plant, params):
        inside |= ellipse_value(plant.positions[:, :2], e) <= 0
    assert np.array_equal(kept, np.flatnonzero(~inside))
    assert np.array_equal(kept_cloud.positions, plant.positions[kept])
    assert inside.any()


def test_occlusion_rejects_bad_params():
    with pytest.raises(InputError):
        OcclusionParams(k_ellipses=0)
    with pytest.raises(InputError):
        OcclusionParams(delta=(0.1, 0.0))


@given(seed=st.integers(0, 10_000), th=st.tuples(*[st.floats(0, math.pi) for _ in range(3)]))
def test_distortion_preserves_distance_to_center(plant, seed, th):
    out = leaf_distortion(plant, DistortionParams(theta_max=th, seed=seed))
    c = plant_center(plant)
    d0 = np.linalg.norm(plant.positions - c, axis=1)
    d1 = np.linalg.norm(out.positions - c, axis=1)
    assert np.allclose(d1, d0, rtol=1e-9, atol=0)


def test_distortion_angles_monotone_in_distance(plant):
    fr = np.array([0.3, 0.7, 0.9])
    ang = per_point_angles(plant, fr, (0.1, 0.1, 0.3))
    d = np.linalg.norm(plant.positions - plant_center(plant), axis=1)
    order = np.argsort(d)
    assert np.all(np.diff(ang[order], axis=0) >= 0)
    far = np.argmax(d)
    assert np.allclose(ang[far], fr * [0.1, 0.1, 0.3])


def test_distortion_zero_fractions_is_identity(plant):
    out = apply_distortion(plant, [0, 0, 0], (0.1, 0.1, 0.3))
    assert np.allclose(out.positions, plant.positions, rtol=0, atol=1e-16)


def test_distortion_params_validated():
    with pytest.raises(InputError):
        DistortionParams(theta_max=(0.1, 0.1))
    with pytest.raises(InputError):
        DistortionParams(theta_max=(0.1, 0.1, 4.0))


def _pairwise(p):
    return np.linalg.norm(p[:, None] - p[None], axis=-1)


def test_rotate_is_rigid(plant):
    out, idx = standard_augment(plant, "rotate", 1.0, seed=4)
    assert np.allclose(_pairwise(out.positions), _pairwise(plant.positions), atol=1e-12)
    assert np.allclose(plant_center(out), plant_center(plant), atol=1e-12)
    assert np.array_equal(idx, np.arange(len(plant)))


def test_translate_and_jitter_bounds(plant):
    out, _ = standard_augment(plant, "translate", 0.05, seed=1)
    shift = out.positions - plant.positions
    assert np.allclose(shift, shift[0]) and np.all(np.abs(shift[0]) <= 0.05)
    out, _ = standard_augment(plant, "jitter", 0.002, seed=1)
    assert np.all(np.abs(out.positions - plant.positions) <= 0.002)


def test_erase_removes_a_ball(plant):
    out, kept = standard_augment(plant, "erase", 0.25, seed=2)
    assert len(plant) - len(out) == round(0.25 * len(plant))
    removed = np.setdiff1d(np.arange(len(plant)), kept)
    # some anchor sees every removed point no farther than every kept one
    for a in removed:
        d = np.linalg.norm(plant.positions - plant.positions[a], axis=1)
        if d[removed].max() <= d[kept].min():
            return
    pytest.fail("removed points do not form a nearest-neighbor ball")


def test_standard_augment_rejects_unknown(plant):
    with pytest.raises(InputError):
        standard_augment(plant, "shear", 0.1)
    with pytest.raises(InputError):
        standard_augment(plant, "erase", 1.5)


def test_views_are_index_aligned(plant):
    cfg = ViewConfig(n_views=2, rotate=0.5, jitter=0.001, occlusion={}, distortion={}, n_points=100, seed=9)
    v = make_views(plant, cfg)
    assert len(v.views) == 2
    assert len(v.base) == len(v.index_map) == 100 == len(v.views[0]) == len(v.views[1])
    assert np.array_equal(v.base.positions, plant.positions[v.index_map])
    assert np.array_equal(v.views[0].labels, plant.labels[v.index_map])
    assert not np.allclose(v.views[0].positions, v.views[1].positions)
    again = make_views(plant, cfg)
    assert np.array_equal(again.views[1].positions, v.views[1].positions)


def test_recorded_draws_replay(plant):
    cfg = ViewConfig(occlusion={"k_ellipses": 2}, distortion={}, seed=4)
    v = make_views(plant, cfg)
    ell = [Ellipse(tuple(e["center"]), e["a"], e["b"], e["major_axis"]) for e in v.draws["ellipses"]]
    base, kept = apply_ellipses(plant, ell)
    assert np.array_equal(kept, v.index_map)
    rec = v.draws["views"][0]
    view = apply_distortion(base, rec["distortion_fractions"], DistortionParams().theta_max)
    assert np.array_equal(view.positions, v.views[0].positions)


def test_view_config_roundtrip_and_validation():
    cfg = ViewConfig(n_views=2, rotate=0.1, occlusion={"k_ellipses": 3})
    assert ViewConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InputError):
        ViewConfig.from_dict({"rotation": 1})
    with pytest.raises(InputError):
        ViewConfig(n_views=3)


def test_occlusion_emptying_cloud_is_input_error():
    pc = PointCloud(np.zeros((5, 3)))
    with pytest.raises(InputError):
        make_views(pc, ViewConfig(occlusion={}))
