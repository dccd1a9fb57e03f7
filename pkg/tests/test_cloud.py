import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leafcontrast import InputError, PointCloud, SynthPlantParams, load_cloud, plant_center, plant_fixtures, save_cloud, subsample, synth_plant
from leafcontrast.cloud import two_leaf_overlap


def test_pointcloud_defaults_and_readonly():
    pc = PointCloud(np.zeros((4, 3)))
    assert len(pc) == 4
    assert np.all(pc.colors == 0.5)
    assert not pc.has_labels
    with pytest.raises(ValueError):
        pc.positions[0, 0] = 1.0


@pytest.mark.parametrize("kwargs, msg", [
    (dict(positions=np.zeros((3, 2))), "shape"),
    (dict(positions=np.array([[0, 0, np.nan]])), "non-finite"),
    (dict(positions=np.zeros((2, 3)), colors=np.full((2, 3), 2.0)), r"\[0, 1\]"),
    (dict(positions=np.zeros((2, 3)), labels=np.array([0, -2])), "non-negative"),
    (dict(positions=np.zeros((2, 3)), labels=np.array([0.5, 1.0])), "integers"),
])
def test_pointcloud_validation(kwargs, msg):
    with pytest.raises(InputError, match=msg):
        PointCloud(**kwargs)


def test_take_keeps_rows_aligned(plant):
    idx = np.array([5, 0, 17])
    sub = plant.take(idx)
    assert np.array_equal(sub.positions, plant.positions[idx])
    assert np.array_equal(sub.labels, plant.labels[idx])


@pytest.mark.parametrize("suffix", [".csv", ".ply"])
def test_save_load_roundtrip(tmp_path, plant, suffix):
    path = tmp_path / f"p{suffix}"
    save_cloud(plant, path)
    back = load_cloud(path)
    assert np.array_equal(back.positions, plant.positions)
    assert np.array_equal(back.labels, plant.labels)
    # PLY stores 8-bit colors
    tol = 0 if suffix == ".csv" else 0.5 / 255 + 1e-12
    assert np.max(np.abs(back.colors - plant.colors)) <= tol


def test_csv_without_labels(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("x,y,z,r,g,b\n0,0,0,0,0,0\n1,2,3,1,1,1\n")
    pc = load_cloud(path)
    assert pc.labels is None
    assert pc.positions[1].tolist() == [1, 2, 3]


@pytest.mark.parametrize("body, line", [
    ("x,y,z,r,g,b\n0,0,0,0,0,0\n0,0,zz,0,0,0\n", 3),
    ("x,y,z,r,g,b\n0,0,0,0,0\n", 2),
    ("x,y,z,r,g,b,label\n0,0,0,0,0,0,1\n0,0,0,0,0,0,1.5\n", 3),
    ("x,y,z,r,g,b\n0,0,0,0,0,7\n", 2),
    ("a,b,c\n", 1),
])
def test_malformed_csv_reports_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(InputError, match=f"line {line}"):
        load_cloud(path)


def test_ply_uchar_colors(tmp_path):
    path = tmp_path / "c.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
        "property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n0 0 0 255 0 51\n1 1 1 0 255 0\n"
    )
    pc = load_cloud(path)
    assert np.allclose(pc.colors[0], [1.0, 0.0, 0.2])


def test_binary_ply_rejected(tmp_path):
    path = tmp_path / "c.ply"
    path.write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
    with pytest.raises(InputError, match="ascii"):
        load_cloud(path)


def test_plant_center_is_mean():
    pos = np.array([[0, 0, 0], [2, 4, 6.0]])
    assert plant_center(pos).tolist() == [1, 2, 3]
    with pytest.raises(InputError):
        plant_center(np.empty((0, 3)))


@given(n_points=st.integers(1, 60), n=st.integers(1, 80), seed=st.integers(0, 2**32 - 1))
def test_subsample_properties(n_points, n, seed):
    pc = PointCloud(np.arange(n_points * 3, dtype=float).reshape(-1, 3))
    sub, idx = subsample(pc, n, seed)
    assert len(idx) == min(n, n_points)
    assert np.all(np.diff(idx) > 0)
    assert np.array_equal(sub.positions, pc.positions[idx])
    assert np.array_equal(subsample(pc, n, seed)[1], idx)


def test_subsample_is_roughly_uniform():
    pc = PointCloud(np.zeros((10, 3)))
    counts = np.zeros(10)
    for seed in range(2000):
        counts[subsample(pc, 3, seed)[1]] += 1
    # each index expected 600 times; 5 sigma band
    assert np.all(np.abs(counts - 600) < 5 * np.sqrt(600 * 0.7))


def test_synth_plant_structure():
    p = SynthPlantParams(n_leaves=5, points_per_leaf=40, stem_points=7, seed=2)
    pc = synth_plant(p)
    assert len(pc) == 5 * 40 + 7
    assert set(np.unique(pc.labels)) == set(range(5))
    assert np.array_equal(synth_plant(p).positions, pc.positions)
    # leaves radiate out: per-leaf mean azimuths are distinct
    c = plant_center(pc)
    az = [np.arctan2(*(pc.positions[pc.labels == i, :2].mean(0) - c[:2])[::-1]) for i in range(5)]
    assert len(np.unique(np.round(az, 2))) == 5


def test_synth_plant_params_validated():
    with pytest.raises(InputError):
        SynthPlantParams(n_leaves=0)
    with pytest.raises(InputError):
        SynthPlantParams(leaf_length=0.05, leaf_width=0.06)


def test_plant_fixtures_leaf_counts():
    clouds = plant_fixtures(7, points_per_leaf=10)
    assert [len(np.unique(c.labels)) for c in clouds] == [3, 4, 5, 6, 7, 8, 3]


def test_two_leaf_fixture_geometry():
    pc, (p1, p2, p3) = two_leaf_overlap()
    pos = pc.positions
    assert pc.labels[p1] == 0 and pc.labels[p2] == 1 and pc.labels[p3] == 1
    d = lambda a, b: np.linalg.norm(pos[a] - pos[b])
    assert d(p1, p2) < d(p2, p3)
