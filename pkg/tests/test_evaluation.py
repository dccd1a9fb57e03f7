import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leafcontrast import (
    InputError,
    InstanceAssignment,
    NoiseConfig,
    PointCloud,
    SweepConfig,
    add_noise,
    average_precision,
    instance_iou,
    mean_average_precision,
    noise_sweep,
    perfect_embeddings,
    plant_fixtures,
)
from leafcontrast.evaluation import IOU_THRESHOLDS, noise_envelope, read_sweep, summarize_sweep, write_sweep
from oracles import brute_force_ap


def test_thresholds():
    assert len(IOU_THRESHOLDS) == 10
    assert IOU_THRESHOLDS[0] == 0.5 and IOU_THRESHOLDS[-1] == pytest.approx(0.95)


def test_instance_iou():
    assert instance_iou([0, 1, 2], [1, 2, 3]) == 0.5
    assert instance_iou([0], [1]) == 0.0
    with pytest.raises(InputError):
        instance_iou([], [])


def test_ap_hand_example():
    gt = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    pred = InstanceAssignment(np.array([1, 1, 1, 1, 2, 2, 2, 0]), np.array([0.5, 0.4, 0.9]))
    # rank 1: p2 = {4,5,6} vs gt1, IoU 0.75
    # rank 2: p0 = {7}, gt1 already taken -> FP
    # rank 3: p1 = {0..3} vs gt0, IoU 1
    # at 0.5 the PR points are (0.5, 1), (0.5, 1/2), (1, 2/3)
    assert average_precision(pred, gt, 0.5) == pytest.approx(0.5 + 0.5 * 2 / 3)
    # at 0.8 rank 1 misses too, leaving one hit at (0.5, 1/3)
    assert average_precision(pred, gt, 0.8) == pytest.approx(0.5 / 3)


def test_ap_edge_cases():
    gt = np.array([0, 0, 1])
    empty = InstanceAssignment(np.array([-1, -1, -1]), np.empty(0))
    assert average_precision(empty, gt) == 0.0
    none_gt = np.array([-1, -1, -1])
    assert average_precision(empty, none_gt) == 1.0
    one = InstanceAssignment(np.array([0, 0, 0]), np.array([1.0]))
    assert average_precision(one, none_gt) == 0.0
    with pytest.raises(InputError):
        average_precision(one, np.array([0, 1]))


def _random_instance(rng):
    n = int(rng.integers(1, 13))
    k_pred, k_gt = int(rng.integers(0, 5)), int(rng.integers(0, 5))
    pred = rng.integers(-1, k_pred, n) if k_pred else np.full(n, -1)
    gt = rng.integers(-1, k_gt, n) if k_gt else np.full(n, -1)
    # relabel to contiguous ids
    _, pred_ids = np.unique(np.where(pred >= 0, pred, 99), return_inverse=True)
    pred = np.where(pred >= 0, pred_ids, -1)
    k = pred.max() + 1 if pred.max() >= 0 else 0
    # coarse confidences make ties common
    conf = rng.integers(0, 3, k) / 2
    return InstanceAssignment(pred, conf), gt


@pytest.mark.parametrize("seed", range(150))
def test_ap_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    pred, gt = _random_instance(rng)
    t = float(rng.choice(IOU_THRESHOLDS))
    assert average_precision(pred, gt, t) == float(brute_force_ap(pred.labels, pred.confidences, gt, t))


def test_map_aggregates(rng):
    gt = np.repeat(np.arange(3), 10)
    pred = InstanceAssignment(gt.copy(), np.ones(3))
    res = mean_average_precision(pred, gt)
    assert res.map == 1.0 and res.ap50 == 1.0
    assert res.tp.tolist() == [3] * 10 and res.fp.sum() == 0 and res.fn.sum() == 0


def test_perfect_embeddings(plant):
    e = perfect_embeddings(plant)
    k = len(np.unique(plant.labels))
    assert e.shape == (len(plant), k)
    assert np.array_equal(np.argmax(e, axis=1), plant.labels)
    wide = perfect_embeddings(plant, d=k + 3)
    assert wide.shape[1] == k + 3 and np.all(wide[:, k:] == 0)
    with pytest.raises(InputError):
        perfect_embeddings(plant, d=k - 1)


@given(m=st.floats(0, 2), seed=st.integers(0, 1000))
def test_noise_bounds(plant, m, seed):
    e = perfect_embeddings(plant)
    u = add_noise(e, plant, NoiseConfig("uniform", m, seed=seed))
    assert np.all(np.abs(u - e) <= m)
    g = add_noise(e, plant, NoiseConfig("gaussian_center", m, seed=seed))
    env = noise_envelope(plant, m)
    assert np.all(np.abs(g - e) <= env[:, None] + 1e-15)


def test_gaussian_envelope_decays_outwards(plant):
    env = noise_envelope(plant, 1.0, sigma=0.05)
    d = np.linalg.norm(plant.positions[:, :2] - plant.positions[:, :2].mean(0), axis=1)
    o = np.argsort(d)
    assert np.all(np.diff(env[o]) <= 1e-15)
    assert env.max() <= 1.0


def test_noise_config_validation():
    with pytest.raises(InputError):
        NoiseConfig("pink", 0.1)
    with pytest.raises(InputError):
        NoiseConfig("uniform", -0.1)


@pytest.fixture(scope="module")
def small_sweep():
    clouds = plant_fixtures(2, points_per_leaf=40)
    cfg = SweepConfig(kinds=("uniform", "gaussian_center"), reps=2, seed=5)
    return clouds, cfg, noise_sweep(clouds, ["radius", "agglomerative"], [0.0, 0.3], cfg)


def test_sweep_shape_and_determinism(small_sweep):
    clouds, cfg, rows = small_sweep
    assert len(rows) == 2 * 2 * 2 * 2
    assert all(0 <= r.map <= 1 for r in rows)
    assert all(r.map == 1.0 for r in rows if r.magnitude == 0 and r.method == "radius")
    again = noise_sweep(clouds, ["radius", "agglomerative"], [0.0, 0.3], cfg)
    assert again == rows


def test_sweep_noise_identical_across_methods(small_sweep):
    clouds, cfg, rows = small_sweep
    solo = noise_sweep(clouds, ["radius"], [0.0, 0.3], cfg)
    assert solo == [r for r in rows if r.method == "radius"]


def test_sweep_csv_roundtrip(tmp_path, small_sweep):
    rows = small_sweep[2]
    path = tmp_path / "s.csv"
    write_sweep(rows, path)
    assert read_sweep(path) == rows
    path.write_text("method,noise_kind\n")
    with pytest.raises(InputError, match="line 1"):
        read_sweep(path)


def test_summary_statistics(small_sweep):
    rows = small_sweep[2]
    summary = summarize_sweep(rows)
    assert len(summary) == 8
    for s in summary:
        vals = [r.map for r in rows if (r.method, r.noise_kind, r.magnitude) == (s["method"], s["noise_kind"], s["magnitude"])]
        assert s["map_mean"] == pytest.approx(np.mean(vals))
        assert s["map_std"] == pytest.approx(np.std(vals, ddof=1))


def test_sweep_validation(plant):
    with pytest.raises(InputError):
        noise_sweep(plant, ["kmeans"], [0.1])
    with pytest.raises(InputError):
        SweepConfig(kinds=("pink",))
    with pytest.raises(InputError):
        noise_sweep(PointCloud(plant.positions), ["radius"], [0.1])
