import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from sklearn.cluster import DBSCAN

from leafcontrast import (
    InputError,
    InstanceAssignment,
    PointCloud,
    PostprocessConfig,
    agglomerative_cluster,
    dbscan,
    graph_cut_cluster,
    initial_radius,
    mean_average_precision,
    perfect_embeddings,
    radius_decremental_cluster,
    plant_fixtures,
)
from leafcontrast.cluster import centroid_confidence, load_assignment, save_assignment


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


@settings(max_examples=60)
@given(seed=st.integers(0, 100_000), n=st.integers(2, 40), gamma=st.floats(-0.5, 0.95))
def test_agglomerative_matches_scipy_average_linkage(seed, n, gamma):
    e = np.random.default_rng(seed).normal(size=(n, 3))
    ours = agglomerative_cluster(e, gamma).labels
    ref = fcluster(linkage(e, method="average", metric="cosine"), t=1 - gamma, criterion="distance")
    assert same_partition(ours, ref)


def test_agglomerative_extremes(rng):
    e = rng.normal(size=(10, 4))
    assert agglomerative_cluster(e, -1.0).n_instances == 1
    assert agglomerative_cluster(e, 1.01).n_instances == 10


def test_assignment_validation():
    with pytest.raises(InputError):
        InstanceAssignment(np.array([0, 2]), np.array([1.0, 1.0]))
    with pytest.raises(InputError):
        InstanceAssignment(np.array([0, 1]), np.array([1.0]))
    a = InstanceAssignment(np.array([0, -1, 1]), np.array([0.5, 0.25]))
    assert a.n_instances == 2 and a.members(1).tolist() == [2]


def test_assignment_roundtrip(tmp_path):
    a = InstanceAssignment(np.array([1, 0, -1, 1]), np.array([0.3, 0.9]))
    path = tmp_path / "a.csv"
    save_assignment(a, path)
    assert path.read_text().splitlines()[0] == "point_index,instance_id,confidence"
    b = load_assignment(path)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.confidences, b.confidences)


def test_assignment_loader_reports_line(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("point_index,instance_id,confidence\n0,0,1.0\n1,x,1.0\n")
    with pytest.raises(InputError, match="line 3"):
        load_assignment(path)


def test_leave_one_out_confidence():
    e = np.array([[1.0, 0], [1.0, 0], [0, 1.0], [1.0, 1.0], [-1.0, 1.0]])
    conf = centroid_confidence(e, np.array([0, 0, 1, 2, 2]))
    assert conf[0] == pytest.approx(1.0)
    assert conf[1] == 0.0  # singleton
    assert conf[2] == pytest.approx(0.0)  # orthogonal pair


def test_initial_radius_by_hand():
    pos = np.array([[-2, 0, 0], [2, 0, 0], [0, -1, 0], [0, 1, 0.0]])
    r, c = initial_radius(PointCloud(pos))
    assert r == 0.5 and np.array_equal(c, [0, 0, 0])


@pytest.fixture(scope="module")
def fixtures():
    return plant_fixtures(6, points_per_leaf=80)


@pytest.mark.parametrize("fn", [radius_decremental_cluster, graph_cut_cluster])
def test_perfect_embeddings_recovered(fixtures, fn):
    for pc in fixtures:
        a = fn(pc, perfect_embeddings(pc))
        assert same_partition(a.labels, pc.labels)
        assert mean_average_precision(a, pc.labels).map == 1.0


def _rot(pc, quarter_turns):
    c, s = np.round(np.cos(quarter_turns * np.pi / 2)), np.round(np.sin(quarter_turns * np.pi / 2))
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    return pc.with_positions(pc.positions @ R.T)


@pytest.mark.parametrize("fn", [radius_decremental_cluster, graph_cut_cluster])
@pytest.mark.parametrize("turns", [1, 2, 3])
def test_quarter_turn_invariance_under_noise(fixtures, fn, turns):
    rng = np.random.default_rng(turns)
    for pc in fixtures[:3]:
        e = perfect_embeddings(pc) + rng.uniform(-0.3, 0.3, (len(pc), len(np.unique(pc.labels))))
        assert np.array_equal(fn(pc, e).labels, fn(_rot(pc, turns), e).labels)


def test_arbitrary_rotation_keeps_perfect_recovery(fixtures):
    pc = fixtures[2]
    a = 0.7
    R = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    turned = pc.with_positions(pc.positions @ R.T)
    for fn in (radius_decremental_cluster, graph_cut_cluster):
        assert same_partition(fn(turned, perfect_embeddings(pc)).labels, pc.labels)


def test_same_step_clusters_merge_sequentially():
    # two tip groups of one leaf, split by a strict agglomerative threshold
    pos = np.array([[1.0, 0, 0], [1.0, 0.01, 0], [1.0, 0.3, 0], [1.0, 0.31, 0],
                    [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0], [0, 0, 0]])
    e = np.array([[1.0, 0.1, 0], [1.0, 0.1, 0], [1.0, -0.1, 0], [1.0, -0.1, 0],
                  [0, 1.0, 0], [0, 0, 1.0], [0, 0, -1.0], [0, 1.0, 1.0]])
    cfg = PostprocessConfig(steps=2, merge_threshold=0.9, agglomerative_threshold=0.999)
    a = radius_decremental_cluster(PointCloud(pos), e, cfg)
    assert len(set(a.labels[:4].tolist())) == 1


def test_every_point_assigned(fixtures):
    pc = fixtures[0]
    e = np.random.default_rng(0).normal(size=(len(pc), 3))
    for fn in (radius_decremental_cluster, graph_cut_cluster):
        assert np.all(fn(pc, e).labels >= 0)


def test_graph_cut_falls_back_without_tips():
    pc = PointCloud(np.zeros((6, 3)))
    e = np.repeat(np.eye(2), 3, axis=0)
    a = graph_cut_cluster(pc, e)
    assert a.fallback and a.n_instances == 2


def test_pair_validation(fixtures):
    pc = fixtures[0]
    with pytest.raises(InputError):
        radius_decremental_cluster(pc, np.ones((3, 2)))
    with pytest.raises(InputError):
        graph_cut_cluster(pc, np.full((len(pc), 2), np.nan))
    with pytest.raises(InputError):
        PostprocessConfig(steps=0)


def test_dbscan_matches_sklearn(rng):
    x = np.vstack([rng.normal(0, 0.1, (30, 2)), rng.normal(3, 0.1, (30, 2)), rng.uniform(-5, 8, (5, 2))])
    a = dbscan(x, 0.4, 5)
    ref = DBSCAN(eps=0.4, min_samples=5).fit_predict(x)
    assert np.array_equal(a.labels == -1, ref == -1)
    assert same_partition(a.labels[ref >= 0], ref[ref >= 0])
    assert np.all((a.confidences >= 0.5) & (a.confidences <= 1))


def test_dbscan_validation():
    with pytest.raises(InputError):
        dbscan(np.zeros((3, 2)), 0, 2)
    with pytest.raises(InputError):
        dbscan(np.zeros((3, 2)), 0.1, 0)
    assert dbscan(np.empty((0, 2)), 0.1, 2).n_instances == 0
