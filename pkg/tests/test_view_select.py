import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatprep.scene_io.model import CameraIntrinsics, CameraPose, SceneModel, rotmat2qvec
from splatprep.synth import look_at, rig_centers
from splatprep.view_select import (
    CameraFeature,
    Clustering,
    candidate_range,
    compactness,
    coverage,
    extract_features,
    kmeans,
    parse_selection,
    select_k,
    select_representatives,
    select_views,
)


def model_from(centers, targets=None, names=None):
    cam = CameraIntrinsics(1, "PINHOLE", 100, 100, 100.0, 100.0, 50.0, 50.0)
    images = {}
    for i, c in enumerate(np.asarray(centers, dtype=float)):
        t = np.zeros(3) if targets is None else np.asarray(targets[i], dtype=float)
        R = look_at(c, t)
        name = names[i] if names else f"v{i:03d}.png"
        images[i + 1] = CameraPose(i + 1, name, rotmat2qvec(R), -R @ c, 1)
    return SceneModel({1: cam}, images, {})


def features_from(centers, forwards, names=None):
    centers = np.asarray(centers, float)
    forwards = np.asarray(forwards, float)
    forwards = forwards / np.linalg.norm(forwards, axis=1, keepdims=True)
    mu, sd = centers.mean(0), np.maximum(centers.std(0), 1e-12)
    names = names or [f"v{i}" for i in range(len(centers))]
    return [CameraFeature(n, c, f, (c - mu) / sd) for n, c, f in zip(names, centers, forwards)]


def three_rings():
    centers, targets = [], []
    for off in [(0, 0, 0), (50, 0, 0), (0, 50, 0)]:
        for t in np.linspace(0, 2 * np.pi, 10, endpoint=False):
            centers.append(np.array(off) + [np.cos(t), np.sin(t), 0.0])
            targets.append(off)
    return model_from(centers, targets)


def oracle_coverage(assign, centers, forwards):
    diag = np.linalg.norm(centers.max(0) - centers.min(0))
    vals = []
    for j in sorted(set(assign)):
        m = [i for i in range(len(assign)) if assign[i] == j]
        if len(m) < 2:
            vals.append(0.0)
            continue
        pairs = list(itertools.combinations(m, 2))
        spread = np.mean([np.linalg.norm(centers[a] - centers[b]) for a, b in pairs]) / diag
        ang = np.mean([np.arccos(np.clip(forwards[a] @ forwards[b], -1, 1)) for a, b in pairs]) / np.pi
        vals.append((spread + ang) / 2)
    return float(np.mean(vals))


def oracle_compactness(assign, X):
    inertia = sum(np.sum((X[[i for i in range(len(X)) if assign[i] == j]]
                          - X[[i for i in range(len(X)) if assign[i] == j]].mean(0)) ** 2)
                  for j in set(assign))
    return -inertia / np.sqrt((X ** 2).sum())


class TestFeatures:
    def test_two_cameras(self):
        f = extract_features(model_from([[0, 0, 0.0], [2, 0, 0.0]], targets=[[0, 0, 5], [2, 0, 5]]))
        np.testing.assert_allclose([x.normalized_center for x in f], [[-1, 0, 0], [1, 0, 0]])

    def test_identical_positions(self):
        f = extract_features(model_from([[1, 2, 3.0]] * 4, targets=[[0, 0, 0]] * 4))
        np.testing.assert_array_equal([x.normalized_center for x in f], np.zeros((4, 3)))

    def test_identity_rotation_forward(self):
        pose = CameraPose(1, "a", np.array([1.0, 0, 0, 0]), np.zeros(3), 1)
        model = SceneModel({1: CameraIntrinsics(1, "PINHOLE", 10, 10, 1, 1, 5, 5)}, {1: pose}, {})
        # neg-z: c2w times the canonical (0, 0, -1) view axis
        expected = pose.c2w[:3, :3] @ np.array([0, 0, -1.0])
        np.testing.assert_allclose(extract_features(model)[0].forward, expected)
        np.testing.assert_allclose(extract_features(model)[0].forward, [0, 0, -1])
        np.testing.assert_allclose(extract_features(model, "pos-z")[0].forward, [0, 0, 1])

    @given(st.integers(0, 2**32 - 1), st.integers(2, 40))
    @settings(max_examples=40, deadline=None)
    def test_zscore_moments(self, seed, n):
        rng = np.random.default_rng(seed)
        centers = rng.normal(size=(n, 3)) * rng.uniform(0.1, 100, 3) + rng.normal(size=3) * 50
        f = extract_features(model_from(centers, targets=centers + rng.normal(size=(n, 3)) + 1))
        Z = np.array([x.normalized_center for x in f])
        np.testing.assert_allclose(Z.mean(0), 0, atol=1e-9)
        np.testing.assert_allclose(Z.std(0), 1, atol=1e-9)
        for x in f:
            assert abs(np.linalg.norm(x.forward) - 1) < 1e-9


class TestKmeans:
    def test_k_equals_n(self):
        X = np.random.default_rng(0).normal(size=(7, 3))
        cl = kmeans(X, 7, seed=1)
        assert cl.inertia == 0 and sorted(cl.assignment) == list(range(7))

    def test_k_one(self):
        X = np.random.default_rng(1).normal(size=(12, 3))
        cl = kmeans(X, 1)
        np.testing.assert_allclose(cl.centroids[0], X.mean(0))
        assert cl.inertia == pytest.approx(X.var(0).sum() * len(X))

    def test_two_blobs_match_brute_force(self):
        rng = np.random.default_rng(2)
        X = np.vstack([rng.normal(size=(6, 3)), rng.normal(size=(6, 3)) + [100, 0, 0]])
        cl = kmeans(X, 2, seed=3)

        def inertia(mask):
            return sum(((X[m] - X[m].mean(0)) ** 2).sum() for m in (mask, ~mask))

        # point 0 fixed on the "True" side; enumerate the other 11 memberships
        masks = [np.array([True] + [bool((b >> i) & 1) for i in range(11)]) for b in range(2**11 - 1)]
        best = min(masks, key=inertia)
        np.testing.assert_array_equal(cl.assignment == cl.assignment[0], best)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((3, 3)), 4)

    def test_duplicate_points_stay_non_empty(self):
        X = np.zeros((6, 3))
        X[:2] = 1
        cl = kmeans(X, 4, seed=0)
        assert len(set(cl.assignment.tolist())) == 4

    @given(st.integers(0, 2**32 - 1), st.integers(2, 60), st.integers(1, 10))
    @settings(max_examples=60, deadline=None)
    def test_invariants(self, seed, n, k):
        k = min(k, n)
        X = np.random.default_rng(seed).normal(size=(n, 3))
        cl = kmeans(X, k, seed=seed)
        assert np.all(np.bincount(cl.assignment, minlength=k) > 0)
        assert cl.inertia >= 0
        h = np.array(cl.history)
        assert np.all(np.diff(h) <= 1e-9 * max(h[0], 1))
        d = ((X[:, None] - cl.centroids[None]) ** 2).sum(2)
        own = d[np.arange(n), cl.assignment]
        assert np.all(own <= d.min(1) + 1e-9)


class TestScores:
    def test_coverage_singletons(self):
        feats = features_from(np.eye(3), np.eye(3))
        assert coverage(Clustering(3, np.arange(3), np.eye(3), 0.0), feats) == 0

    def test_coverage_saturates(self):
        feats = features_from([[0, 0, 0], [1, 1, 1]], [[1, 0, 0], [-1, 0, 0]])
        assert coverage(Clustering(1, np.zeros(2, int), np.zeros((1, 3)), 0.0), feats) == pytest.approx(1.0)

    def test_coverage_three_cameras(self):
        rng = np.random.default_rng(4)
        centers, forwards = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        feats = features_from(centers, forwards)
        assign = np.array([0, 0, 0, 1, 2])
        fw = np.array([f.forward for f in feats])
        got = coverage(Clustering(3, assign, np.zeros((3, 3)), 0.0), feats)
        assert got == pytest.approx(oracle_coverage(assign, centers, fw), abs=1e-12)

    def test_compactness_values(self):
        feats = features_from([[-1, 0, 0], [1, 0, 0]], [[1, 0, 0]] * 2)
        cl = kmeans(np.array([f.normalized_center for f in feats]), 1)
        assert compactness(cl, feats) == pytest.approx(-np.sqrt(2))
        cl2 = kmeans(np.array([f.normalized_center for f in feats]), 2)
        assert compactness(cl2, feats) == 0

    def test_compactness_duplicated_cameras(self):
        rng = np.random.default_rng(5)
        centers = rng.normal(size=(12, 3))
        feats = features_from(centers, rng.normal(size=(12, 3)))
        feats2 = features_from(np.vstack([centers, centers]), np.ones((24, 3)))
        X, X2 = (np.array([f.normalized_center for f in fs]) for fs in (feats, feats2))
        vals, vals2 = [], []
        for k in range(1, 6):
            a = kmeans(X, k, seed=0).assignment
            vals.append(oracle_compactness(a, X))
            vals2.append(oracle_compactness(np.r_[a, a], X2))
            assert vals[-1] <= 0 and vals2[-1] <= 0
        assert np.argsort(vals).tolist() == np.argsort(vals2).tolist()
        np.testing.assert_allclose(np.array(vals2), np.sqrt(2) * np.array(vals))


class TestSelectK:
    @pytest.mark.parametrize("n, expected", [(49, range(3, 16)), (8, range(3, 5)), (6, range(3, 4)),
                                             (200, range(3, 16)), (5, range(3, 3))])
    def test_candidate_range(self, n, expected):
        assert candidate_range(n) == expected

    def test_candidate_range_kmin_2(self):
        assert list(candidate_range(8, 2)) == [2, 3, 4]

    def test_three_rings(self):
        feats = extract_features(three_rings())
        result = select_k(feats)
        X = np.array([f.normalized_center for f in feats])
        centers = np.array([f.center for f in feats])
        fw = np.array([f.forward for f in feats])
        # independent re-scoring of every candidate clustering
        oracle = {k: 0.5 * oracle_coverage(cl.assignment, centers, fw) + 0.5 * oracle_compactness(cl.assignment, X)
                  for k, cl in result.clusterings.items()}
        for k in oracle:
            assert result.score_per_k[k] == pytest.approx(oracle[k], abs=1e-12)
        assert max(oracle, key=lambda k: (oracle[k], -k)) == 3 == result.chosen_k

    def test_empty_range_fallback(self):
        feats = extract_features(model_from(rig_centers("ring", 5, 3.0)))
        result = select_k(feats)
        assert result.score_per_k == {} and result.chosen_k == 2

    def test_ties_go_to_smaller_k(self):
        feats = extract_features(model_from(rig_centers("ring", 12, 3.0)))
        result = select_k(feats, alpha=0.0, beta=0.0)
        assert result.chosen_k == 3

    def test_threads_do_not_change_result(self):
        feats = extract_features(three_rings())
        a, b = select_k(feats, seed=4), select_k(feats, seed=4, threads=4)
        assert a.score_per_k == b.score_per_k and a.chosen_k == b.chosen_k

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=10, deadline=None)
    def test_translation_and_axis_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        centers = rig_centers("sphere", 20, 3.0) + rng.normal(size=(20, 3)) * 0.1
        base = select_k(extract_features(model_from(centers)), seed=seed)
        P = np.eye(3)[rng.permutation(3)] * rng.choice([-1, 1], size=3)
        shift = rng.normal(size=3) * 10
        moved = select_k(extract_features(model_from(centers @ P.T + shift, targets=[shift] * 20)), seed=seed)
        assert moved.score_per_k.keys() == base.score_per_k.keys()
        for k in base.score_per_k:
            assert moved.score_per_k[k] == pytest.approx(base.score_per_k[k], abs=1e-9)


class TestRepresentatives:
    def test_singleton(self):
        feats = features_from([[0, 0, 0], [5, 5, 5]], [[1, 0, 0], [0, 1, 0]])
        cl = Clustering(2, np.array([0, 1]), np.array([f.normalized_center for f in feats]), 0.0)
        assert select_representatives(cl, feats) == ["v0", "v1"]

    def test_centroid_camera_wins(self):
        centers = [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0]]
        feats = features_from(centers, [[0, 0, 1]] * 4, names=["d", "c", "b", "a"])
        X = np.array([f.normalized_center for f in feats])
        cl = Clustering(1, np.zeros(4, int), X.mean(0, keepdims=True), 0.0)
        # mean is (0, 0.25, 0); camera "d" at the origin is closest
        assert select_representatives(cl, feats) == ["d"]

    def test_tie_breaks_by_name(self):
        feats = features_from([[1, 0, 0], [-1, 0, 0]], [[0, 0, 1]] * 2, names=["zeta", "alpha"])
        X = np.array([f.normalized_center for f in feats])
        cl = Clustering(1, np.zeros(2, int), X.mean(0, keepdims=True), 0.0)
        assert select_representatives(cl, feats) == ["alpha"]

    def test_four_camera_brute_force(self):
        rng = np.random.default_rng(7)
        centers, forwards = rng.normal(size=(4, 3)) * 2, rng.normal(size=(4, 3))
        feats = features_from(centers, forwards)
        X = np.array([f.normalized_center for f in feats])
        cl = Clustering(1, np.zeros(4, int), X.mean(0, keepdims=True), 0.0)
        fw = np.array([f.forward for f in feats])
        centroid = centers.mean(0)
        sep = [np.mean([np.arccos(np.clip(fw[i] @ fw[j], -1, 1)) for j in range(4) if j != i]) for i in range(4)]
        scaled = [(s - min(sep)) / (max(sep) - min(sep)) for s in sep]
        scores = [(1 / (1 + np.linalg.norm(centers[i] - centroid)) + scaled[i]) / 2 for i in range(4)]
        assert select_representatives(cl, feats) == [f"v{int(np.argmax(scores))}"]

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_membership_and_determinism(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(6, 40))
        feats = extract_features(model_from(rng.normal(size=(n, 3)) * 5))
        a = select_views(feats, seed=seed)
        b = select_views(feats, seed=seed)
        assert a.format() == b.format()
        assert len(a.representatives) == a.chosen_k == len(set(a.representatives))
        by_name = {f.view_name: i for i, f in enumerate(feats)}
        for j, name in enumerate(a.representatives):
            assert a.clustering.assignment[by_name[name]] == j

    def test_report_round_trip(self):
        res = select_views(extract_features(three_rings()))
        back = parse_selection(res.format())
        assert back.chosen_k == res.chosen_k and back.representatives == res.representatives
        assert back.score_per_k == res.score_per_k
