import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatprep.fusion import project_points
from splatprep.hull import filter_model
from splatprep.scene_io import load_mask, read_model
from splatprep.synth import SynthConfig, make_scene, write_dataset


def inlier_arrays(gt):
    ids = sorted(gt.true_segment_of_point)
    pos = np.array([gt.scene.points[i].xyz for i in ids])
    seg = np.array([gt.true_segment_of_point[i] for i in ids])
    return pos, seg


def test_no_outliers_when_fraction_zero():
    gt = make_scene(SynthConfig(outlier_fraction=0.0))
    assert gt.true_outlier_ids == frozenset()
    assert len(gt.scene.points) == 1000


def test_ring_centers_equidistant():
    gt = make_scene(SynthConfig(n_cameras=8))
    dists = [np.linalg.norm(p.center) for p in gt.scene.images.values()]
    assert len(dists) == 8
    assert max(dists) - min(dists) <= 1e-9


@pytest.mark.parametrize("rig", ["ring", "sphere", "two-rings"])
def test_cameras_look_at_origin(rig):
    gt = make_scene(SynthConfig(camera_rig=rig, n_cameras=9))
    for pose in gt.scene.images.values():
        # the optical axis (third row of R) points from the center toward the origin
        axis = pose.R[2]
        assert axis @ (-pose.center / np.linalg.norm(pose.center)) == pytest.approx(1.0, abs=1e-12)


def test_mask_area_covers_projected_points():
    gt = make_scene(SynthConfig())
    cam = gt.scene.cameras[1]
    pos, seg = inlier_arrays(gt)
    for pose in gt.scene.images.values():
        _, _, valid = project_points(pos, cam, pose)
        labels = gt.masks[pose.name].labels
        for s, lab in gt.local_labels[pose.name].items():
            assert (labels == lab).sum() >= (valid & (seg == s)).sum()


@pytest.mark.parametrize("layout", ["stacked", "scattered"])
def test_labeled_pixels_lie_next_to_projections(layout):
    gt = make_scene(SynthConfig(seed=2, segment_layout=layout, n_cameras=4))
    cam = gt.scene.cameras[1]
    pos, seg = inlier_arrays(gt)
    for pose in gt.scene.images.values():
        uv, _, valid = project_points(pos, cam, pose)
        labels = gt.masks[pose.name].labels
        for s, lab in gt.local_labels[pose.name].items():
            cells = uv[valid & (seg == s)].astype(int)
            near = np.zeros(labels.shape, bool)
            # every labeled pixel is within one pixel (the dilation) of a projection cell
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    r = np.clip(cells[:, 1] + dr, 0, cam.height - 1)
                    c = np.clip(cells[:, 0] + dc, 0, cam.width - 1)
                    near[r, c] = True
            assert np.all(near[labels == lab])


def test_outliers_far_with_unit_tracks():
    cfg = SynthConfig(seed=4)
    gt = make_scene(cfg)
    pos, _ = inlier_arrays(gt)
    inlier_radius = np.linalg.norm(pos, axis=1).max()
    for pid in gt.true_outlier_ids:
        p = gt.scene.points[pid]
        assert np.linalg.norm(p.xyz) >= cfg.outlier_radius_multiplier * inlier_radius
        assert p.track_length == 1


def test_reproducible():
    a, b = make_scene(SynthConfig(seed=11)), make_scene(SynthConfig(seed=11))
    assert a.true_outlier_ids == b.true_outlier_ids
    assert a.true_segment_of_point == b.true_segment_of_point
    assert a.local_labels == b.local_labels
    for pid, p in a.scene.points.items():
        q = b.scene.points[pid]
        assert p.xyz.tobytes() == q.xyz.tobytes() and p.rgb.tobytes() == q.rgb.tobytes()
    for name, m in a.masks.items():
        assert m.labels.tobytes() == b.masks[name].labels.tobytes()
    assert make_scene(SynthConfig(seed=12)).true_segment_of_point != a.true_segment_of_point


@pytest.mark.parametrize("bad", [
    dict(outlier_fraction=1.5), dict(n_points=-1), dict(outlier_radius_multiplier=1.0),
    dict(camera_rig="line"), dict(n_points=20, n_segments=5), dict(segment_layout="grid"),
])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        make_scene(SynthConfig(**bad))


@given(st.integers(0, 2**16), st.floats(10.0, 30.0), st.sampled_from(["ring", "sphere", "two-rings"]))
@settings(max_examples=10, deadline=None)
def test_hull_filter_oracle_soundness(seed, multiplier, rig):
    gt = make_scene(SynthConfig(seed=seed, outlier_radius_multiplier=multiplier, camera_rig=rig))
    removed = set(filter_model(gt.scene).removed.tolist())
    assert len(removed & gt.true_outlier_ids) >= 0.99 * len(gt.true_outlier_ids)
    assert not removed - gt.true_outlier_ids


def test_write_dataset(tmp_path, default_scene):
    out = write_dataset(default_scene, tmp_path / "ds")
    model = read_model(out / "sparse")
    assert set(model.points) == set(default_scene.scene.points)
    for name, mask in default_scene.masks.items():
        back = load_mask(out / "masks" / name)
        np.testing.assert_array_equal(back.labels, mask.labels)
    truth = json.loads((out / "ground_truth.json").read_text())
    assert sorted(truth["true_outlier_ids"]) == sorted(default_scene.true_outlier_ids)
    assert {int(k): v for k, v in truth["true_segment_of_point"].items()} == default_scene.true_segment_of_point
    assert truth["config"]["seed"] == default_scene.config.seed
