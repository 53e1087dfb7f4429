import json

import numpy as np
import pytest

from binpick.errors import ConfigError
from binpick.render import RenderConfig, render_world_depth
from binpick.trials import (AUGMENT_SET, CollectConfig, GraspPose, SceneConfig,
                            TrialConfig, _SceneLocalRunner, _run_trial_index,
                            augment_records, collect, generate_scene,
                            load_asset, load_dataset, peak_pixel,
                            run_pick_trial, sample_grasp_pose, save_dataset)


def test_scene_config_validation():
    with pytest.raises(ConfigError):
        SceneConfig(count=0).validate()
    with pytest.raises(ConfigError):
        SceneConfig(drop_height=0.05).validate()
    with pytest.raises(ConfigError):
        SceneConfig(collision="exact").validate()


def test_load_asset_cached_and_unknown():
    a = load_asset("cube", 1)
    b = load_asset("cube", 1)
    assert a[0] is b[0]
    with pytest.raises(ConfigError):
        load_asset("doesnotexist", 1)


def test_grasp_pose_theta_wraps():
    p = GraspPose(0.0, 0.0, 1.5 * np.pi)
    assert 0.0 <= p.theta < np.pi
    assert np.isclose(p.theta, 0.5 * np.pi)


def test_sample_grasp_pose_near_peak():
    cfg = RenderConfig()
    vals = np.full((128, 128), cfg.sensor_z, np.float32)
    vals[40, 90] = cfg.sensor_z - 0.05  # the pile peak
    from binpick.render import DepthImage
    img = DepthImage(vals, cfg.pixel_size, cfg.sensor_z, cfg.floor_z)
    assert peak_pixel(img) == (40, 90)
    rng = np.random.default_rng(0)
    px, py = cfg.pixel_to_world(40, 90)
    for _ in range(20):
        pose = sample_grasp_pose(img, rng, cfg, radius=0.03)
        assert np.hypot(pose.x - px, pose.y - py) <= 0.031
        assert 0.0 <= pose.theta < np.pi


def test_trial_restores_world_state():
    world = generate_scene(SceneConfig(seed=2, count=4, settle_steps=3000))
    before = json.loads(world.snapshot_json())["bodies"]
    depth = render_world_depth(world)
    pose = sample_grasp_pose(depth, np.random.default_rng(0))
    run_pick_trial(world, pose)
    # body states restored exactly (the step counter may advance)
    assert json.loads(world.snapshot_json())["bodies"] == before
    assert world.gripper is None


def test_trial_record_labels():
    world = generate_scene(SceneConfig(seed=2, count=4, settle_steps=3000))
    depth = render_world_depth(world)
    pose = sample_grasp_pose(depth, np.random.default_rng(1))
    rec = run_pick_trial(world, pose, index=7, seed=2, asset="hexprism")
    if rec is not None:
        assert rec.label in ("success", "failure")
        assert rec.index == 7
        assert rec.depth.shape == (128, 128)


def test_runner_matches_stateless_path():
    cc = CollectConfig(scene=SceneConfig(seed=0, count=4, settle_steps=3000),
                       master_seed=0, trials_per_scene=3)
    runner = _SceneLocalRunner(cc)
    for t in range(4):
        a = runner.run(t)
        b = _run_trial_index(cc, t)
        assert (a is None) == (b is None)
        if a is not None:
            assert a.label == b.label
            assert a.pose.as_dict() == b.pose.as_dict()
            assert np.array_equal(a.depth, b.depth)


def test_collect_balances_and_splits(tmp_path):
    cc = CollectConfig(scene=SceneConfig(seed=0, count=4, settle_steps=3000),
                       master_seed=0, trials_per_scene=4)
    records, split = collect(cc, n_success_target=3, max_trials=40)
    labels = [r.label for r in records]
    assert labels.count("success") == labels.count("failure")
    assert set(split.values()) <= {"train", "verify"}
    # save / load round trip
    out = tmp_path / "ds"
    save_dataset(out, cc, records, split)
    back, rcfg = load_dataset(out)
    assert len(back) == len(records)
    for rec, orig in zip(back, records):
        assert rec["label"] == orig.label
        assert np.array_equal(rec["depth"], orig.depth)
    assert rcfg.width == 128


def test_collect_rejects_bad_target():
    with pytest.raises(ConfigError):
        collect(CollectConfig(), 0)


def test_load_dataset_missing(tmp_path):
    from binpick.errors import DataError
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope")


# -- augmentation -----------------------------------------------------------

def _fake_record(depth, pose):
    return {"index": 0, "depth": depth, "pose": pose.as_dict(),
            "label": "success", "split": "train"}


def test_augment_sixfold():
    cfg = RenderConfig()
    depth = np.random.default_rng(0).random((128, 128)).astype(np.float32)
    recs = augment_records([_fake_record(depth, GraspPose(0.02, 0.01, 0.3))], cfg)
    assert len(recs) == 6
    # identity variant is untouched
    assert np.array_equal(recs[0]["depth"], depth)
    assert np.isclose(recs[0]["pose"]["x"], 0.02)


def test_augment_matches_rerendered_scene():
    # transform(render(scene)) must equal render(transform(scene)): check a
    # 90-degree world rotation of a box against the image-space rotation
    from binpick.render import box_triangles, render_depth
    cfg = RenderConfig()
    center = np.array([0.03, 0.01, 0.02])
    half = np.array([0.02, 0.01, 0.02])
    img = render_depth([box_triangles(center, np.eye(3), half)], cfg)
    rec = _fake_record(img.values, GraspPose(center[0], center[1], 0.2))
    aug = augment_records([rec], cfg)[1]  # the +90 degree variant
    rot_center = np.array([-center[1], center[0], center[2]])
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    img90 = render_depth([box_triangles(rot_center, rz, half)], cfg)
    assert np.allclose(aug["depth"], img90.values, atol=1e-6)
    assert np.isclose(aug["pose"]["x"], -center[1])
    assert np.isclose(aug["pose"]["y"], center[0])
    assert np.isclose(aug["pose"]["theta"], (0.2 + np.pi / 2) % np.pi)


def test_augment_mirror_pose():
    cfg = RenderConfig()
    depth = np.zeros((128, 128), np.float32)
    rec = _fake_record(depth, GraspPose(0.04, -0.03, 0.4))
    mirrored = augment_records([rec], cfg, symmetry=[(0, True)])[0]
    assert np.isclose(mirrored["pose"]["x"], -0.04)
    assert np.isclose(mirrored["pose"]["y"], -0.03)
    assert np.isclose(mirrored["pose"]["theta"], (np.pi - 0.4) % np.pi)


def test_augment_set_is_group_like():
    # applying the identity transform twice stays put; mirror twice restores
    cfg = RenderConfig()
    rng = np.random.default_rng(1)
    depth = rng.random((128, 128)).astype(np.float32)
    rec = _fake_record(depth, GraspPose(0.02, 0.03, 1.0))
    once = augment_records([rec], cfg, symmetry=[(0, True)])[0]
    twice = augment_records([once], cfg, symmetry=[(0, True)])[0]
    assert np.array_equal(twice["depth"], depth)
    assert np.isclose(twice["pose"]["x"], 0.02)
    assert np.isclose(twice["pose"]["theta"], 1.0)
    assert len(AUGMENT_SET) == 6
