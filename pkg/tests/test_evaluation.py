import json

import numpy as np
import pytest

from binpick.errors import ConfigError, UndefinedMetricError
from binpick.evaluation import (ConfusionMatrix, SweepConfig, dataset_inputs,
                                evaluate, metrics, probe_pose, probe_scene,
                                timing_benchmark)
from binpick.render import RenderConfig, render_world_depth
from binpick.trials import GraspPose, load_asset


def test_confusion_matrix_validation():
    with pytest.raises(ValueError):
        ConfusionMatrix(tp=-1)
    m = ConfusionMatrix(1, 2, 3, 4)
    assert m.total == 10


def test_metrics_oracle_simple():
    # P = 8/10, R = 8/12, F harmonic mean
    p, r, f = metrics(ConfusionMatrix(tp=8, fp=2, fn=4, tn=6))
    assert np.isclose(p, 0.8)
    assert np.isclose(r, 8 / 12)
    assert np.isclose(f, 2 * p * r / (p + r))


def test_metrics_reference_cells():
    # frozen reference: cells (436, 134, 164, 466) -> printed 3-decimal values
    p, r, f = metrics(ConfusionMatrix(436, 134, 164, 466))
    assert abs(p - 0.765) <= 0.0005
    assert abs(r - 0.727) <= 0.0005
    assert abs(f - 0.745) <= 0.0005
    # higher-precision frozen oracle for regression
    assert np.isclose(p, 436 / 570, rtol=1e-12)
    assert np.isclose(r, 436 / 600, rtol=1e-12)
    assert np.isclose(f, 2 * 436 / (2 * 436 + 134 + 164), rtol=1e-12)


def test_metrics_undefined_cases():
    with pytest.raises(UndefinedMetricError):
        metrics(ConfusionMatrix(0, 0, 5, 5))     # no positive predictions
    with pytest.raises(UndefinedMetricError):
        metrics(ConfusionMatrix(0, 3, 0, 5))     # no positive labels


def test_dataset_inputs_label_convention():
    cfg = RenderConfig()
    depth = np.full((128, 128), cfg.sensor_z, np.float32)
    recs = [{"depth": depth, "label": "success",
             "pose": {"x": 0.0, "y": 0.0, "theta": 0.0, "opening": 0.07}},
            {"depth": depth, "label": "failure",
             "pose": {"x": 0.0, "y": 0.0, "theta": 0.0, "opening": 0.07}}]
    d, g, y = dataset_inputs(recs, cfg)
    assert d.shape == (2, 64, 64)
    assert list(y) == [0, 1]  # 0 = success


def test_evaluate_confusion_cells():
    cfg = RenderConfig()
    # two records: a bright centre (scored success) and a dark one
    hot = np.full((128, 128), cfg.sensor_z - 0.10, np.float32)
    cold = np.full((128, 128), cfg.sensor_z, np.float32)
    pose = {"x": 0.0, "y": 0.0, "theta": 0.0, "opening": 0.07}
    recs = [{"depth": hot, "label": "success", "pose": pose},
            {"depth": cold, "label": "failure", "pose": pose}]

    class Stub:
        def forward(self, depth, grip, train=False, want_cache=False):
            depth = np.asarray(depth)
            y0 = np.clip(depth[:, 32, 32], 0.0, 1.0)
            return np.stack([y0, 1.0 - y0], axis=1)

    m, ys = evaluate(Stub(), recs, cfg)
    assert (m.tp, m.fp, m.fn, m.tn) == (1, 0, 0, 1)
    assert len(ys) == 2
    with pytest.raises(ConfigError):
        evaluate(Stub(), [], cfg)


def test_sweep_config_validation():
    with pytest.raises(ConfigError):
        SweepConfig(rates=(0.0, 1.5)).validate()
    with pytest.raises(ConfigError):
        SweepConfig(rates=(1.0, 0.0)).validate()
    SweepConfig().validate()


def test_probe_pose_discriminates_box_from_hull_physics():
    # the probe grasp must hold when the part collides as its fitted box
    # and slip off when it collides as its exact hull
    from binpick.hulls import convex_parts_for_mesh
    from binpick.physics import RigidBody, World
    from binpick.trials import run_pick_trial
    mesh, model = load_asset("hexprism", 1)
    pose = probe_pose("hexprism")

    def outcome(use_hull):
        world = World()
        top = float(mesh.bounds()[1][2] - mesh.bounds()[0][2])
        body = RigidBody.from_approx_model(
            "p", model, mesh=mesh, pos=np.array([0.0, 0.0, top / 2 + 0.001]))
        if use_hull:
            body.hulls = convex_parts_for_mesh(mesh, 1)
        world.add_body(body)
        world.settle(1000)
        depth = render_world_depth(world)
        rec = run_pick_trial(world, pose, depth_image=depth)
        return None if rec is None else rec.label

    assert outcome(False) == "success"
    assert outcome(True) == "failure"


def test_probe_poses_symmetry_set():
    from binpick.evaluation import probe_poses
    poses = probe_poses("hexprism")
    assert len(poses) == 8
    base = probe_pose("hexprism")
    for p in poses:
        assert np.isclose(abs(p.x), base.x) and np.isclose(abs(p.y), base.y)
        assert p.theta in (0.0, np.pi / 2)


def test_probe_scene_single_settled_part():
    world = probe_scene("hexprism")
    dyn = world.dynamic_bodies()
    assert len(dyn) == 1
    assert world.is_quiescent()
    img = render_world_depth(world)
    assert (img.values < img.floor_depth - 1e-6).sum() > 50


def test_timing_benchmark_shape(tmp_path):
    rows = timing_benchmark(asset="cube", part_counts=(1,), trials=1, count=2,
                            out_csv=tmp_path / "t.csv")
    assert len(rows) == 1
    assert rows[0]["parts"] == 1
    assert rows[0]["median_step_s"] > 0
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert "median_step_s" in header
    with pytest.raises(ConfigError):
        timing_benchmark(trials=0)
