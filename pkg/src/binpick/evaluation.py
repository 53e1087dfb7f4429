"""Confusion-matrix metrics, the decomposition timing benchmark, and the
approximation-rate sweep."""

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UndefinedMetricError
from .grasp import make_inputs, ScanConfig
from .nn import Network, NetConfig, TrainConfig, scores as batch_scores, train
from .render import RenderConfig, render_world_depth
from .trials import (CollectConfig, GraspPose, SceneConfig, TrialConfig,
                     _SceneLocalRunner, augment_records, generate_scene,
                     load_asset, run_pick_trial)


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion cells must be non-negative")

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def metrics(m):
    """(precision, recall, f_value) from a confusion matrix."""
    if m.tp + m.fp == 0:
        raise UndefinedMetricError("precision undefined: no positive predictions")
    if m.tp + m.fn == 0:
        raise UndefinedMetricError("recall undefined: no positive labels")
    precision = m.tp / (m.tp + m.fp)
    recall = m.tp / (m.tp + m.fn)
    if precision + recall == 0:
        raise UndefinedMetricError("F undefined: precision and recall both zero")
    f_value = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f_value


def dataset_inputs(records, render_cfg, crop_side=64, height_range=0.15):
    """(depth, grip, labels) arrays from manifest records (label 0=success)."""
    from .render import DepthImage
    n = len(records)
    depth = np.empty((n, crop_side, crop_side), np.float32)
    grip = np.empty_like(depth)
    labels = np.empty(n, dtype=int)
    for i, rec in enumerate(records):
        img = DepthImage(rec["depth"], render_cfg.pixel_size,
                         render_cfg.sensor_z, render_cfg.floor_z)
        pose = GraspPose(**rec["pose"])
        depth[i], grip[i] = make_inputs(img, pose, render_cfg, crop_side,
                                        height_range)
        labels[i] = 0 if rec["label"] == "success" else 1
    return depth, grip, labels


def evaluate(net, records, render_cfg, crop_side=64, threshold=0.5):
    """Confusion matrix plus per-record scores over a verify split."""
    if not records:
        raise ConfigError("empty evaluation split")
    depth, grip, labels = dataset_inputs(records, render_cfg, crop_side)
    ys = batch_scores(net, depth, grip)
    pred_success = ys > threshold
    actual_success = labels == 0
    m = ConfusionMatrix(
        tp=int(np.sum(pred_success & actual_success)),
        fp=int(np.sum(pred_success & ~actual_success)),
        fn=int(np.sum(~pred_success & actual_success)),
        tn=int(np.sum(~pred_success & ~actual_success)))
    return m, ys


# ---------------------------------------------------------------------------
# timing benchmark

def timing_benchmark(asset="workpiece", part_counts=(1, 5, 10, 20),
                     trials=3, seed=0, count=4, out_csv=None):
    """Per-K mean/median step cost while replaying one seeded pick trial.

    The scene seed, drop poses, and grasp are identical across K; only the
    collision decomposition differs.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rows = []
    for k in part_counts:
        scfg = SceneConfig(asset=asset, count=count, seed=seed, approx_parts=k,
                           settle_steps=3000)
        times = []
        for _ in range(trials):
            world = generate_scene(scfg)
            depth = render_world_depth(world)
            rng = np.random.default_rng((seed, 0xBE4C))
            from .trials import sample_grasp_pose
            pose = sample_grasp_pose(depth, rng)
            steps0 = world.steps_done
            t0 = time.perf_counter()
            run_pick_trial(world, pose, depth_image=depth)
            dt = time.perf_counter() - t0
            steps = world.steps_done - steps0
            times.append(dt / max(steps, 1))
        rows.append({"parts": k, "mean_step_s": float(np.mean(times)),
                     "median_step_s": float(np.median(times)),
                     "std_step_s": float(np.std(times))})
    if out_csv:
        with open(out_csv, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
            wr.writeheader()
            wr.writerows(rows)
    return rows


# ---------------------------------------------------------------------------
# approximation-rate sweep

@dataclass
class SweepConfig:
    rates: tuple = (0.0, 0.3, 1.0)
    asset: str = "hexprism"
    n_success_target: int = 80
    max_trials: int = 600
    master_seed: int = 0
    epochs: int = 25
    scene: SceneConfig = field(default_factory=SceneConfig)

    def validate(self):
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise ConfigError("rates must be within [0, 1]")
        if list(self.rates) != sorted(self.rates):
            raise ConfigError("rates must be sorted ascending")


class _MixedSceneRunner(_SceneLocalRunner):
    """Collection runner that flips each scene between box and hull collision
    with probability = the configured approximation rate."""

    def __init__(self, cc, rate):
        super().__init__(cc)
        self.rate = rate

    def run(self, t):
        scene_idx = t // self.cc.trials_per_scene
        u = np.random.default_rng((self.cc.master_seed, 0xA99, scene_idx)).random()
        self.cc.scene.collision = "box" if u < self.rate else "hull"
        if scene_idx != self.scene_idx:
            self.world = None  # force regeneration under the chosen mode
            self.scene_idx = None
        return super().run(t)


def probe_pose(asset="hexprism", opening=0.07):
    """A grasp that holds on the fitted-box part but slips off the real one.

    Closing across the part, offset toward a sloped side: the box model
    presents a parallel vertical face pair to the fingers where the exact
    shape presents sloped walls that squeeze out.
    """
    mesh, model = load_asset(asset, 1)
    box = model.boxes[0]
    from .rotation import quat_to_mat
    # world-aligned footprint of the fitted box (its local frame may be a
    # rotation/permutation of the world axes)
    wext = np.abs(quat_to_mat(box.orientation)) @ box.half_extents
    return GraspPose(0.5 * float(wext[0]), 0.5 * float(wext[1]), 0.0, opening)


def probe_poses(asset="hexprism", opening=0.07):
    """Symmetry copies of the probe grasp; the sweep averages their scores."""
    p = probe_pose(asset, opening)
    out = []
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            for theta in (0.0, np.pi / 2.0):
                out.append(GraspPose(sx * p.x, sy * p.y, theta, opening))
    return out


def probe_scene(asset="hexprism"):
    """Single upright part at the tray centre, settled."""
    mesh, model = load_asset(asset, 1)
    from .physics import RigidBody, World
    world = World()
    top = float(mesh.bounds()[1][2] - mesh.bounds()[0][2])
    body = RigidBody.from_approx_model("probe", model, mesh=mesh,
                                       pos=np.array([0.0, 0.0, top / 2 + 0.001]))
    world.add_body(body)
    world.settle(1000)
    return world


def approx_effect_experiment(config=None, net_config=None, progress=None,
                             out_json=None):
    """Train one net per approximation rate and score the probe grasp."""
    cfg = config or SweepConfig()
    cfg.validate()
    rcfg = RenderConfig()
    world = probe_scene(cfg.asset)
    probe_img = render_world_depth(world, rcfg)
    poses = probe_poses(cfg.asset)
    from .trials import collect
    rows = []
    for rate in cfg.rates:
        scene = SceneConfig(asset=cfg.asset, seed=cfg.master_seed,
                            count=cfg.scene.count,
                            approx_parts=cfg.scene.approx_parts)
        cc = CollectConfig(scene=scene, master_seed=cfg.master_seed)
        runner_cls = lambda c: _MixedSceneRunner(c, rate)
        records, split = _collect_with_runner(cc, runner_cls,
                                              cfg.n_success_target,
                                              cfg.max_trials, progress)
        manifest = _records_to_manifest(records, split)
        train_recs = augment_records(
            [r for r in manifest if r["split"] == "train"], rcfg)
        d, g, y = dataset_inputs(train_recs, rcfg)
        net = Network(net_config or NetConfig(seed=cfg.master_seed))
        tc = TrainConfig(epochs=cfg.epochs, seed=cfg.master_seed)
        history = train(net, (d, g, y), tc, log=progress)
        per_pose = []
        for pose in poses:
            dcrop, gcrop = make_inputs(probe_img, pose, rcfg)
            per_pose.append(float(net.forward(dcrop, gcrop)[0]))
        y0 = float(np.mean(per_pose))
        rows.append({"rate": rate, "probe_y0": y0, "probe_scores": per_pose,
                     "n_records": len(manifest),
                     "final_loss": history["loss"][-1]})
        if progress:
            progress(f"rate {rate}: probe y0 = {y0:.3f}")
    report = {"probe_poses": [p.as_dict() for p in poses], "rates": rows}
    if out_json:
        with open(out_json, "w") as fh:
            json.dump(report, fh, indent=2)
    return report


def _collect_with_runner(cc, runner_cls, n_success_target, max_trials,
                         progress=None):
    """collect() with a custom per-trial runner (serial, canonical order)."""
    from .errors import DataError
    runner = runner_cls(cc)
    records = []
    n_success = 0
    for t in range(max_trials):
        rec = runner.run(t)
        if rec is not None:
            records.append(rec)
            n_success += rec.label == "success"
        if n_success >= n_success_target:
            break
    succ = [r for r in records if r.label == "success"]
    fail = [r for r in records if r.label == "failure"]
    n = min(len(succ), len(fail))
    if n == 0:
        raise DataError("sweep collection produced no balanced data")
    rng = np.random.default_rng((cc.master_seed, 0xFA17))
    succ = [succ[i] for i in sorted(rng.choice(len(succ), n, replace=False))]
    fail = [fail[i] for i in sorted(rng.choice(len(fail), n, replace=False))]
    balanced = sorted(succ + fail, key=lambda r: r.index)
    split_rng = np.random.default_rng((cc.master_seed, 0x59717))
    order = split_rng.permutation(len(balanced))
    n_train = int(round(cc.train_fraction * len(balanced)))
    split = {balanced[i].index: ("train" if rank < n_train else "verify")
             for rank, i in enumerate(order)}
    return balanced, split


def _records_to_manifest(records, split):
    return [{"index": r.index, "pose": r.pose.as_dict(), "label": r.label,
             "depth": r.depth, "split": split[r.index]} for r in records]
