"""Scene generation, pick-trial execution, labeling, and the dataset format.

A trial is: settle a pile, render the depth image (gripper absent), move the
gripper down over the sampled pose, close, lift, and label by the final
height of object centers.  Dataset layout: manifest.jsonl + blobs/NNNNNN.f32
(little-endian float32 full-frame depth) + config.json.
"""

import json
import os
from dataclasses import dataclass, field, asdict
from importlib import resources

import numpy as np

from .errors import (ConfigError, DataError, InstabilityError,
                     StrokeViolationError)
from .geometry import build_approx_model, load_mesh
from .physics import Gripper, PhysicsParams, RigidBody, World
from .render import RenderConfig, render_world_depth
from .rotation import random_quat

ASSET_NAMES = ("cube", "lprism", "hexprism", "ellcyl", "workpiece")

_asset_cache = {}


def load_asset(name, parts=1):
    """Shipped asset mesh plus its fitted-box model, cached per (name, K)."""
    key = (name, parts)
    if key not in _asset_cache:
        if name in ASSET_NAMES:
            path = str(resources.files("binpick") / "assets" / f"{name}.obj")
        elif os.path.exists(name):
            path = name
        else:
            raise ConfigError(f"unknown asset {name!r}")
        mesh = load_mesh(path)
        _asset_cache[key] = (mesh, build_approx_model(mesh, parts))
    return _asset_cache[key]


@dataclass
class SceneConfig:
    asset: str = "hexprism"
    count: int = 8
    drop_height: float = 0.15
    tray: tuple = (0.20, 0.20)
    seed: int = 0
    approx_parts: int = 1
    collision: str = "box"          # "box" | "hull"
    density: float = 1000.0
    settle_steps: int = 4000
    physics: PhysicsParams = field(default_factory=PhysicsParams)

    def validate(self):
        if self.count < 1:
            raise ConfigError("object count must be >= 1")
        if self.drop_height <= 0.08:
            raise ConfigError("drop height must clear the tray walls")
        if self.collision not in ("box", "hull"):
            raise ConfigError(f"unknown collision mode {self.collision!r}")


@dataclass
class GraspPose:
    x: float
    y: float
    theta: float
    opening: float = 0.07

    def __post_init__(self):
        self.theta = float(self.theta) % np.pi

    def as_dict(self):
        return {"x": self.x, "y": self.y, "theta": self.theta,
                "opening": self.opening}


@dataclass
class TrialConfig:
    lift_height: float = 0.10
    lift_fraction: float = 0.5
    grasp_clearance: float = 0.002   # fingertip target above the floor
    descend_speed: float = 0.5
    close_speed: float = 0.16
    render: RenderConfig = field(default_factory=RenderConfig)
    min_depth_fraction: float = 0.8  # blocked above this -> failure, below -> discard


@dataclass
class TrialRecord:
    index: int
    pose: GraspPose
    label: str                       # "success" | "failure"
    depth: np.ndarray                # full-frame float32 (H, W)
    seed: int
    asset: str
    approx_parts: int


def generate_scene(config, max_reseeds=5):
    """Drop objects sequentially and settle to quiescence.

    Rejects (and reseeds) scenes that fail to settle or leave the tray.
    """
    config.validate()
    mesh, model = load_asset(config.asset, config.approx_parts)
    hull_parts = None
    if config.collision == "hull":
        from .hulls import convex_parts_for_mesh
        hull_parts = convex_parts_for_mesh(mesh, config.approx_parts)
    for attempt in range(max_reseeds):
        seed = config.seed + 1_000_003 * attempt
        rng = np.random.default_rng(seed)
        world = World(params=config.physics, tray_size=config.tray)
        ok = True
        for i in range(config.count):
            margin = 0.06 * min(config.tray)
            x = rng.uniform(-config.tray[0] / 2 + margin, config.tray[0] / 2 - margin)
            y = rng.uniform(-config.tray[1] / 2 + margin, config.tray[1] / 2 - margin)
            body = RigidBody.from_approx_model(
                f"part{i}", model, mesh=mesh, density=config.density,
                pos=np.array([x, y, config.drop_height]),
                quat=random_quat(rng))
            if hull_parts is not None:
                body.hulls = hull_parts
            world.add_body(body)
            world.run(40)  # let it clear the drop zone before the next object
        try:
            # omega threshold is loose here: a part rocking at ~0.05 rad/s is
            # visually still and should not force a reseed
            if not world.settle(config.settle_steps, v_eps=2e-3, w_eps=5e-2):
                ok = False
        except InstabilityError:
            ok = False
        hx, hy = config.tray[0] / 2 + 0.02, config.tray[1] / 2 + 0.02
        for b in world.dynamic_bodies():
            if abs(b.pos[0]) > hx or abs(b.pos[1]) > hy or b.pos[2] < world.floor_z:
                ok = False
        if ok:
            return world
    raise DataError(f"scene seed {config.seed} failed to settle after {max_reseeds} reseeds")


def peak_pixel(depth_image):
    """(row, col) of the highest scene point (minimum depth)."""
    return np.unravel_index(np.argmin(depth_image.values), depth_image.values.shape)


def sample_grasp_pose(depth_image, rng, config=None, radius=0.03, opening=0.07):
    """Pose biased toward the pile's highest point; theta uniform on [0, pi)."""
    cfg = config or RenderConfig()
    r, c = peak_pixel(depth_image)
    px, py = cfg.pixel_to_world(r, c)
    ang = rng.uniform(0.0, 2.0 * np.pi)
    rad = radius * np.sqrt(rng.uniform())
    x = np.clip(px + rad * np.cos(ang), cfg.x0 + 0.02,
                cfg.x0 + cfg.width * cfg.pixel_size - 0.02)
    y = np.clip(py + rad * np.sin(ang), cfg.y0 + 0.02,
                cfg.y0 + cfg.height * cfg.pixel_size - 0.02)
    theta = rng.uniform(0.0, np.pi)
    return GraspPose(float(x), float(y), float(theta), opening)


def _snapshot_bodies(world):
    return [(b.pos.copy(), b.quat.copy(), b.vel.copy(), b.omega.copy())
            for b in world.bodies]


def _restore_bodies(world, snap):
    for b, (p, q, v, w) in zip(world.bodies, snap):
        b.pos, b.quat, b.vel, b.omega = p.copy(), q.copy(), v.copy(), w.copy()


def run_pick_trial(world, pose, trial_cfg=None, index=0, seed=0,
                   asset="", approx_parts=1, depth_image=None):
    """Execute one pick attempt; returns a TrialRecord or None (discarded).

    The world is restored to its pre-trial state afterwards so several poses
    can be tried against one settled pile.
    """
    cfg = trial_cfg or TrialConfig()
    snap = _snapshot_bodies(world)
    if depth_image is None:
        depth_image = render_world_depth(world, cfg.render)

    top_z = max((b.pos[2] for b in world.dynamic_bodies()), default=world.floor_z)
    _, _, finger_len = 0.008, 0.012, 0.04
    start_tip_z = max(top_z + 0.06, world.floor_z + 0.12)
    grip = Gripper((pose.x, pose.y), pose.theta, width=pose.opening,
                   z=start_tip_z + finger_len / 2.0,
                   speed=cfg.descend_speed, close_speed=cfg.close_speed)
    record = None
    try:
        world.attach_gripper(grip)
        target_tip = world.floor_z + cfg.grasp_clearance
        descend_span = grip.fingertip_z() - target_tip
        grip.command("descend", descend_span, floor_z=world.floor_z)
        for _ in range(3000):
            world.step()
            if grip.done():
                break
        reached = (start_tip_z - grip.fingertip_z()) / max(descend_span, 1e-9)
        if grip.mode == Gripper.BLOCKED and reached < cfg.min_depth_fraction:
            return None  # descent blocked early: pose never tested, discard
        label = None
        if grip.mode != Gripper.BLOCKED:
            grip.command("close", 0.0)
            for _ in range(3000):
                world.step()
                if grip.done():
                    break
            grip.command("ascend", (start_tip_z + cfg.lift_height) - grip.fingertip_z())
            for _ in range(3000):
                world.step()
                if grip.done():
                    break
            lifted = any(b.pos[2] >= world.floor_z + cfg.lift_fraction * cfg.lift_height
                         for b in world.dynamic_bodies())
            label = "success" if lifted else "failure"
        else:
            label = "failure"  # blocked deep in the pile: a real failed attempt
        record = TrialRecord(index=index, pose=pose, label=label,
                             depth=depth_image.values, seed=seed, asset=asset,
                             approx_parts=approx_parts)
    except (StrokeViolationError, InstabilityError):
        record = None
    finally:
        world.detach_gripper()
        _restore_bodies(world, snap)
    return record


# ---------------------------------------------------------------------------
# collection

@dataclass
class CollectConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    trial: TrialConfig = field(default_factory=TrialConfig)
    trials_per_scene: int = 6
    master_seed: int = 0
    train_fraction: float = 0.9


def _run_trial_index(cc, t):
    """One fully seeded trial; pure function of (config, index)."""
    scene_idx = t // cc.trials_per_scene
    scfg = SceneConfig(**{**asdict_scene(cc.scene), "seed": cc.master_seed + scene_idx})
    world = generate_scene(scfg)
    depth = render_world_depth(world, cc.trial.render)
    rng = np.random.default_rng((cc.master_seed, 0xB1A5, t))
    pose = sample_grasp_pose(depth, rng, cc.trial.render)
    return run_pick_trial(world, pose, cc.trial, index=t, seed=scfg.seed,
                          asset=scfg.asset, approx_parts=scfg.approx_parts,
                          depth_image=depth)


def asdict_scene(scfg):
    d = asdict(scfg)
    d["physics"] = None
    d.pop("physics")
    return d


class _SceneLocalRunner:
    """Runs consecutive trial indices, reusing the settled scene within a
    trials_per_scene block (results identical to _run_trial_index)."""

    def __init__(self, cc):
        self.cc = cc
        self.scene_idx = None
        self.world = None
        self.depth = None

    def run(self, t):
        cc = self.cc
        scene_idx = t // cc.trials_per_scene
        if scene_idx != self.scene_idx:
            scfg = SceneConfig(**{**asdict_scene(cc.scene),
                                  "seed": cc.master_seed + scene_idx})
            self.world = generate_scene(scfg)
            self.depth = render_world_depth(self.world, cc.trial.render)
            self.scene_idx = scene_idx
            self.scene_seed = scfg.seed
        rng = np.random.default_rng((cc.master_seed, 0xB1A5, t))
        pose = sample_grasp_pose(self.depth, rng, cc.trial.render)
        return run_pick_trial(self.world, pose, cc.trial, index=t,
                              seed=self.scene_seed, asset=cc.scene.asset,
                              approx_parts=cc.scene.approx_parts,
                              depth_image=self.depth)


def collect(cc, n_success_target, max_trials=None, workers=1, progress=None):
    """Run trials until the success quota is met, then balance and split.

    Output is a list of manifest dicts plus the per-record depth arrays,
    canonically ordered by trial index, independent of worker count.
    """
    if n_success_target < 1:
        raise ConfigError("success target must be >= 1")
    limit = max_trials if max_trials is not None else 100 * n_success_target
    records = []
    n_success = 0
    if workers > 1:
        import multiprocessing as mp
        chunk = max(workers * cc.trials_per_scene, 16)
        t = 0
        with mp.get_context("fork").Pool(workers) as pool:
            while n_success < n_success_target and t < limit:
                idxs = list(range(t, min(t + chunk, limit)))
                for rec in pool.starmap(_run_trial_index,
                                        [(cc, i) for i in idxs]):
                    if rec is not None:
                        records.append(rec)
                        n_success += rec.label == "success"
                t = idxs[-1] + 1
                if progress:
                    progress(t, n_success)
    else:
        runner = _SceneLocalRunner(cc)
        for t in range(limit):
            rec = runner.run(t)
            if rec is not None:
                records.append(rec)
                n_success += rec.label == "success"
            if progress and (t + 1) % 50 == 0:
                progress(t + 1, n_success)
            if n_success >= n_success_target:
                break
    records.sort(key=lambda r: r.index)
    succ = [r for r in records if r.label == "success"]
    fail = [r for r in records if r.label == "failure"]
    if len(succ) < n_success_target:
        import sys
        print(f"warning: only {len(succ)}/{n_success_target} successes within "
              f"{limit} trials; dataset is partial", file=sys.stderr)
    n = min(len(succ), len(fail))
    if n == 0:
        raise DataError("collection produced no balanced data")
    rng = np.random.default_rng((cc.master_seed, 0xFA17))
    succ = [succ[i] for i in sorted(rng.choice(len(succ), n, replace=False))]
    fail = [fail[i] for i in sorted(rng.choice(len(fail), n, replace=False))]
    balanced = sorted(succ + fail, key=lambda r: r.index)
    split_rng = np.random.default_rng((cc.master_seed, 0x59717))
    order = split_rng.permutation(len(balanced))
    n_train = int(round(cc.train_fraction * len(balanced)))
    split = {}
    for rank, rec_i in enumerate(order):
        split[balanced[rec_i].index] = "train" if rank < n_train else "verify"
    return balanced, split


def save_dataset(out_dir, cc, records, split):
    os.makedirs(os.path.join(out_dir, "blobs"), exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump({"scene": asdict_scene(cc.scene),
                   "trials_per_scene": cc.trials_per_scene,
                   "master_seed": cc.master_seed,
                   "train_fraction": cc.train_fraction,
                   "render": {"width": cc.trial.render.width,
                              "height": cc.trial.render.height,
                              "pixel_size": cc.trial.render.pixel_size,
                              "sensor_z": cc.trial.render.sensor_z,
                              "floor_z": cc.trial.render.floor_z}},
                  fh, indent=2)
    with open(os.path.join(out_dir, "manifest.jsonl"), "w") as fh:
        for rec in records:
            blob = f"blobs/{rec.index:06d}.f32"
            arr = np.ascontiguousarray(rec.depth, dtype="<f4")
            with open(os.path.join(out_dir, blob), "wb") as bf:
                bf.write(arr.tobytes())
            fh.write(json.dumps({
                "index": rec.index, "blob": blob, "pose": rec.pose.as_dict(),
                "label": rec.label, "seed": rec.seed, "asset": rec.asset,
                "approx_parts": rec.approx_parts,
                "split": split[rec.index]}) + "\n")


def load_dataset(path):
    """(records, render_config); records are manifest dicts with a 'depth' array."""
    cfg_path = os.path.join(path, "config.json")
    man_path = os.path.join(path, "manifest.jsonl")
    if not (os.path.exists(cfg_path) and os.path.exists(man_path)):
        raise DataError(f"{path} is not a dataset directory")
    with open(cfg_path) as fh:
        meta = json.load(fh)
    r = meta["render"]
    rcfg = RenderConfig(width=r["width"], height=r["height"],
                        pixel_size=r["pixel_size"], sensor_z=r["sensor_z"],
                        floor_z=r["floor_z"])
    records = []
    with open(man_path) as fh:
        for line in fh:
            rec = json.loads(line)
            blob = os.path.join(path, rec["blob"])
            if not os.path.exists(blob):
                raise DataError(f"missing blob {rec['blob']}")
            arr = np.fromfile(blob, dtype="<f4").reshape(r["height"], r["width"])
            rec["depth"] = arr
            records.append(rec)
    return records, rcfg


# ---------------------------------------------------------------------------
# augmentation

def _rot90_image(a):
    """World rotation by +90 deg about the image centre (row = +y, col = +x)."""
    return np.ascontiguousarray(a[::-1, :].T)


def _mirror_image(a):
    """World mirror x -> -x."""
    return np.ascontiguousarray(a[:, ::-1])


def _transform_pose(pose, k90, mirror, center_xy=(0.0, 0.0)):
    x, y, theta = pose["x"] - center_xy[0], pose["y"] - center_xy[1], pose["theta"]
    for _ in range(k90):
        x, y = -y, x
        theta += np.pi / 2.0
    if mirror:
        x = -x
        theta = np.pi - theta
    return {"x": x + center_xy[0], "y": y + center_xy[1],
            "theta": float(theta % np.pi), "opening": pose["opening"]}


AUGMENT_SET = [(0, False), (1, False), (2, False), (0, True), (1, True), (2, True)]


def augment_records(records, render_cfg, symmetry=AUGMENT_SET):
    """Expand records by rotations/mirrors with consistent pose transforms."""
    out = []
    for rec in records:
        for k90, mirror in symmetry:
            img = rec["depth"]
            for _ in range(k90):
                img = _rot90_image(img)
            if mirror:
                img = _mirror_image(img)
            new = dict(rec)
            new["depth"] = img
            new["pose"] = _transform_pose(rec["pose"], k90, mirror,
                                          render_cfg.center_xy)
            out.append(new)
    return out
