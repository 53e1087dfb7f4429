"""Grasp discrimination and the raster-scan search for the best pose.

Candidates are a fixed n x n grid of window centres times 8 gripper
orientations; each is scored by the network's success probability y0 and the
argmax (index tie-break) wins.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .nn import scores as batch_scores
from .render import RenderConfig, crop, render_gripper_segment
from .trials import GraspPose


@dataclass
class ScanConfig:
    grid: int = 6
    orientations: int = 8
    crop_side: int = 64
    opening: float = 0.07
    good_threshold: float = 0.9
    decision_threshold: float = 0.5
    height_range: float = 0.15


def make_inputs(depth_image, pose, render_cfg=None, crop_side=64,
                height_range=0.15):
    """(depth crop, gripper-segment crop) pair fed to the two channels."""
    cfg = render_cfg or RenderConfig()
    row, col = cfg.world_to_pixel(pose.x, pose.y)
    depth_crop = crop(depth_image, (row, col), crop_side)
    seg = render_gripper_segment(pose.x, pose.y, pose.theta, pose.opening, cfg)
    r0 = int(round(row)) - crop_side // 2
    c0 = int(round(col)) - crop_side // 2
    seg_crop = np.zeros((crop_side, crop_side), dtype=np.float32)
    rs, re = max(r0, 0), min(r0 + crop_side, cfg.height)
    cs, ce = max(c0, 0), min(c0 + crop_side, cfg.width)
    if rs < re and cs < ce:
        seg_crop[rs - r0:re - r0, cs - c0:ce - c0] = seg.values[rs:re, cs:ce]
    return depth_crop.height_map(height_range), seg_crop


def discriminate(net, depth_image, pose, render_cfg=None, config=None):
    """(y0, verdict); verdict is success iff y0 strictly exceeds 0.5."""
    cfg = config or ScanConfig()
    d, g = make_inputs(depth_image, pose, render_cfg, cfg.crop_side,
                       cfg.height_range)
    probs = net.forward(d, g)
    y0 = float(probs[0])
    return y0, y0 > cfg.decision_threshold


@dataclass
class GraspCandidate:
    window_center: tuple       # (row, col) pixels
    orientation: int           # o in 0..7, theta = o*pi/8
    pose: GraspPose
    score: float = None


def enumerate_candidates(render_cfg=None, config=None):
    """Grid x orientation candidates, row-major windows then orientation."""
    rcfg = render_cfg or RenderConfig()
    cfg = config or ScanConfig()
    if cfg.grid * 1 > min(rcfg.width, rcfg.height):
        raise GeometryError("grid does not fit in the image")
    half = cfg.crop_side / 2.0
    rows = np.linspace(half, rcfg.height - half, cfg.grid)
    cols = np.linspace(half, rcfg.width - half, cfg.grid)
    out = []
    for r in rows:
        for c in cols:
            x, y = rcfg.pixel_to_world(r, c)
            for o in range(cfg.orientations):
                theta = o * np.pi / cfg.orientations
                out.append(GraspCandidate((r, c), o,
                                          GraspPose(x, y, theta, cfg.opening)))
    return out


def find_best_grasp(net, depth_image, render_cfg=None, config=None,
                    batch_size=64):
    """Score every candidate; returns (best, good list, all candidates)."""
    rcfg = render_cfg or RenderConfig()
    cfg = config or ScanConfig()
    cands = enumerate_candidates(rcfg, cfg)
    depth_in = np.empty((len(cands), cfg.crop_side, cfg.crop_side), np.float32)
    grip_in = np.empty_like(depth_in)
    for i, cand in enumerate(cands):
        depth_in[i], grip_in[i] = make_inputs(depth_image, cand.pose, rcfg,
                                              cfg.crop_side, cfg.height_range)
    ys = batch_scores(net, depth_in, grip_in, batch_size=batch_size)
    for cand, y in zip(cands, ys):
        cand.score = float(y)
    best_i = int(np.argmax(ys))  # argmax takes the first maximum: index tie-break
    good = [c for c in cands if c.score > cfg.good_threshold]
    return cands[best_i], good, cands


def overlay_image(depth_image, best, good, render_cfg=None, config=None):
    """Grayscale overlay: scene dimmed, good segments bright, best brightest."""
    rcfg = render_cfg or RenderConfig()
    cfg = config or ScanConfig()
    span = max(depth_image.floor_depth, 1e-9)
    img = ((1.0 - np.clip(depth_image.values / span, 0, 1)) * 128).astype(np.uint8)
    for cand, level in [(c, 200) for c in good if c is not best] + [(best, 255)]:
        seg = render_gripper_segment(cand.pose.x, cand.pose.y, cand.pose.theta,
                                     cand.pose.opening, rcfg)
        img[seg.values > 0] = level
    return img


def write_pgm8(path, img):
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def write_report(path, best, cands):
    rows = [{"x": c.pose.x, "y": c.pose.y, "theta": c.pose.theta,
             "opening": c.pose.opening, "orientation": c.orientation,
             "window": [float(c.window_center[0]), float(c.window_center[1])],
             "score": c.score} for c in cands]
    with open(path, "w") as fh:
        json.dump({"best": rows[cands.index(best)], "candidates": rows}, fh,
                  indent=2)
