import json

import numpy as np
import pytest

from binpick.errors import GeometryError
from binpick.grasp import (GraspCandidate, ScanConfig, discriminate,
                           enumerate_candidates, find_best_grasp, make_inputs,
                           overlay_image, write_pgm8, write_report)
from binpick.nn import NetConfig, Network
from binpick.render import DepthImage, RenderConfig, box_triangles, render_depth
from binpick.trials import GraspPose


def _scene_image():
    cfg = RenderConfig()
    return render_depth([box_triangles(np.array([0.0, 0.0, 0.02]), np.eye(3),
                                       np.array([0.03, 0.02, 0.02]))], cfg), cfg


class _StubNet:
    """Scores candidates by how bright the depth crop centre is."""

    config = NetConfig()

    def forward(self, depth, grip, train=False, want_cache=False):
        depth = np.asarray(depth)
        single = depth.ndim == 2
        if single:
            depth = depth[None]
        y0 = np.clip(depth[:, depth.shape[1] // 2, depth.shape[2] // 2], 0.0, 1.0)
        probs = np.stack([y0, 1.0 - y0], axis=1)
        return probs[0] if single else probs


def test_candidate_count_default_is_288():
    cands = enumerate_candidates()
    assert len(cands) == 288  # 6x6 windows x 8 orientations


def test_candidate_enumeration_order_and_poses():
    rcfg = RenderConfig()
    cands = enumerate_candidates(rcfg, ScanConfig())
    # row-major windows, orientation fastest
    assert cands[0].window_center == (32.0, 32.0)
    assert cands[1].window_center == (32.0, 32.0)
    assert cands[0].orientation == 0 and cands[1].orientation == 1
    assert np.isclose(cands[1].pose.theta, np.pi / 8)
    # window centres map back to their pixel positions
    for c in cands[::48]:
        r, col = rcfg.world_to_pixel(c.pose.x, c.pose.y)
        assert np.isclose(r, c.window_center[0], atol=1e-9)
        assert np.isclose(col, c.window_center[1], atol=1e-9)


def test_candidate_grid_spans_image():
    cands = enumerate_candidates(RenderConfig(), ScanConfig())
    rows = sorted({c.window_center[0] for c in cands})
    assert rows[0] == 32.0 and rows[-1] == 96.0
    assert len(rows) == 6


def test_grid_too_big_raises():
    with pytest.raises(GeometryError):
        enumerate_candidates(RenderConfig(width=4, height=4), ScanConfig())


def test_make_inputs_shapes_and_ranges():
    img, cfg = _scene_image()
    d, g = make_inputs(img, GraspPose(0.0, 0.0, 0.3), cfg)
    assert d.shape == (64, 64) and g.shape == (64, 64)
    assert d.dtype == np.float32
    assert 0.0 <= d.min() and d.max() <= 1.0
    assert set(np.unique(g)) <= {0.0, 1.0}
    assert g.sum() > 0
    # the object sits under the window centre: height > 0 there
    assert d[32, 32] > 0


def test_make_inputs_segment_centred():
    img, cfg = _scene_image()
    _, g = make_inputs(img, GraspPose(0.05, -0.05, 0.0), cfg)
    rows, cols = np.nonzero(g)
    assert abs(rows.mean() - 31.5) < 2.5
    assert abs(cols.mean() - 31.5) < 2.5


def test_discriminate_threshold():
    img, cfg = _scene_image()
    net = _StubNet()
    y0, verdict = discriminate(net, img, GraspPose(0.0, 0.0, 0.0), cfg)
    assert verdict == (y0 > 0.5)


def test_find_best_grasp_prefers_object():
    img, cfg = _scene_image()
    best, good, cands = find_best_grasp(_StubNet(), img, cfg)
    assert len(cands) == 288
    # stub scores the object centre highest: best window over the box
    assert abs(best.pose.x) < 0.04 and abs(best.pose.y) < 0.04
    assert best.score == max(c.score for c in cands)
    for g in good:
        assert g.score > 0.9


def test_find_best_grasp_tie_break_first_index():
    class Flat:
        config = NetConfig()

        def forward(self, depth, grip, train=False, want_cache=False):
            n = np.atleast_3d(depth).shape[0]
            return np.full((n, 2), 0.5)

    img, cfg = _scene_image()
    best, good, cands = find_best_grasp(Flat(), img, cfg)
    assert best is cands[0]
    assert good == []


def test_overlay_and_report(tmp_path):
    img, cfg = _scene_image()
    best, good, cands = find_best_grasp(_StubNet(), img, cfg)
    over = overlay_image(img, best, good, cfg)
    assert over.shape == (128, 128) and over.dtype == np.uint8
    assert over.max() == 255          # the best segment is brightest
    p = tmp_path / "o.pgm"
    write_pgm8(p, over)
    assert p.read_bytes().startswith(b"P5\n128 128\n255\n")
    rpath = tmp_path / "r.json"
    write_report(rpath, best, cands)
    rep = json.loads(rpath.read_text())
    assert len(rep["candidates"]) == 288
    assert rep["best"]["score"] == best.score
