import numpy as np
import pytest

from binpick.errors import GeometryError
from binpick.physics import DYNAMIC, RigidBody, World
from binpick.render import (DepthImage, RenderConfig, box_triangles, crop,
                            render_depth, render_gripper_segment,
                            render_model_depth, render_world_depth)
from binpick.rotation import quat_from_axis_angle
from binpick.trials import load_asset


def analytic_box_depth(cfg, center, half):
    """Expected depth for one axis-aligned box: top face where the pixel
    centre is inside the footprint, floor elsewhere."""
    vals = np.full((cfg.height, cfg.width), cfg.sensor_z - cfg.floor_z)
    cols = cfg.x0 + (np.arange(cfg.width) + 0.5) * cfg.pixel_size
    rows = cfg.y0 + (np.arange(cfg.height) + 0.5) * cfg.pixel_size
    in_x = np.abs(cols - center[0]) <= half[0]
    in_y = np.abs(rows - center[1]) <= half[1]
    top = center[2] + half[2]
    vals[np.ix_(in_y, in_x)] = cfg.sensor_z - top
    return vals.astype(np.float32)


def test_pixel_mapping_roundtrip():
    cfg = RenderConfig()
    for x, y in [(0.0, 0.0), (0.031, -0.044), (-0.09, 0.09)]:
        r, c = cfg.world_to_pixel(x, y)
        x2, y2 = cfg.pixel_to_world(r, c)
        assert np.isclose(x2, x, atol=1e-12) and np.isclose(y2, y, atol=1e-12)


def test_axis_aligned_box_matches_analytic():
    cfg = RenderConfig()
    center = np.array([0.01, -0.02, 0.02])
    half = np.array([0.03, 0.02, 0.02])
    img = render_depth([box_triangles(center, np.eye(3), half)], cfg)
    expect = analytic_box_depth(cfg, center, half)
    assert np.abs(img.values - expect).max() <= 1e-6


def test_render_takes_max_over_items():
    cfg = RenderConfig()
    lo = box_triangles(np.array([0, 0, 0.01]), np.eye(3), np.array([0.05, 0.05, 0.01]))
    hi = box_triangles(np.array([0, 0, 0.03]), np.eye(3), np.array([0.02, 0.02, 0.03]))
    img = render_depth([lo, hi], cfg)
    r, c = cfg.world_to_pixel(0.0, 0.0)
    assert np.isclose(img.values[int(r), int(c)], cfg.sensor_z - 0.06, atol=1e-9)
    r, c = cfg.world_to_pixel(0.04, 0.0)
    assert np.isclose(img.values[int(r), int(c)], cfg.sensor_z - 0.02, atol=1e-9)


def test_height_map_normalization():
    cfg = RenderConfig()
    img = render_depth([box_triangles(np.array([0, 0, 0.03]), np.eye(3),
                                      np.array([0.02, 0.02, 0.03]))], cfg)
    hm = img.height_map(0.15)
    assert hm.dtype == np.float32
    assert hm.min() == 0.0
    assert np.isclose(hm.max(), 0.06 / 0.15, atol=1e-6)


def test_exact_vs_box_model_renders_differ_on_curved_shape():
    # the load-bearing approximation gap: a hexagonal prism's fitted box
    # overhangs its sloped sides, so the two renders must disagree
    mesh, model = load_asset("hexprism", 1)
    world = World()
    top = float(mesh.bounds()[1][2] - mesh.bounds()[0][2])
    world.add_body(RigidBody.from_approx_model("p", model, mesh=mesh,
                                               pos=np.array([0, 0, top / 2 + 0.0005])))
    world.settle(500)
    exact = render_world_depth(world)
    boxed = render_model_depth(world)
    obj = (exact.values < exact.floor_depth - 1e-6) | \
          (boxed.values < boxed.floor_depth - 1e-6)
    differing = np.abs(exact.values - boxed.values) > 1e-6
    assert obj.sum() > 0
    assert differing[obj].sum() / obj.sum() > 0.01


def test_exact_vs_box_model_agree_on_cube():
    mesh, model = load_asset("cube", 1)
    world = World()
    world.add_body(RigidBody.from_approx_model("c", model, mesh=mesh,
                                               pos=np.array([0, 0, 0.016])))
    exact = render_world_depth(world)
    boxed = render_model_depth(world)
    assert np.abs(exact.values - boxed.values).max() <= 1e-5


def test_to_pgm(tmp_path):
    cfg = RenderConfig(width=16, height=16)
    img = DepthImage(np.full((16, 16), 0.5, np.float32), cfg.pixel_size,
                     cfg.sensor_z, cfg.floor_z)
    p = tmp_path / "d.pgm"
    img.to_pgm(p)
    data = p.read_bytes()
    assert data.startswith(b"P5\n16 16\n65535\n")
    pix = np.frombuffer(data.split(b"65535\n", 1)[1], dtype=">u2")
    assert len(pix) == 256
    assert np.all(pix == int(0.5 * 65535 + 0.5))


# -- gripper segment --------------------------------------------------------

def test_segment_length_matches_opening():
    cfg = RenderConfig()
    seg = render_gripper_segment(0.0, 0.0, 0.0, 0.05, cfg)
    cols = np.where(seg.values.any(axis=0))[0]
    length = cols[-1] - cols[0] + 1
    assert length == round(0.05 / cfg.pixel_size)
    # theta=0 runs along x: a single horizontal bar of the raster thickness
    rows = np.where(seg.values.any(axis=1))[0]
    assert len(rows) <= 4


def test_segment_rotation_symmetry():
    cfg = RenderConfig()
    a = render_gripper_segment(0.0, 0.0, 0.0, 0.05, cfg).values
    b = render_gripper_segment(0.0, 0.0, np.pi / 2, 0.05, cfg).values
    assert a.sum() == b.sum()
    assert np.array_equal(np.ascontiguousarray(a[::-1, :].T), b)


def test_segment_center_outside_raises():
    cfg = RenderConfig()
    with pytest.raises(GeometryError):
        render_gripper_segment(0.3, 0.0, 0.0, 0.05, cfg)


def test_segment_overhang_clips_without_error():
    cfg = RenderConfig()
    # centre near the frame edge; one finger projects outside and is clipped
    seg = render_gripper_segment(0.095, 0.0, 0.0, 0.07, cfg)
    assert seg.values.sum() > 0


# -- crop -------------------------------------------------------------------

def test_crop_center_identity():
    cfg = RenderConfig()
    vals = np.arange(128 * 128, dtype=np.float32).reshape(128, 128)
    img = DepthImage(vals, cfg.pixel_size, cfg.sensor_z, cfg.floor_z)
    out = crop(img, (64, 64), 64)
    assert np.array_equal(out.values, vals[32:96, 32:96])


def test_crop_pads_with_floor():
    cfg = RenderConfig()
    vals = np.zeros((128, 128), np.float32)
    img = DepthImage(vals, cfg.pixel_size, cfg.sensor_z, cfg.floor_z)
    out = crop(img, (0, 0), 64)
    assert np.all(out.values[:32, :] == img.floor_depth)
    assert np.all(out.values[32:, 32:] == 0.0)


def test_crop_too_large_raises():
    cfg = RenderConfig()
    img = DepthImage(np.zeros((32, 32), np.float32), cfg.pixel_size,
                     cfg.sensor_z, cfg.floor_z)
    with pytest.raises(GeometryError):
        crop(img, (16, 16), 64)
