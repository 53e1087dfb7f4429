"""Top-down orthographic depth rendering and the gripper segment image.

Depth comes from the EXACT triangle meshes, never from the collision boxes;
the gap between the two renders on curved parts is load-bearing for the
approximation experiments.
"""

from dataclasses import dataclass, field

import numpy as np

from .backend import get_kernels
from .errors import GeometryError


@dataclass
class RenderConfig:
    width: int = 128
    height: int = 128
    pixel_size: float = 0.20 / 128.0  # m/pixel, tray fills the frame
    sensor_z: float = 1.0             # absolute z of the sensor plane
    floor_z: float = 0.0
    center_xy: tuple = (0.0, 0.0)

    @property
    def x0(self):
        return self.center_xy[0] - 0.5 * self.width * self.pixel_size

    @property
    def y0(self):
        return self.center_xy[1] - 0.5 * self.height * self.pixel_size

    def world_to_pixel(self, x, y):
        """(x, y) in metres -> fractional (row, col)."""
        col = (x - self.x0) / self.pixel_size - 0.5
        row = (y - self.y0) / self.pixel_size - 0.5
        return row, col

    def pixel_to_world(self, row, col):
        x = self.x0 + (col + 0.5) * self.pixel_size
        y = self.y0 + (row + 0.5) * self.pixel_size
        return x, y


@dataclass
class DepthImage:
    values: np.ndarray          # (H, W) float32, metres from the sensor plane
    pixel_size: float
    sensor_z: float
    floor_z: float

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def floor_depth(self):
        return self.sensor_z - self.floor_z

    def height_map(self, height_range=0.15):
        """Normalized [0, 1] height-above-floor map fed to the network."""
        hm = (self.floor_depth - self.values) / height_range
        return np.clip(hm, 0.0, 1.0).astype(np.float32)

    def to_pgm(self, path):
        """16-bit PGM scaled over the [0, floor_depth] depth span."""
        span = max(self.floor_depth, 1e-9)
        img = np.clip(self.values / span, 0.0, 1.0)
        data = (img * 65535.0 + 0.5).astype(">u2")
        with open(path, "wb") as fh:
            fh.write(f"P5\n{self.width} {self.height}\n65535\n".encode())
            fh.write(data.tobytes())


@dataclass
class GripperPoseImage:
    values: np.ndarray          # (H, W) uint8, 0 or 1

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


def mesh_world_triangles(mesh, pos, rot):
    """Triangle vertex arrays (n,3)x3 of a posed mesh."""
    v = mesh.vertices @ rot.T + pos
    f = mesh.triangles
    return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]


_BOX_CORNER_SIGNS = np.array(
    [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
    dtype=float)
# 12 triangles over the 8 corners indexed by the sign table above
_BOX_FACES = np.array([
    [0, 1, 3], [0, 3, 2],
    [4, 6, 7], [4, 7, 5],
    [0, 4, 5], [0, 5, 1],
    [2, 3, 7], [2, 7, 6],
    [0, 2, 6], [0, 6, 4],
    [1, 5, 7], [1, 7, 3],
], dtype=np.intp)


def box_triangles(center, rot, half):
    """Triangle vertex arrays of one oriented box (12 triangles)."""
    corners = (_BOX_CORNER_SIGNS * half) @ rot.T + center
    f = _BOX_FACES
    return corners[f[:, 0]], corners[f[:, 1]], corners[f[:, 2]]


def render_depth(items, config=None, backend=None):
    """Render a top-down orthographic depth image.

    items: iterable of either (mesh, pos, rot) triples or pre-built
    (v0, v1, v2) triangle arrays.  Misses read the tray floor.
    """
    cfg = config or RenderConfig()
    kr = get_kernels(backend)
    hmap = np.full((cfg.height, cfg.width), cfg.floor_z, dtype=float)
    for item in items:
        if len(item) == 3 and hasattr(item[0], "vertices"):
            v0, v1, v2 = mesh_world_triangles(*item)
        else:
            v0, v1, v2 = item
        part = kr.render_heightmap(cfg.x0, cfg.y0, cfg.pixel_size,
                                   cfg.width, cfg.height,
                                   np.ascontiguousarray(v0, dtype=float),
                                   np.ascontiguousarray(v1, dtype=float),
                                   np.ascontiguousarray(v2, dtype=float),
                                   cfg.floor_z)
        np.maximum(hmap, part, out=hmap)
    depth = (cfg.sensor_z - hmap).astype(np.float32)
    return DepthImage(depth, cfg.pixel_size, cfg.sensor_z, cfg.floor_z)


def render_world_depth(world, config=None, backend=None):
    """Depth image of every dynamic body in a physics world (exact meshes).

    Bodies without an attached mesh fall back to their collision boxes.
    """
    items = []
    for b in world.dynamic_bodies():
        if b.mesh is not None:
            items.append((b.mesh, b.pos, b.rotation()))
        else:
            for c, r, h in zip(*b.world_shapes()):
                items.append(box_triangles(c, r, h))
    return render_depth(items, config=config, backend=backend)


def render_model_depth(world, config=None, backend=None):
    """Depth image using the fitted-box collision shapes instead of meshes."""
    items = []
    for b in world.dynamic_bodies():
        for c, r, h in zip(*b.world_shapes()):
            items.append(box_triangles(c, r, h))
    return render_depth(items, config=config, backend=backend)


def render_gripper_segment(x, y, theta, width, config=None, thickness_px=3.0):
    """Binary image of the finger-to-finger segment for the pose channel."""
    cfg = config or RenderConfig()
    u = np.array([np.cos(theta), np.sin(theta)])
    p0 = np.array([x, y]) - 0.5 * width * u
    p1 = np.array([x, y]) + 0.5 * width * u
    r0, c0 = cfg.world_to_pixel(*p0)
    r1, c1 = cfg.world_to_pixel(*p1)
    # fingers may overhang the frame near the tray edge (the raster clips
    # naturally); only the grasp centre must be in view
    rc, cc = cfg.world_to_pixel(x, y)
    if not (-0.5 <= rc <= cfg.height - 0.5 and -0.5 <= cc <= cfg.width - 0.5):
        raise GeometryError("gripper pose projects outside the image")
    rows, cols = np.mgrid[0:cfg.height, 0:cfg.width].astype(float)
    d = np.array([r1 - r0, c1 - c0])
    l2 = d @ d
    if l2 < 1e-12:
        inside = np.hypot(rows - r0, cols - c0) <= thickness_px / 2.0
    else:
        # no end caps: a pixel must project onto the segment proper, so the
        # rasterized length matches round(width / pixel_size) for axis-aligned
        # poses
        t = ((rows - r0) * d[0] + (cols - c0) * d[1]) / l2
        dist = np.hypot(rows - (r0 + t * d[0]), cols - (c0 + t * d[1]))
        inside = (t >= 0.0) & (t <= 1.0) & (dist <= thickness_px / 2.0)
    img = inside.astype(np.uint8)
    return GripperPoseImage(img)


def crop(image, center_rc, side):
    """Square crop centred at pixel (row, col); out-of-frame area reads as floor."""
    if side > min(image.height, image.width):
        raise GeometryError("crop side exceeds image size")
    r0 = int(round(center_rc[0])) - side // 2
    c0 = int(round(center_rc[1])) - side // 2
    out = np.full((side, side), image.floor_depth, dtype=np.float32)
    rs, re = max(r0, 0), min(r0 + side, image.height)
    cs, ce = max(c0, 0), min(c0 + side, image.width)
    if rs < re and cs < ce:
        out[rs - r0:re - r0, cs - c0:ce - c0] = image.values[rs:re, cs:ce]
    return DepthImage(out, image.pixel_size, image.sensor_z, image.floor_z)
