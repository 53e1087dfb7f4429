import numpy as np
import pytest

from binpick.geometry import TriMesh


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_box_mesh(half=(0.02, 0.015, 0.01), center=(0.0, 0.0, 0.0)):
    """Axis-aligned box TriMesh with outward-facing winding."""
    hx, hy, hz = half
    cx, cy, cz = center
    signs = [(sx, sy, sz) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    verts = np.array([[cx + sx * hx, cy + sy * hy, cz + sz * hz]
                      for sx, sy, sz in signs])
    tris = np.array([
        [0, 1, 3], [0, 3, 2],
        [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1],
        [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4],
        [1, 5, 7], [1, 7, 3],
    ])
    return TriMesh(verts, tris, name="box")


@pytest.fixture
def box_mesh():
    return make_box_mesh()
