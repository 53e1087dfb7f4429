import numpy as np
import pytest

from binpick.errors import (DecompositionError, GeometryError, MeshFormatError)
from binpick.geometry import (ApproxModel, CONTAINMENT_TOL, FittedBox, TriMesh,
                              build_approx_model, decompose, fit_box,
                              is_convex_mesh, load_mesh, save_mesh)
from binpick.rotation import quat_from_axis_angle, rotate_points
from binpick.trials import ASSET_NAMES, load_asset

from conftest import make_box_mesh


# -- TriMesh ----------------------------------------------------------------

def test_trimesh_volume_oracle(box_mesh):
    # analytic box volume 0.04 * 0.03 * 0.02
    assert np.isclose(box_mesh.volume(), 0.04 * 0.03 * 0.02, rtol=1e-12)


def test_trimesh_rejects_bad_input():
    with pytest.raises(GeometryError):
        TriMesh(np.zeros((3, 3)), np.zeros((1, 3), dtype=int))  # too few verts
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    with pytest.raises(GeometryError):
        TriMesh(v, np.array([[0, 1, 5]]))  # index out of range
    with pytest.raises(GeometryError):
        TriMesh(v, np.array([[0, 1, 1]]))  # degenerate triangle


def test_obj_roundtrip(tmp_path, box_mesh):
    path = tmp_path / "box.obj"
    save_mesh(box_mesh, path)
    back = load_mesh(path)
    assert np.allclose(back.vertices, box_mesh.vertices)
    assert np.array_equal(back.triangles, box_mesh.triangles)
    assert back.name == "box"


@pytest.mark.parametrize("content,msg", [
    ("v 0 0\n", "3 coordinates"),
    ("v a b c\n", "bad vertex"),
    ("f 1 2 3 4\n", "triangular"),
    ("f 0 1 2\n", "1-based"),
    ("f x 1 2\n", "bad face"),
    ("vn 0 0 1\n", "unsupported record"),
])
def test_obj_errors(tmp_path, content, msg):
    path = tmp_path / "bad.obj"
    path.write_text(content)
    with pytest.raises(MeshFormatError, match=msg):
        load_mesh(path)


def test_is_convex_mesh(box_mesh):
    assert is_convex_mesh(box_mesh)
    lmesh, _ = load_asset("lprism", 1)
    assert not is_convex_mesh(lmesh)


# -- FittedBox / ApproxModel ------------------------------------------------

def test_fitted_box_validation():
    with pytest.raises(GeometryError):
        FittedBox(np.zeros(3), np.array([0.0, 1, 1]), np.array([1.0, 0, 0, 0]))
    with pytest.raises(GeometryError):
        FittedBox(np.zeros(3), np.ones(3), np.array([2.0, 0, 0, 0]))


def test_fitted_box_contains_and_corners():
    box = FittedBox(np.array([1.0, 0, 0]), np.array([0.5, 0.5, 0.5]),
                    quat_from_axis_angle([0, 0, 1], np.pi / 4))
    assert box.contains(np.array([[1.0, 0.0, 0.0]]))[0]
    # corner of the rotated box along x reaches 1 + sqrt(2)/2
    assert not box.contains(np.array([[1.0 + 0.72, 0.0, 0.0]]))[0]
    assert box.contains(np.array([[1.0 + 0.70, 0.0, 0.0]]))[0]
    assert box.corners().shape == (8, 3)
    assert np.isclose(box.volume(), 1.0)


def test_approx_model_json_roundtrip(box_mesh):
    model = build_approx_model(box_mesh, 3)
    back = ApproxModel.from_json(model.to_json())
    assert back.part_count == model.part_count
    for a, b in zip(model.boxes, back.boxes):
        assert np.allclose(a.center, b.center)
        assert np.allclose(a.half_extents, b.half_extents)
        assert np.allclose(a.orientation, b.orientation)


# -- fit_box oracles --------------------------------------------------------

def test_fit_box_axis_aligned_exact(box_mesh):
    parts = decompose(box_mesh, 1)
    box = fit_box(parts[0])
    assert np.allclose(np.sort(box.half_extents), [0.01, 0.015, 0.02], atol=1e-9)
    assert np.allclose(box.center, [0, 0, 0], atol=1e-9)


def test_fit_box_rotated_box_exact():
    # box rotated by an arbitrary rotation must still be recovered exactly
    mesh = make_box_mesh(half=(0.03, 0.02, 0.01))
    q = quat_from_axis_angle([1.0, 2.0, 3.0], 0.9)
    mesh = TriMesh(rotate_points(q, mesh.vertices), mesh.triangles)
    box = fit_box(decompose(mesh, 1)[0])
    assert np.isclose(box.volume(), 8 * 0.03 * 0.02 * 0.01, rtol=1e-6)
    assert np.allclose(np.sort(box.half_extents), [0.01, 0.02, 0.03], atol=1e-7)


# -- decomposition ----------------------------------------------------------

def test_cube_decomposes_to_one_part():
    mesh, model = load_asset("cube", 10)
    assert model.part_count == 1


def test_decompose_target_parts_respected():
    mesh, _ = load_asset("lprism", 1)
    parts = decompose(mesh, 2)
    assert len(parts) == 2


def test_decompose_rejects_bad_target(box_mesh):
    with pytest.raises(DecompositionError):
        decompose(box_mesh, 0)


@pytest.mark.parametrize("name", ASSET_NAMES)
def test_asset_containment(name):
    mesh, model = load_asset(name, 1)
    assert model.contains(mesh.vertices, tol=CONTAINMENT_TOL).all()


@pytest.mark.parametrize("name", ["lprism", "workpiece"])
def test_asset_containment_multi_part(name):
    mesh, model = load_asset(name, 5)
    assert model.contains(mesh.vertices, tol=CONTAINMENT_TOL).all()
    assert model.part_count <= 5


def test_model_volume_not_absurd():
    # fitted boxes cover the shape; the union bound should stay within a
    # small factor of the true volume for every shipped asset
    for name in ASSET_NAMES:
        mesh, model = load_asset(name, 1)
        assert model.total_volume() >= mesh.volume() * 0.99
        assert model.total_volume() <= mesh.volume() * 3.0
