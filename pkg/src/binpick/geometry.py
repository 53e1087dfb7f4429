"""Mesh loading and the approximate collision model.

The exact triangle mesh is kept for depth rendering.  For collision we
decompose the mesh into convex parts and fit an oriented box to each part;
only those boxes ever enter the contact solver.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DecompositionError, GeometryError, MeshFormatError
from .rotation import mat_to_quat, quat_to_mat

# Inflation tolerance for vertex-containment checks (meters).
CONTAINMENT_TOL = 1e-3
# A part counts as convex enough once its hull-vs-voxel volume deficit
# drops below this fraction of the hull volume.
_CONCAVITY_REL_TOL = 0.002
_DEGENERATE_AREA = 1e-12


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float, meters
    triangles: np.ndarray  # (T, 3) int
    name: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.intp)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3 or len(self.vertices) < 4:
            raise GeometryError("mesh needs at least 4 vertices of dimension 3")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise GeometryError("triangles must be index triples")
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= len(self.vertices):
            raise GeometryError("triangle index out of range")
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        if np.any(areas <= _DEGENERATE_AREA):
            raise GeometryError("degenerate triangle (area below 1e-12 m^2)")

    def triangle_corners(self):
        return (self.vertices[self.triangles[:, 0]],
                self.vertices[self.triangles[:, 1]],
                self.vertices[self.triangles[:, 2]])

    def volume(self):
        """Enclosed volume by the divergence theorem (consistent winding assumed)."""
        a, b, c = self.triangle_corners()
        return abs(np.sum(np.einsum("ij,ij->i", a, np.cross(b, c)))) / 6.0

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass
class ConvexPart:
    vertices: np.ndarray  # (V, 3) hull vertices only
    faces: list  # index lists into vertices

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)

    def hull_volume(self):
        return ConvexHull(self.vertices).volume


@dataclass
class FittedBox:
    center: np.ndarray  # (3,)
    half_extents: np.ndarray  # (3,) positive
    orientation: np.ndarray  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)
        if np.any(self.half_extents <= 0):
            raise GeometryError("box half-extents must be positive")
        if abs(np.linalg.norm(self.orientation) - 1.0) > 1e-9:
            raise GeometryError("box orientation must be a unit quaternion")

    def volume(self):
        return float(8.0 * np.prod(self.half_extents))

    def contains(self, pts, tol=0.0):
        local = (np.atleast_2d(pts) - self.center) @ quat_to_mat(self.orientation)
        return np.all(np.abs(local) <= self.half_extents + tol, axis=1)

    def corners(self):
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ quat_to_mat(self.orientation).T


@dataclass
class ApproxModel:
    source: str
    boxes: list  # of FittedBox
    part_count: int = field(default=0)

    def __post_init__(self):
        if self.part_count == 0:
            self.part_count = len(self.boxes)
        if self.part_count != len(self.boxes) or self.part_count < 1:
            raise GeometryError("part count must equal number of boxes and be >= 1")

    def total_volume(self):
        return sum(b.volume() for b in self.boxes)

    def contains(self, pts, tol=0.0):
        inside = np.zeros(len(np.atleast_2d(pts)), dtype=bool)
        for b in self.boxes:
            inside |= b.contains(pts, tol)
        return inside

    def to_json(self):
        return json.dumps({
            "source": self.source,
            "part_count": self.part_count,
            "boxes": [{
                "center": list(b.center),
                "half_extents": list(b.half_extents),
                "orientation": list(b.orientation),
            } for b in self.boxes],
        }, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        boxes = [FittedBox(np.array(b["center"]), np.array(b["half_extents"]),
                           np.array(b["orientation"])) for b in d["boxes"]]
        return cls(source=d["source"], boxes=boxes, part_count=d["part_count"])


def load_mesh(path):
    """Read the restricted OBJ subset (v and f records, triangular faces, 1-based)."""
    vertices = []
    faces = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fieldsv = line.split()
            tag = fieldsv[0]
            if tag == "v":
                if len(fieldsv) != 4:
                    raise MeshFormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in fieldsv[1:]])
                except ValueError as exc:
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex coordinate") from exc
            elif tag == "f":
                if len(fieldsv) != 4:
                    raise MeshFormatError(f"{path}:{lineno}: only triangular faces are supported")
                idx = []
                for tok in fieldsv[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError as exc:
                        raise MeshFormatError(f"{path}:{lineno}: bad face index {tok!r}") from exc
                    if i <= 0:
                        raise MeshFormatError(f"{path}:{lineno}: face indices are 1-based and positive")
                    idx.append(i - 1)
                faces.append(idx)
            else:
                raise MeshFormatError(f"{path}:{lineno}: unsupported record {tag!r}")
    name = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    try:
        return TriMesh(np.array(vertices, dtype=float), np.array(faces, dtype=np.intp), name=name)
    except GeometryError as exc:
        raise MeshFormatError(f"{path}: {exc}") from exc


def save_mesh(mesh, path):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def is_convex_mesh(mesh, tol=1e-7):
    """True when every vertex sits on the hull and the mesh fills its hull."""
    try:
        hull = ConvexHull(mesh.vertices)
    except QhullError:
        return False
    dist = mesh.vertices @ hull.equations[:, :3].T + hull.equations[:, 3]
    if dist.max() > tol:
        return False
    on_hull = np.abs(dist).min(axis=1) < tol
    if not on_hull.all():
        return False
    return abs(mesh.volume() - hull.volume) <= 1e-6 * max(hull.volume, 1e-30)


def _part_from_points(points):
    hull = ConvexHull(points)
    verts = points[hull.vertices]
    remap = {old: new for new, old in enumerate(hull.vertices)}
    faces = [[remap[i] for i in simplex] for simplex in hull.simplices]
    return ConvexPart(vertices=verts, faces=faces)


def _surface_samples(mesh, spacing):
    """Mesh vertices plus barycentric samples dense enough for the voxel pitch."""
    pts = [mesh.vertices]
    a, b, c = mesh.triangle_corners()
    edge = np.maximum(np.linalg.norm(b - a, axis=1),
                      np.maximum(np.linalg.norm(c - b, axis=1), np.linalg.norm(a - c, axis=1)))
    for t in range(len(a)):
        n = max(int(np.ceil(edge[t] / spacing)), 1)
        us = np.arange(n + 1) / n
        for i, u in enumerate(us):
            vs = np.arange(n + 1 - i) / n
            p = a[t] + u * (b[t] - a[t]) + vs[:, None] * (c[t] - a[t])
            pts.append(p)
    return np.vstack(pts)


def _voxel_occupancy(mesh, pitch):
    """Occupied cells: surface-touching cells plus interior fill by ray parity."""
    lo, hi = mesh.bounds()
    dims = np.maximum(np.ceil((hi - lo) / pitch).astype(int), 1)
    samples = _surface_samples(mesh, pitch * 0.5)
    cells = np.clip(((samples - lo) / pitch).astype(int), 0, dims - 1)
    surf = np.zeros(dims, dtype=bool)
    surf[cells[:, 0], cells[:, 1], cells[:, 2]] = True
    occ = surf.copy()

    a, b, c = mesh.triangle_corners()
    zs = lo[2] + (np.arange(dims[2]) + 0.5) * pitch
    for ix in range(dims[0]):
        cx = lo[0] + (ix + 0.5) * pitch
        for iy in range(dims[1]):
            cy = lo[1] + (iy + 0.5) * pitch
            hits = _column_hits(cx, cy, a, b, c)
            if len(hits) < 2:
                continue
            inside = np.zeros(dims[2], dtype=bool)
            for k in range(0, len(hits) - 1, 2):
                inside |= (zs > hits[k]) & (zs < hits[k + 1])
            occ[ix, iy, :] |= inside
    return occ, surf, lo, dims, samples, cells


def _column_hits(cx, cy, a, b, c):
    """Sorted z values where the vertical line (cx, cy) crosses triangles."""
    d0 = (b[:, 0] - a[:, 0]) * (cy - a[:, 1]) - (b[:, 1] - a[:, 1]) * (cx - a[:, 0])
    d1 = (c[:, 0] - b[:, 0]) * (cy - b[:, 1]) - (c[:, 1] - b[:, 1]) * (cx - b[:, 0])
    d2 = (a[:, 0] - c[:, 0]) * (cy - c[:, 1]) - (a[:, 1] - c[:, 1]) * (cx - c[:, 0])
    area = d0 + d1 + d2
    ok = np.abs(area) > 1e-18
    inside = ok & (((d0 >= 0) & (d1 >= 0) & (d2 >= 0)) | ((d0 <= 0) & (d1 <= 0) & (d2 <= 0)))
    if not inside.any():
        return np.empty(0)
    w = np.stack([d1[inside], d2[inside], d0[inside]], axis=1) / area[inside, None]
    z = (w[:, 0] * a[inside, 2] + w[:, 1] * b[inside, 2] + w[:, 2] * c[inside, 2])
    z = np.sort(z)
    # collapse duplicate crossings at shared edges
    keep = np.concatenate([[True], np.diff(z) > 1e-9])
    z = z[keep]
    if len(z) % 2 == 1:
        z = z[:-1]
    return z


class _Part:
    """Working state of one part during recursive splitting."""

    def __init__(self, cell_ids, points, pitch, cell_weight):
        self.cell_ids = cell_ids  # (N, 3) int cells
        self.points = points  # surface samples + interior cell centers
        self.pitch = pitch
        self.cell_weight = cell_weight  # 1.0 interior, 0.5 surface-touching
        self.hull_volume = _safe_hull_volume(points)
        vox = float(cell_weight.sum()) * pitch ** 3
        self.deficit = max(self.hull_volume - vox, 0.0)

    def splittable(self):
        if self.hull_volume <= 0 or len(self.points) < 8:
            return False
        return self.deficit > _CONCAVITY_REL_TOL * self.hull_volume


def _safe_hull_volume(points):
    if len(points) < 4:
        return 0.0
    try:
        return ConvexHull(points).volume
    except QhullError:
        return 0.0


def decompose(mesh, target_parts, pitch=None):
    """Approximate convex decomposition by recursive axis-aligned plane splits.

    Splits the part with the largest hull-vs-occupancy volume deficit along
    the plane minimizing the children's total hull volume, until target_parts
    is reached or every part is convex enough.
    """
    if target_parts < 1:
        raise DecompositionError("target_parts must be >= 1")
    if is_convex_mesh(mesh):
        return [_part_from_points(mesh.vertices)]

    lo, hi = mesh.bounds()
    if pitch is None:
        pitch = float(np.max(hi - lo)) / 24.0
    occ, surf, origin, dims, samples, sample_cells = _voxel_occupancy(mesh, pitch)
    cells = np.argwhere(occ)
    if len(cells) == 0:
        raise DecompositionError("voxelization produced no occupied cells (non-manifold input?)")

    centers = origin + (cells + 0.5) * pitch
    # surface-touching cells are only partially full; half-weight them when
    # estimating occupied volume so the concavity stop is not biased
    weights = np.where(surf[cells[:, 0], cells[:, 1], cells[:, 2]], 0.5, 1.0)
    cell_key = {tuple(c): i for i, c in enumerate(cells)}
    sample_part = np.array([cell_key.get(tuple(c), -1) for c in sample_cells])

    def make_part(mask_cells):
        sel = np.array([cell_key[tuple(c)] for c in mask_cells])
        pts = [centers[sel]]
        pick = np.isin(sample_part, sel)
        if pick.any():
            pts.append(samples[pick])
        return _Part(mask_cells, np.vstack(pts), pitch, weights[sel])

    parts = [make_part(cells)]
    while len(parts) < target_parts:
        order = sorted(range(len(parts)), key=lambda i: -parts[i].deficit)
        split_done = False
        for pi in order:
            part = parts[pi]
            if not part.splittable():
                break
            best = _best_split(part)
            if best is None:
                continue
            left_cells, right_cells = best
            parts.pop(pi)
            parts.append(make_part(left_cells))
            parts.append(make_part(right_cells))
            split_done = True
            break
        if not split_done:
            break

    out = []
    for part in parts:
        if len(part.points) < 4 or part.hull_volume <= 0:
            raise DecompositionError("degenerate part produced during splitting")
        out.append(_part_from_points(part.points))
    return out


def _best_split(part):
    """Axis-aligned split of a part's cells minimizing total child hull volume."""
    cells = part.cell_ids
    pitch = part.pitch
    best_cost, best = np.inf, None
    for axis in range(3):
        lo_c, hi_c = cells[:, axis].min(), cells[:, axis].max()
        if hi_c - lo_c < 1:
            continue
        cuts = np.unique(np.linspace(lo_c + 1, hi_c, num=min(9, hi_c - lo_c + 1)).astype(int))
        for cut in cuts:
            left = cells[cells[:, axis] < cut]
            right = cells[cells[:, axis] >= cut]
            if len(left) == 0 or len(right) == 0:
                continue
            clv = _safe_hull_volume((left + 0.5) * pitch)
            crv = _safe_hull_volume((right + 0.5) * pitch)
            if clv <= 0 or crv <= 0:
                continue
            cost = clv + crv
            if cost < best_cost - 1e-15:
                best_cost, best = cost, (left, right)
    return best


def fit_box(part):
    """Minimum-volume oriented box over candidate orientations.

    Candidates: one frame per hull face normal with the in-plane rotation
    chosen by a 2D minimum-area rectangle, plus the covariance principal
    frame.  Exact for box-shaped parts at any orientation.
    """
    pts = np.asarray(part.vertices, dtype=float)
    hull = ConvexHull(pts)
    normals = hull.equations[:, :3]
    # dedupe near-parallel normals for speed
    seen = []
    for n in normals:
        n = n / np.linalg.norm(n)
        if not any(abs(n @ m) > 1 - 1e-9 for m in seen):
            seen.append(n)

    best_vol, best = np.inf, None
    for n in seen:
        frame = _frame_from_normal(n, pts)
        vol, box = _box_in_frame(pts, frame)
        if vol < best_vol:
            best_vol, best = vol, box
    pca = _pca_frame(pts)
    vol, box = _box_in_frame(pts, pca)
    if vol < best_vol:
        best_vol, best = vol, box
    return best


def _pca_frame(pts):
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    if np.linalg.det(vecs) < 0:
        vecs[:, 0] = -vecs[:, 0]
    return vecs


def _frame_from_normal(n, pts):
    """Orthonormal frame with z = n; in-plane axes from min-area rectangle."""
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, ref)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    p2 = np.stack([pts @ u, pts @ v], axis=1)
    ang = _min_area_rect_angle(p2)
    ca, sa = np.cos(ang), np.sin(ang)
    a0 = ca * u + sa * v
    a1 = -sa * u + ca * v
    return np.stack([a0, a1, n], axis=1)


def _min_area_rect_angle(p2):
    try:
        hull2 = ConvexHull(p2)
    except QhullError:
        return 0.0
    hp = p2[hull2.vertices]
    edges = np.roll(hp, -1, axis=0) - hp
    angles = np.arctan2(edges[:, 1], edges[:, 0]) % (np.pi / 2)
    best_area, best_ang = np.inf, 0.0
    for ang in np.unique(angles):
        ca, sa = np.cos(ang), np.sin(ang)
        x = hp[:, 0] * ca + hp[:, 1] * sa
        y = -hp[:, 0] * sa + hp[:, 1] * ca
        area = (x.max() - x.min()) * (y.max() - y.min())
        if area < best_area:
            best_area, best_ang = area, ang
    return best_ang


def _box_in_frame(pts, frame):
    local = pts @ frame
    lo, hi = local.min(axis=0), local.max(axis=0)
    half = np.maximum((hi - lo) / 2.0, 1e-9)
    center = frame @ ((hi + lo) / 2.0)
    box = FittedBox(center=center, half_extents=half, orientation=mat_to_quat(frame))
    return box.volume(), box


def build_approx_model(mesh, target_parts, pitch=None):
    parts = decompose(mesh, target_parts, pitch=pitch)
    boxes = [fit_box(p) for p in parts]
    return ApproxModel(source=mesh.name, boxes=boxes, part_count=len(boxes))
