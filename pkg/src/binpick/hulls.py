"""Exact convex-hull contact generation (reference mode for the sweep).

Separating-axis test over hull face normals plus edge-direction cross
products, with a support-polygon clip for the manifold.  Pure python: this
path exists to compare against the fitted-box approximation, not for speed.
"""

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import decompose


class ConvexShape:
    """Precomputed convex hull: vertices, unique face normals, edge dirs."""

    def __init__(self, points):
        points = np.asarray(points, dtype=float)
        hull = ConvexHull(points)
        self.vertices = points[hull.vertices]
        normals = hull.equations[:, :3]
        self.face_normals = _unique_directions(normals, signed=True)
        edges = set()
        for simplex in hull.simplices:
            for a, b in ((0, 1), (1, 2), (2, 0)):
                e = tuple(sorted((simplex[a], simplex[b])))
                edges.add(e)
        dirs = np.array([points[b] - points[a] for a, b in edges])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        self.edge_dirs = _unique_directions(dirs, signed=False)


def _unique_directions(dirs, signed, tol=1e-6):
    out = []
    for d in dirs:
        n = np.linalg.norm(d)
        if n < 1e-12:
            continue
        d = d / n
        dup = False
        for e in out:
            dot = d @ e
            if dot > 1 - tol or (not signed and dot < -(1 - tol)):
                dup = True
                break
        if not dup:
            out.append(d)
    return np.array(out)


def convex_parts_for_mesh(mesh, target_parts):
    """ConvexShape list for a mesh's decomposition (body-local frame)."""
    return [ConvexShape(p.vertices) for p in decompose(mesh, target_parts)]


def box_shape(half):
    """A box as a ConvexShape (for mixing hulls with box-shaped bodies)."""
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1)
                        for sz in (-1, 1)], dtype=float) * half
    return ConvexShape(corners)


def hull_contact(shape_a, pos_a, rot_a, shape_b, pos_b, rot_b):
    """Contact manifold between two posed convex shapes.

    Returns (points (k,3), normal A->B, depths (k,)) or None.
    """
    pa = shape_a.vertices @ rot_a.T + pos_a
    pb = shape_b.vertices @ rot_b.T + pos_b
    axes = [shape_a.face_normals @ rot_a.T, shape_b.face_normals @ rot_b.T]
    ea = shape_a.edge_dirs @ rot_a.T
    eb = shape_b.edge_dirs @ rot_b.T
    cross = np.cross(ea[:, None, :], eb[None, :, :]).reshape(-1, 3)
    norms = np.linalg.norm(cross, axis=1)
    keep = norms > 1e-8
    if keep.any():
        axes.append(cross[keep] / norms[keep, None])
    axes = np.vstack(axes)

    n_face = len(shape_a.face_normals) + len(shape_b.face_normals)
    proj_a = pa @ axes.T            # (na, m)
    proj_b = pb @ axes.T
    min_a, max_a = proj_a.min(axis=0), proj_a.max(axis=0)
    min_b, max_b = proj_b.min(axis=0), proj_b.max(axis=0)
    overlap = np.minimum(max_a, max_b) - np.maximum(min_a, min_b)
    if (overlap < 0).any():
        return None
    # prefer face axes over edge-cross axes (manifold stability, same idea as
    # the box kernel's fudge factor)
    best = int(np.argmin(overlap[:n_face]))
    if len(overlap) > n_face:
        best_edge = n_face + int(np.argmin(overlap[n_face:]))
        if overlap[best_edge] < 0.95 * overlap[best] - 1e-6:
            best = best_edge
    depth = float(overlap[best])
    n = axes[best]
    if (pb.mean(axis=0) - pa.mean(axis=0)) @ n < 0:
        n = -n

    # support sets: a generous slab near each hull's extreme along the axis,
    # so a slightly rocking face still yields its full stable manifold
    sa_proj = pa @ n
    sb_proj = pb @ n
    tol = depth + 1e-3
    keep_a = sa_proj >= sa_proj.max() - tol
    keep_b = sb_proj <= sb_proj.min() + tol
    sup_a, ha = pa[keep_a], sa_proj[keep_a]
    sup_b, hb = pb[keep_b], sb_proj[keep_b]
    mid = 0.5 * (sa_proj.max() + sb_proj.min())

    t1 = np.cross(n, [1.0, 0.0, 0.0])
    if np.linalg.norm(t1) < 0.1:
        t1 = np.cross(n, [0.0, 1.0, 0.0])
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    a2 = np.column_stack([sup_a @ t1, sup_a @ t2])
    b2 = np.column_stack([sup_b @ t1, sup_b @ t2])
    pts2 = _overlap_region(a2, b2)
    if len(pts2) == 0:
        # grazing numerical corner: fall back to the deepest vertex pair
        pts2 = np.array([0.5 * (a2.mean(axis=0) + b2.mean(axis=0))])
    # per-point depth from planar fits of the two support faces along n
    fa = _plane_fit(a2, ha)
    fb = _plane_fit(b2, hb)
    depths = np.array([fa(p) - fb(p) for p in pts2])
    inside = depths > 0.0
    if inside.any():
        pts2, depths = pts2[inside], depths[inside]
    else:
        deepest = int(np.argmax(depths))
        pts2, depths = pts2[deepest:deepest + 1], np.array([depth])
    points = pts2 @ np.vstack([t1, t2]) + mid * n
    return points, n, depths


def _plane_fit(uv, h):
    """Least-squares height field h(u, v); degrades to the mean for small sets."""
    if len(uv) >= 3:
        A = np.column_stack([uv, np.ones(len(uv))])
        coef, *_ = np.linalg.lstsq(A, h, rcond=None)
        return lambda p: coef[0] * p[0] + coef[1] * p[1] + coef[2]
    mean = float(np.mean(h))
    return lambda p: mean


def _hull2d(p):
    """Counter-clockwise 2D hull vertex order (handles 1-2 point sets)."""
    if len(p) <= 2:
        return p
    try:
        h = ConvexHull(p)
        return p[h.vertices]
    except Exception:
        # collinear support set: keep the two extreme points
        d = p - p.mean(axis=0)
        i = np.argmax(np.abs(d).sum(axis=1))
        t = d[i] / (np.linalg.norm(d[i]) + 1e-12)
        s = p @ t
        return p[[int(np.argmin(s)), int(np.argmax(s))]]


def _clip_poly(poly, a, b):
    """Sutherland-Hodgman clip of poly by the left side of edge a->b."""
    e = b - a
    out = []
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        side_p = e[0] * (p - a)[1] - e[1] * (p - a)[0]
        side_q = e[0] * (q - a)[1] - e[1] * (q - a)[0]
        if side_p >= -1e-12:
            out.append(p)
        if side_p * side_q < 0:
            t = side_p / (side_p - side_q)
            out.append(p + t * (q - p))
    return np.array(out) if out else np.zeros((0, 2))


def _overlap_region(a2, b2):
    """Representative points of the intersection of two 2D support sets."""
    ha, hb = _hull2d(a2), _hull2d(b2)
    if len(ha) >= 3 and len(hb) >= 3:
        poly = hb
        m = len(ha)
        for i in range(m):
            poly = _clip_poly(poly, ha[i], ha[(i + 1) % m])
            if len(poly) == 0:
                return poly
        return _dedup(poly)
    # a segment or point against anything: clamp each point of the smaller
    # set toward the other's centroid region
    small, big = (ha, hb) if len(ha) < len(hb) else (hb, ha)
    if len(small) == 1:
        return small
    if len(big) >= 3:
        poly = np.vstack([small, small[::-1]])  # degenerate polygon
        m = len(big)
        keep = small
        for i in range(m):
            e = big[(i + 1) % m] - big[i]
            d = keep - big[i]
            sides = e[0] * d[:, 1] - e[1] * d[:, 0]
            if (sides < -1e-12).all():
                return np.zeros((0, 2))
        return _dedup(keep)
    # segment vs segment: midpoint of closest points
    p = 0.25 * (small.sum(axis=0) / len(small) * 2 + big.sum(axis=0) / len(big) * 2)
    return p[None, :]


def _dedup(pts, tol=1e-9):
    out = []
    for p in pts:
        if not any(np.linalg.norm(p - q) < tol for q in out):
            out.append(p)
    return np.array(out[:8])


def collide_hull_pair(body_a, body_b):
    """All part-vs-part contacts between two bodies with hull shapes.

    Returns a list of (points, normal, depths) in world frame.
    """
    out = []
    ra, rb = body_a.rotation(), body_b.rotation()
    for sa in hull_shapes(body_a):
        for sb in hull_shapes(body_b):
            got = hull_contact(sa, body_a.pos, ra, sb, body_b.pos, rb)
            if got is not None:
                out.append(got)
    return out


_box_shape_cache = {}


def hull_shapes(body):
    """Body's convex shapes: explicit hulls, else its boxes as hulls."""
    hulls = getattr(body, "hulls", None)
    if hulls is not None:
        return hulls
    shapes = []
    for c, r, h in zip(body.box_centers, body.box_rots, body.box_halves):
        key = tuple(np.round(h, 12))
        if key not in _box_shape_cache:
            _box_shape_cache[key] = box_shape(h)
        base = _box_shape_cache[key]
        if np.allclose(c, 0) and np.allclose(r, np.eye(3)):
            shapes.append(base)
        else:
            s = ConvexShape(base.vertices @ r.T + c)
            shapes.append(s)
    return shapes
