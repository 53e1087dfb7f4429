"""Author the OBJ assets shipped with the package.

All parts are closed triangle meshes built by extruding a 2D cross-section
along z, sized like small industrial parts (0.02-0.08 m), centered at the
origin. Run from the repo root:  python tools/make_assets.py
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "binpick", "assets")


def ear_clip(poly):
    """Triangulate a simple CCW polygon by ear clipping. Returns index triples."""
    poly = np.asarray(poly, dtype=float)
    idx = list(range(len(poly)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def point_in_tri(p, a, b, c):
        d0, d1, d2 = cross(a, b, p), cross(b, c, p), cross(c, a, p)
        return d0 >= -1e-15 and d1 >= -1e-15 and d2 >= -1e-15

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10000:
            raise RuntimeError("ear clipping failed; polygon not simple CCW?")
        n = len(idx)
        for k in range(n):
            i0, i1, i2 = idx[(k - 1) % n], idx[k], idx[(k + 1) % n]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if cross(a, b, c) <= 1e-15:
                continue
            if any(point_in_tri(poly[j], a, b, c) for j in idx
                   if j not in (i0, i1, i2)):
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            break
        else:
            raise RuntimeError("no ear found")
    tris.append(tuple(idx))
    return tris


def extrude(poly2d, height):
    """Extrude a CCW cross-section along z into a closed triangle mesh."""
    poly2d = np.asarray(poly2d, dtype=float)
    area2 = np.sum(poly2d[:, 0] * np.roll(poly2d[:, 1], -1)
                   - np.roll(poly2d[:, 0], -1) * poly2d[:, 1])
    if area2 < 0:
        poly2d = poly2d[::-1]
    n = len(poly2d)
    z0, z1 = -height / 2.0, height / 2.0
    verts = np.vstack([
        np.column_stack([poly2d, np.full(n, z0)]),
        np.column_stack([poly2d, np.full(n, z1)]),
    ])
    tris = []
    caps = ear_clip(poly2d)
    for a, b, c in caps:
        tris.append((a, c, b))              # bottom, faces -z
        tris.append((n + a, n + b, n + c))  # top, faces +z
    for i in range(n):
        j = (i + 1) % n
        tris.append((i, j, n + j))
        tris.append((i, n + j, n + i))
    center = verts.mean(axis=0)
    center[2] = 0.0
    return verts - center, tris


def write_obj(path, verts, tris):
    with open(path, "w") as fh:
        for v in verts:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in tris:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
    print(f"wrote {path}: {len(verts)} vertices, {len(tris)} triangles")


def cube(side=0.04):
    h = side / 2.0
    square = [(-h, -h), (h, -h), (h, h), (-h, h)]
    return extrude(square, side)


def l_prism():
    # 6-vertex L cross-section, 0.02 m thick
    poly = [(0, 0), (0.06, 0), (0.06, 0.02), (0.02, 0.02), (0.02, 0.05), (0, 0.05)]
    return extrude(poly, 0.02)


def hex_prism(r=0.025, height=0.03):
    ang = np.arange(6) * np.pi / 3.0
    poly = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    return extrude(poly, height)


def elliptic_cylinder(a=0.03, b=0.018, height=0.03, n=16):
    ang = np.arange(n) * 2 * np.pi / n
    poly = np.column_stack([a * np.cos(ang), b * np.sin(ang)])
    return extrude(poly, height)


def workpiece():
    # U-channel: rectangle with a semicircular groove milled into the top.
    # The smooth groove keeps residual concavity at any box count, so the
    # part supports decompositions from 1 to 20+ boxes.
    w, h, r, depth_z = 0.04, 0.035, 0.025, 0.03
    arc_n = 12
    poly = [(-w, 0), (w, 0), (w, h), (r, h)]
    for k in range(1, arc_n + 1):
        phi = np.pi * k / arc_n
        poly.append((r * np.cos(phi), h - r * np.sin(phi)))
    poly.append((-w, h))
    return extrude(poly, depth_z)


def main():
    os.makedirs(OUT, exist_ok=True)
    for name, builder in [("cube", cube), ("lprism", l_prism),
                          ("hexprism", hex_prism), ("ellcyl", elliptic_cylinder),
                          ("workpiece", workpiece)]:
        verts, tris = builder()
        write_obj(os.path.join(OUT, name + ".obj"), verts, tris)


if __name__ == "__main__":
    main()
