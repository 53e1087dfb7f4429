"""Pure numpy fallback for the hot kernels.

Same semantics as the compiled extension in `binpick._native`: box-box
contact manifolds (separating axes + reference-face clipping), the
sequential-impulse velocity solver, positional penetration correction, and
the top-down height-map rasterizer.  The compiled module is preferred at
import time; this module keeps every feature available without a compiler.
"""

import numpy as np

# prefer face contacts over edge contacts when penetrations are comparable
_FACE_FUDGE = 1.05
_PARALLEL_EPS = 1e-12
_TOUCH_EPS = 1e-9


def box_box_contact(pa, ra, ha, pb, rb, hb):
    """Contact manifold between two oriented boxes.

    Rotation matrices have box axes as columns.  Returns (points, normal,
    depths) with the normal pointing from box A to box B, or None when
    separated.
    """
    c = ra.T @ rb
    absc = np.abs(c) + _PARALLEL_EPS
    p = ra.T @ (pb - pa)

    best_pen = np.inf
    best_case = -1  # 0..2 face of A, 3..5 face of B, >=6 edge pair
    # face axes of A
    for i in range(3):
        sep = abs(p[i]) - (ha[i] + hb @ absc[i, :])
        if sep > _TOUCH_EPS:
            return None
        pen = -sep
        if pen < best_pen:
            best_pen, best_case = pen, i
    # face axes of B
    for j in range(3):
        sep = abs(p @ c[:, j]) - (hb[j] + ha @ absc[:, j])
        if sep > _TOUCH_EPS:
            return None
        pen = -sep
        if pen < best_pen:
            best_pen, best_case = pen, 3 + j
    # edge-edge axes
    best_edge_pen, best_edge = np.inf, None
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            axis = np.cross(np.eye(3)[i], c[:, j])
            ln = np.linalg.norm(axis)
            if ln < 1e-6:
                continue
            axis = axis / ln
            sep = (abs(p @ axis)
                   - (ha[i1] * absc[i2, j] + ha[i2] * absc[i1, j]
                      + hb[j1] * absc[i, j2] + hb[j2] * absc[i, j1]) / ln)
            if sep > _TOUCH_EPS:
                return None
            pen = -sep
            if pen < best_edge_pen:
                best_edge_pen, best_edge = pen, (i, j, axis)

    if best_edge is not None and best_edge_pen * _FACE_FUDGE < best_pen:
        return _edge_contact(pa, ra, ha, pb, rb, hb, p, best_edge, best_edge_pen)
    if best_case < 3:
        return _face_clip(pa, ra, ha, pb, rb, hb, best_case, flip=False)
    return _face_clip(pb, rb, hb, pa, ra, ha, best_case - 3, flip=True)


def _edge_contact(pa, ra, ha, pb, rb, hb, p, edge, pen):
    i, j, axis_a = edge
    # orient axis from A toward B
    if p @ axis_a < 0:
        axis_a = -axis_a
    n = ra @ axis_a
    # support edge on A along +axis, on B along -axis
    sign_a = np.sign(ra.T @ n)
    sign_a[i] = 0.0
    pt_a = pa + ra @ (sign_a * ha)
    sign_b = -np.sign(rb.T @ n)
    sign_b[j] = 0.0
    pt_b = pb + rb @ (sign_b * hb)
    ua, ub = ra[:, i], rb[:, j]
    # closest points of the two edge lines
    d = pt_b - pt_a
    uab = ua @ ub
    det = 1.0 - uab * uab
    if abs(det) < 1e-12:
        ta = 0.0
    else:
        ta = (d @ ua - (d @ ub) * uab) / det
    point = pt_a + ta * ua
    tb = (point - pt_b) @ ub
    point = 0.5 * (point + pt_b + tb * ub)
    return (point[None, :], n, np.array([max(pen, 0.0)]))


def _face_clip(pa, ra, ha, pb, rb, hb, i, flip):
    """Reference face on box A along axis i; clip B's incident face against it."""
    p = ra.T @ (pb - pa)
    s = 1.0 if p[i] >= 0 else -1.0
    n_local = np.zeros(3)
    n_local[i] = s
    n_world = ra @ n_local

    # incident face: B axis most anti-parallel to the normal
    dots = rb.T @ n_world
    j = int(np.argmax(np.abs(dots)))
    sj = -1.0 if dots[j] > 0 else 1.0
    j1, j2 = (j + 1) % 3, (j + 2) % 3
    corners = []
    for s1, s2 in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
        off = np.zeros(3)
        off[j] = sj * hb[j]
        off[j1] = s1 * hb[j1]
        off[j2] = s2 * hb[j2]
        corners.append(pb + rb @ off)
    # to A-local coordinates
    poly = [(ra.T @ (cc - pa)) for cc in corners]

    i1, i2 = (i + 1) % 3, (i + 2) % 3
    for axis, lim in ((i1, ha[i1]), (i2, ha[i2])):
        for side in (1.0, -1.0):
            poly = _clip_halfplane(poly, axis, side, lim)
            if not poly:
                return None
    pts, depths = [], []
    for q in poly:
        depth = ha[i] - s * q[i]
        if depth >= -_TOUCH_EPS:
            pts.append(pa + ra @ q)
            depths.append(max(depth, 0.0))
    if not pts:
        return None
    normal = -n_world if flip else n_world
    return (np.array(pts), normal, np.array(depths))


def _clip_halfplane(poly, axis, side, lim):
    """Keep the part of the polygon with side*q[axis] <= lim."""
    out = []
    m = len(poly)
    for k in range(m):
        cur, nxt = poly[k], poly[(k + 1) % m]
        dc = side * cur[axis] - lim
        dn = side * nxt[axis] - lim
        if dc <= 0:
            out.append(cur)
        if (dc < 0 < dn) or (dn < 0 < dc):
            t = dc / (dc - dn)
            out.append(cur + t * (nxt - cur))
    return out


def collide_pairs(pos, rot, half, pairs):
    """Contact manifolds for candidate shape pairs.

    pos (S,3), rot (S,3,3), half (S,3); pairs (P,2) int.  Returns
    (pair_index, points, normals, depths) concatenated over all pairs,
    in pair order.  Normals point from pairs[k,0] toward pairs[k,1].
    """
    idx, pts, nrm, dep = [], [], [], []
    for k in range(len(pairs)):
        a, b = pairs[k]
        got = box_box_contact(pos[a], rot[a], half[a], pos[b], rot[b], half[b])
        if got is None:
            continue
        cp, n, d = got
        for m in range(len(cp)):
            idx.append(k)
            pts.append(cp[m])
            nrm.append(n)
            dep.append(d[m])
    if not idx:
        return (np.empty(0, dtype=np.intp), np.empty((0, 3)), np.empty((0, 3)), np.empty(0))
    return (np.array(idx, dtype=np.intp), np.array(pts), np.array(nrm), np.array(dep))


def _tangent_basis(n):
    if abs(n[0]) < 0.7:
        t1 = np.cross(n, [1.0, 0.0, 0.0])
    else:
        t1 = np.cross(n, [0.0, 1.0, 0.0])
    t1 = t1 / np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def solve_velocity(inv_m, inv_i, vel, omg, body_a, body_b, ra, rb, normal, depth,
                   mu, restitution, iterations, bounce_threshold, bias_extra=None):
    """Sequential impulses with Coulomb friction.  Mutates vel/omg in place.

    bias_extra is an optional per-contact target separation velocity (used
    for spring-like gripper pads).  Returns the accumulated normal impulse
    per contact (used for gripper force sensing).
    """
    ncon = len(body_a)
    accn = np.zeros(ncon)
    if ncon == 0:
        return accn
    acct1 = np.zeros(ncon)
    acct2 = np.zeros(ncon)
    t1s = np.empty((ncon, 3))
    t2s = np.empty((ncon, 3))
    kn = np.empty(ncon)
    kt1 = np.empty(ncon)
    kt2 = np.empty(ncon)
    bias = np.zeros(ncon)
    for c in range(ncon):
        ia, ib = body_a[c], body_b[c]
        n = normal[c]
        t1, t2 = _tangent_basis(n)
        t1s[c], t2s[c] = t1, t2
        for tvec, kout in ((n, "n"), (t1, "t1"), (t2, "t2")):
            rxa = np.cross(ra[c], tvec)
            rxb = np.cross(rb[c], tvec)
            k = inv_m[ia] + inv_m[ib] + rxa @ (inv_i[ia] @ rxa) + rxb @ (inv_i[ib] @ rxb)
            if kout == "n":
                kn[c] = k
            elif kout == "t1":
                kt1[c] = k
            else:
                kt2[c] = k
        vrel = (vel[ib] + np.cross(omg[ib], rb[c])) - (vel[ia] + np.cross(omg[ia], ra[c]))
        vn = vrel @ n
        if restitution > 0 and vn < -bounce_threshold:
            bias[c] = -restitution * vn
        if bias_extra is not None and bias_extra[c] > bias[c]:
            bias[c] = bias_extra[c]

    for _ in range(iterations):
        for c in range(ncon):
            ia, ib = body_a[c], body_b[c]
            n = normal[c]
            vrel = (vel[ib] + np.cross(omg[ib], rb[c])) - (vel[ia] + np.cross(omg[ia], ra[c]))
            dlam = (bias[c] - vrel @ n) / kn[c]
            new = max(accn[c] + dlam, 0.0)
            dlam = new - accn[c]
            accn[c] = new
            p = dlam * n
            vel[ia] -= inv_m[ia] * p
            omg[ia] -= inv_i[ia] @ np.cross(ra[c], p)
            vel[ib] += inv_m[ib] * p
            omg[ib] += inv_i[ib] @ np.cross(rb[c], p)
            if mu <= 0.0:
                continue
            lim = mu * accn[c]
            for tvec, acc, kt in ((t1s[c], acct1, kt1), (t2s[c], acct2, kt2)):
                vrel = (vel[ib] + np.cross(omg[ib], rb[c])) - (vel[ia] + np.cross(omg[ia], ra[c]))
                dl = -(vrel @ tvec) / kt[c]
                new = min(max(acc[c] + dl, -lim), lim)
                dl = new - acc[c]
                acc[c] = new
                p = dl * tvec
                vel[ia] -= inv_m[ia] * p
                omg[ia] -= inv_i[ia] @ np.cross(ra[c], p)
                vel[ib] += inv_m[ib] * p
                omg[ib] += inv_i[ib] @ np.cross(rb[c], p)
    return accn


def position_correct(inv_m, inv_i, nbody, body_a, body_b, ra, rb, normal, depth,
                     slop, beta, iterations, max_correction):
    """Pseudo-impulse positional correction on a fixed manifold.

    Returns per-body position deltas and rotation vectors to apply.
    """
    dpos = np.zeros((nbody, 3))
    drot = np.zeros((nbody, 3))
    ncon = len(body_a)
    for _ in range(iterations):
        for c in range(ncon):
            ia, ib = body_a[c], body_b[c]
            n = normal[c]
            moved = ((dpos[ib] + np.cross(drot[ib], rb[c]))
                     - (dpos[ia] + np.cross(drot[ia], ra[c]))) @ n
            pen = depth[c] - moved
            corr = min(max(pen - slop, 0.0), max_correction)
            if corr <= 0.0:
                continue
            rxa = np.cross(ra[c], n)
            rxb = np.cross(rb[c], n)
            k = inv_m[ia] + inv_m[ib] + rxa @ (inv_i[ia] @ rxa) + rxb @ (inv_i[ib] @ rxb)
            if k <= 0.0:
                continue
            lam = beta * corr / k
            p = lam * n
            dpos[ia] -= inv_m[ia] * p
            drot[ia] -= inv_i[ia] @ np.cross(ra[c], p)
            dpos[ib] += inv_m[ib] * p
            drot[ib] += inv_i[ib] @ np.cross(rb[c], p)
    return dpos, drot


def render_heightmap(x0, y0, pixel_size, width, height, v0, v1, v2, floor_z):
    """Max surface z per pixel center under vertical rays (z-buffer from above).

    v0, v1, v2 are the (T,3) triangle corner arrays.  Pixel (row, col)
    center sits at (x0 + (col+0.5)*pixel_size, y0 + (row+0.5)*pixel_size).
    """
    z = np.full((height, width), floor_z, dtype=float)
    for t in range(len(v0)):
        a, b, c = v0[t], v1[t], v2[t]
        xmin = min(a[0], b[0], c[0])
        xmax = max(a[0], b[0], c[0])
        ymin = min(a[1], b[1], c[1])
        ymax = max(a[1], b[1], c[1])
        c0 = max(int(np.floor((xmin - x0) / pixel_size - 0.5)), 0)
        c1 = min(int(np.ceil((xmax - x0) / pixel_size - 0.5)) + 1, width)
        r0 = max(int(np.floor((ymin - y0) / pixel_size - 0.5)), 0)
        r1 = min(int(np.ceil((ymax - y0) / pixel_size - 0.5)) + 1, height)
        if c0 >= c1 or r0 >= r1:
            continue
        px = x0 + (np.arange(c0, c1) + 0.5) * pixel_size
        py = y0 + (np.arange(r0, r1) + 0.5) * pixel_size
        area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(area2) < 1e-18:
            continue  # vertical or degenerate in the top-down projection
        sgn = 1.0 if area2 > 0 else -1.0
        gx, gy = np.meshgrid(px, py)
        d0 = (b[0] - a[0]) * (gy - a[1]) - (b[1] - a[1]) * (gx - a[0])
        d1 = (c[0] - b[0]) * (gy - b[1]) - (c[1] - b[1]) * (gx - b[0])
        d2 = (a[0] - c[0]) * (gy - c[1]) - (a[1] - c[1]) * (gx - c[0])
        inside = (sgn * d0 >= 0) & (sgn * d1 >= 0) & (sgn * d2 >= 0)
        if not inside.any():
            continue
        zt = (d1 * a[2] + d2 * b[2] + d0 * c[2]) / area2
        sub = z[r0:r1, c0:c1]
        np.maximum(sub, np.where(inside, zt, -np.inf), out=sub)
    return z
