# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: box-box contact manifolds, the sequential-impulse
solver, positional correction, and the top-down height-map rasterizer.

Mirrors the semantics of binpick._kernels_py; that module stays the
reference implementation and the import-time fallback.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt, floor, ceil

cnp.import_array()

cdef double _FACE_FUDGE = 1.05
cdef double _PARALLEL_EPS = 1e-12
cdef double _TOUCH_EPS = 1e-9


cdef inline double _dot3(double* a, double* b) nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline void _cross3(double* a, double* b, double* out) nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline void _mat_t_vec(double* m, double* v, double* out) nogil:
    # out = M^T v for row-major 3x3 m
    out[0] = m[0] * v[0] + m[3] * v[1] + m[6] * v[2]
    out[1] = m[1] * v[0] + m[4] * v[1] + m[7] * v[2]
    out[2] = m[2] * v[0] + m[5] * v[1] + m[8] * v[2]


cdef int _face_clip(double* pa, double* Ra, double* ha,
                    double* pb, double* Rb, double* hb,
                    int i, bint flip,
                    double* out_pts, double* out_n, double* out_dep) nogil:
    cdef double diff[3]
    cdef double p[3]
    cdef double nw[3]
    cdef double dots[3]
    cdef double off[3]
    cdef double q[3]
    cdef double cmat[9]
    cdef double poly[48]      # up to 16 points x 3
    cdef double buf[48]
    cdef int npoly, nbuf, k, m, j, j1, j2, i1, i2, axis, cnt
    cdef double s, sj, best, lim, side, dc, dn, t, depth
    cdef int s1, s2

    for k in range(3):
        diff[k] = pb[k] - pa[k]
    _mat_t_vec(Ra, diff, p)
    s = 1.0 if p[i] >= 0 else -1.0
    nw[0] = s * Ra[0 * 3 + i]
    nw[1] = s * Ra[1 * 3 + i]
    nw[2] = s * Ra[2 * 3 + i]

    # cmat = Ra^T Rb
    for k in range(3):
        for m in range(3):
            cmat[k * 3 + m] = (Ra[0 * 3 + k] * Rb[0 * 3 + m]
                               + Ra[1 * 3 + k] * Rb[1 * 3 + m]
                               + Ra[2 * 3 + k] * Rb[2 * 3 + m])

    _mat_t_vec(Rb, nw, dots)
    j = 0
    best = fabs(dots[0])
    if fabs(dots[1]) > best:
        j = 1
        best = fabs(dots[1])
    if fabs(dots[2]) > best:
        j = 2
    sj = -1.0 if dots[j] > 0 else 1.0
    j1 = (j + 1) % 3
    j2 = (j + 2) % 3

    npoly = 0
    for m in range(4):
        s1 = -1 if (m == 0 or m == 3) else 1
        s2 = -1 if (m == 0 or m == 1) else 1
        off[j] = sj * hb[j]
        off[j1] = s1 * hb[j1]
        off[j2] = s2 * hb[j2]
        # q = p + C off  (incident corner in A-local frame)
        for k in range(3):
            q[k] = p[k] + cmat[k * 3 + 0] * off[0] + cmat[k * 3 + 1] * off[1] + cmat[k * 3 + 2] * off[2]
        poly[npoly * 3 + 0] = q[0]
        poly[npoly * 3 + 1] = q[1]
        poly[npoly * 3 + 2] = q[2]
        npoly += 1

    i1 = (i + 1) % 3
    i2 = (i + 2) % 3
    for m in range(4):
        axis = i1 if m < 2 else i2
        lim = ha[i1] if m < 2 else ha[i2]
        side = 1.0 if (m % 2 == 0) else -1.0
        nbuf = 0
        for k in range(npoly):
            dc = side * poly[k * 3 + axis] - lim
            dn = side * poly[((k + 1) % npoly) * 3 + axis] - lim
            if dc <= 0:
                buf[nbuf * 3 + 0] = poly[k * 3 + 0]
                buf[nbuf * 3 + 1] = poly[k * 3 + 1]
                buf[nbuf * 3 + 2] = poly[k * 3 + 2]
                nbuf += 1
            if (dc < 0 < dn) or (dn < 0 < dc):
                t = dc / (dc - dn)
                buf[nbuf * 3 + 0] = poly[k * 3 + 0] + t * (poly[((k + 1) % npoly) * 3 + 0] - poly[k * 3 + 0])
                buf[nbuf * 3 + 1] = poly[k * 3 + 1] + t * (poly[((k + 1) % npoly) * 3 + 1] - poly[k * 3 + 1])
                buf[nbuf * 3 + 2] = poly[k * 3 + 2] + t * (poly[((k + 1) % npoly) * 3 + 2] - poly[k * 3 + 2])
                nbuf += 1
        npoly = nbuf
        for k in range(nbuf):
            poly[k * 3 + 0] = buf[k * 3 + 0]
            poly[k * 3 + 1] = buf[k * 3 + 1]
            poly[k * 3 + 2] = buf[k * 3 + 2]
        if npoly == 0:
            return 0

    cnt = 0
    for k in range(npoly):
        if cnt >= 8:
            break
        depth = ha[i] - s * poly[k * 3 + i]
        if depth >= -_TOUCH_EPS:
            q[0] = poly[k * 3 + 0]
            q[1] = poly[k * 3 + 1]
            q[2] = poly[k * 3 + 2]
            out_pts[cnt * 3 + 0] = pa[0] + Ra[0] * q[0] + Ra[1] * q[1] + Ra[2] * q[2]
            out_pts[cnt * 3 + 1] = pa[1] + Ra[3] * q[0] + Ra[4] * q[1] + Ra[5] * q[2]
            out_pts[cnt * 3 + 2] = pa[2] + Ra[6] * q[0] + Ra[7] * q[1] + Ra[8] * q[2]
            out_dep[cnt] = depth if depth > 0.0 else 0.0
            cnt += 1
    if cnt == 0:
        return 0
    if flip:
        out_n[0] = -nw[0]
        out_n[1] = -nw[1]
        out_n[2] = -nw[2]
    else:
        out_n[0] = nw[0]
        out_n[1] = nw[1]
        out_n[2] = nw[2]
    return cnt


cdef int _box_box(double* pa, double* Ra, double* ha,
                  double* pb, double* Rb, double* hb,
                  double* out_pts, double* out_n, double* out_dep) nogil:
    cdef double cmat[9]
    cdef double absc[9]
    cdef double diff[3]
    cdef double p[3]
    cdef double axis[3]
    cdef double best_axis[3]
    cdef int k, m, i, j, i1, i2, j1, j2
    cdef double sep, pen, ln, proj
    cdef double best_pen = 1e300
    cdef int best_case = -1
    cdef double best_edge_pen = 1e300
    cdef int best_ei = -1, best_ej = -1

    for k in range(3):
        for m in range(3):
            cmat[k * 3 + m] = (Ra[0 * 3 + k] * Rb[0 * 3 + m]
                               + Ra[1 * 3 + k] * Rb[1 * 3 + m]
                               + Ra[2 * 3 + k] * Rb[2 * 3 + m])
            absc[k * 3 + m] = fabs(cmat[k * 3 + m]) + _PARALLEL_EPS
    for k in range(3):
        diff[k] = pb[k] - pa[k]
    _mat_t_vec(Ra, diff, p)

    for i in range(3):
        sep = fabs(p[i]) - (ha[i] + hb[0] * absc[i * 3 + 0] + hb[1] * absc[i * 3 + 1] + hb[2] * absc[i * 3 + 2])
        if sep > _TOUCH_EPS:
            return 0
        pen = -sep
        if pen < best_pen:
            best_pen = pen
            best_case = i
    for j in range(3):
        proj = p[0] * cmat[0 * 3 + j] + p[1] * cmat[1 * 3 + j] + p[2] * cmat[2 * 3 + j]
        sep = fabs(proj) - (hb[j] + ha[0] * absc[0 * 3 + j] + ha[1] * absc[1 * 3 + j] + ha[2] * absc[2 * 3 + j])
        if sep > _TOUCH_EPS:
            return 0
        pen = -sep
        if pen < best_pen:
            best_pen = pen
            best_case = 3 + j

    for i in range(3):
        i1 = (i + 1) % 3
        i2 = (i + 2) % 3
        for j in range(3):
            j1 = (j + 1) % 3
            j2 = (j + 2) % 3
            # axis = e_i x C[:, j] in A frame
            if i == 0:
                axis[0] = 0.0
                axis[1] = -cmat[2 * 3 + j]
                axis[2] = cmat[1 * 3 + j]
            elif i == 1:
                axis[0] = cmat[2 * 3 + j]
                axis[1] = 0.0
                axis[2] = -cmat[0 * 3 + j]
            else:
                axis[0] = -cmat[1 * 3 + j]
                axis[1] = cmat[0 * 3 + j]
                axis[2] = 0.0
            ln = sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2])
            if ln < 1e-6:
                continue
            sep = (fabs(p[0] * axis[0] + p[1] * axis[1] + p[2] * axis[2])
                   - (ha[i1] * absc[i2 * 3 + j] + ha[i2] * absc[i1 * 3 + j]
                      + hb[j1] * absc[i * 3 + j2] + hb[j2] * absc[i * 3 + j1])) / ln
            if sep > _TOUCH_EPS:
                return 0
            pen = -sep
            if pen < best_edge_pen:
                best_edge_pen = pen
                best_ei = i
                best_ej = j

    if best_ei >= 0 and best_edge_pen * _FACE_FUDGE < best_pen:
        return _edge_contact(pa, Ra, ha, pb, Rb, hb, cmat, p,
                             best_ei, best_ej, best_edge_pen,
                             out_pts, out_n, out_dep)
    if best_case < 3:
        return _face_clip(pa, Ra, ha, pb, Rb, hb, best_case, 0, out_pts, out_n, out_dep)
    return _face_clip(pb, Rb, hb, pa, Ra, ha, best_case - 3, 1, out_pts, out_n, out_dep)


cdef int _edge_contact(double* pa, double* Ra, double* ha,
                       double* pb, double* Rb, double* hb,
                       double* cmat, double* p,
                       int i, int j, double pen,
                       double* out_pts, double* out_n, double* out_dep) nogil:
    cdef double axis_a[3]
    cdef double n[3]
    cdef double sign_a[3]
    cdef double sign_b[3]
    cdef double pt_a[3]
    cdef double pt_b[3]
    cdef double ua[3]
    cdef double ub[3]
    cdef double d[3]
    cdef double tmp[3]
    cdef int k
    cdef double uab, det, ta, tb, dp

    if i == 0:
        axis_a[0] = 0.0
        axis_a[1] = -cmat[2 * 3 + j]
        axis_a[2] = cmat[1 * 3 + j]
    elif i == 1:
        axis_a[0] = cmat[2 * 3 + j]
        axis_a[1] = 0.0
        axis_a[2] = -cmat[0 * 3 + j]
    else:
        axis_a[0] = -cmat[1 * 3 + j]
        axis_a[1] = cmat[0 * 3 + j]
        axis_a[2] = 0.0
    dp = sqrt(_dot3(axis_a, axis_a))
    for k in range(3):
        axis_a[k] /= dp
    if _dot3(p, axis_a) < 0:
        for k in range(3):
            axis_a[k] = -axis_a[k]
    _mat_vec_cols(Ra, axis_a, n)

    _mat_t_vec(Ra, n, sign_a)
    for k in range(3):
        sign_a[k] = 1.0 if sign_a[k] > 0 else (-1.0 if sign_a[k] < 0 else 0.0)
    sign_a[i] = 0.0
    for k in range(3):
        tmp[k] = sign_a[k] * ha[k]
    _mat_vec_cols(Ra, tmp, pt_a)
    for k in range(3):
        pt_a[k] += pa[k]

    _mat_t_vec(Rb, n, sign_b)
    for k in range(3):
        sign_b[k] = -1.0 if sign_b[k] > 0 else (1.0 if sign_b[k] < 0 else 0.0)
    sign_b[j] = 0.0
    for k in range(3):
        tmp[k] = sign_b[k] * hb[k]
    _mat_vec_cols(Rb, tmp, pt_b)
    for k in range(3):
        pt_b[k] += pb[k]

    for k in range(3):
        ua[k] = Ra[k * 3 + i]
        ub[k] = Rb[k * 3 + j]
        d[k] = pt_b[k] - pt_a[k]
    uab = _dot3(ua, ub)
    det = 1.0 - uab * uab
    if fabs(det) < 1e-12:
        ta = 0.0
    else:
        ta = (_dot3(d, ua) - _dot3(d, ub) * uab) / det
    for k in range(3):
        tmp[k] = pt_a[k] + ta * ua[k]
    tb = ((tmp[0] - pt_b[0]) * ub[0] + (tmp[1] - pt_b[1]) * ub[1] + (tmp[2] - pt_b[2]) * ub[2])
    for k in range(3):
        out_pts[k] = 0.5 * (tmp[k] + pt_b[k] + tb * ub[k])
    out_n[0] = n[0]
    out_n[1] = n[1]
    out_n[2] = n[2]
    out_dep[0] = pen if pen > 0.0 else 0.0
    return 1


cdef inline void _mat_vec_cols(double* m, double* v, double* out) nogil:
    # out = M v where M is row-major with columns as basis vectors
    out[0] = m[0] * v[0] + m[1] * v[1] + m[2] * v[2]
    out[1] = m[3] * v[0] + m[4] * v[1] + m[5] * v[2]
    out[2] = m[6] * v[0] + m[7] * v[1] + m[8] * v[2]


def box_box_contact(cnp.ndarray[double, ndim=1] pa, cnp.ndarray[double, ndim=2] ra,
                    cnp.ndarray[double, ndim=1] ha, cnp.ndarray[double, ndim=1] pb,
                    cnp.ndarray[double, ndim=2] rb, cnp.ndarray[double, ndim=1] hb):
    cdef double pts[24]
    cdef double n[3]
    cdef double dep[8]
    cdef cnp.ndarray[double, ndim=2] ra_c = np.ascontiguousarray(ra)
    cdef cnp.ndarray[double, ndim=2] rb_c = np.ascontiguousarray(rb)
    cdef int cnt = _box_box(&pa[0], &ra_c[0, 0], &ha[0], &pb[0], &rb_c[0, 0], &hb[0],
                            pts, n, dep)
    if cnt == 0:
        return None
    out_p = np.empty((cnt, 3))
    out_d = np.empty(cnt)
    for k in range(cnt):
        out_p[k, 0] = pts[k * 3 + 0]
        out_p[k, 1] = pts[k * 3 + 1]
        out_p[k, 2] = pts[k * 3 + 2]
        out_d[k] = dep[k]
    return out_p, np.array([n[0], n[1], n[2]]), out_d


def collide_pairs(cnp.ndarray[double, ndim=2] pos, cnp.ndarray[double, ndim=3] rot,
                  cnp.ndarray[double, ndim=2] half, cnp.ndarray[cnp.intp_t, ndim=2] pairs):
    cdef Py_ssize_t np_pairs = pairs.shape[0]
    cdef cnp.ndarray[double, ndim=2] pos_c = np.ascontiguousarray(pos)
    cdef cnp.ndarray[double, ndim=3] rot_c = np.ascontiguousarray(rot)
    cdef cnp.ndarray[double, ndim=2] half_c = np.ascontiguousarray(half)
    cdef cnp.ndarray[double, ndim=2] out_pts = np.empty((8 * max(np_pairs, 1), 3))
    cdef cnp.ndarray[double, ndim=2] out_nrm = np.empty((8 * max(np_pairs, 1), 3))
    cdef cnp.ndarray[double, ndim=1] out_dep = np.empty(8 * max(np_pairs, 1))
    cdef cnp.ndarray[cnp.intp_t, ndim=1] out_idx = np.empty(8 * max(np_pairs, 1), dtype=np.intp)
    cdef double pts[24]
    cdef double n[3]
    cdef double dep[8]
    cdef Py_ssize_t k, total = 0
    cdef int cnt, m
    cdef Py_ssize_t a, b
    for k in range(np_pairs):
        a = pairs[k, 0]
        b = pairs[k, 1]
        cnt = _box_box(&pos_c[a, 0], &rot_c[a, 0, 0], &half_c[a, 0],
                       &pos_c[b, 0], &rot_c[b, 0, 0], &half_c[b, 0],
                       pts, n, dep)
        for m in range(cnt):
            out_idx[total] = k
            out_pts[total, 0] = pts[m * 3 + 0]
            out_pts[total, 1] = pts[m * 3 + 1]
            out_pts[total, 2] = pts[m * 3 + 2]
            out_nrm[total, 0] = n[0]
            out_nrm[total, 1] = n[1]
            out_nrm[total, 2] = n[2]
            out_dep[total] = dep[m]
            total += 1
    return (out_idx[:total].copy(), out_pts[:total].copy(),
            out_nrm[:total].copy(), out_dep[:total].copy())


def solve_velocity(cnp.ndarray[double, ndim=1] inv_m, cnp.ndarray[double, ndim=3] inv_i,
                   cnp.ndarray[double, ndim=2] vel, cnp.ndarray[double, ndim=2] omg,
                   cnp.ndarray[cnp.intp_t, ndim=1] body_a, cnp.ndarray[cnp.intp_t, ndim=1] body_b,
                   cnp.ndarray[double, ndim=2] ra, cnp.ndarray[double, ndim=2] rb,
                   cnp.ndarray[double, ndim=2] normal, cnp.ndarray[double, ndim=1] depth,
                   double mu, double restitution, int iterations, double bounce_threshold,
                   bias_extra=None):
    cdef Py_ssize_t ncon = body_a.shape[0]
    cdef cnp.ndarray[double, ndim=1] accn = np.zeros(ncon)
    if ncon == 0:
        return accn
    cdef cnp.ndarray[double, ndim=1] acct1 = np.zeros(ncon)
    cdef cnp.ndarray[double, ndim=1] acct2 = np.zeros(ncon)
    cdef cnp.ndarray[double, ndim=2] t1s = np.empty((ncon, 3))
    cdef cnp.ndarray[double, ndim=2] t2s = np.empty((ncon, 3))
    cdef cnp.ndarray[double, ndim=1] kn = np.empty(ncon)
    cdef cnp.ndarray[double, ndim=1] kt1 = np.empty(ncon)
    cdef cnp.ndarray[double, ndim=1] kt2 = np.empty(ncon)
    cdef cnp.ndarray[double, ndim=1] bias = np.zeros(ncon)
    cdef Py_ssize_t c, ia, ib
    cdef int it, tpass
    cdef double n0, n1, n2, t0a, t1a, t2a
    cdef double rxa[3]
    cdef double rxb[3]
    cdef double tmp[3]
    cdef double tv[3]
    cdef double vr[3]
    cdef double k, vn, dlam, newl, lim, dl, p0, p1, p2

    for c in range(ncon):
        ia = body_a[c]
        ib = body_b[c]
        n0 = normal[c, 0]
        n1 = normal[c, 1]
        n2 = normal[c, 2]
        # tangent basis
        if fabs(n0) < 0.7:
            # n x (1,0,0) = (0, n2, -n1)
            t0a = 0.0
            t1a = n2
            t2a = -n1
        else:
            # n x (0,1,0) = (-n2, 0, n0)
            t0a = -n2
            t1a = 0.0
            t2a = n0
        k = sqrt(t0a * t0a + t1a * t1a + t2a * t2a)
        t0a /= k
        t1a /= k
        t2a /= k
        t1s[c, 0] = t0a
        t1s[c, 1] = t1a
        t1s[c, 2] = t2a
        t2s[c, 0] = n1 * t2a - n2 * t1a
        t2s[c, 1] = n2 * t0a - n0 * t2a
        t2s[c, 2] = n0 * t1a - n1 * t0a
        for tpass in range(3):
            if tpass == 0:
                tv[0] = n0
                tv[1] = n1
                tv[2] = n2
            elif tpass == 1:
                tv[0] = t1s[c, 0]
                tv[1] = t1s[c, 1]
                tv[2] = t1s[c, 2]
            else:
                tv[0] = t2s[c, 0]
                tv[1] = t2s[c, 1]
                tv[2] = t2s[c, 2]
            rxa[0] = ra[c, 1] * tv[2] - ra[c, 2] * tv[1]
            rxa[1] = ra[c, 2] * tv[0] - ra[c, 0] * tv[2]
            rxa[2] = ra[c, 0] * tv[1] - ra[c, 1] * tv[0]
            rxb[0] = rb[c, 1] * tv[2] - rb[c, 2] * tv[1]
            rxb[1] = rb[c, 2] * tv[0] - rb[c, 0] * tv[2]
            rxb[2] = rb[c, 0] * tv[1] - rb[c, 1] * tv[0]
            tmp[0] = inv_i[ia, 0, 0] * rxa[0] + inv_i[ia, 0, 1] * rxa[1] + inv_i[ia, 0, 2] * rxa[2]
            tmp[1] = inv_i[ia, 1, 0] * rxa[0] + inv_i[ia, 1, 1] * rxa[1] + inv_i[ia, 1, 2] * rxa[2]
            tmp[2] = inv_i[ia, 2, 0] * rxa[0] + inv_i[ia, 2, 1] * rxa[1] + inv_i[ia, 2, 2] * rxa[2]
            k = inv_m[ia] + inv_m[ib] + rxa[0] * tmp[0] + rxa[1] * tmp[1] + rxa[2] * tmp[2]
            tmp[0] = inv_i[ib, 0, 0] * rxb[0] + inv_i[ib, 0, 1] * rxb[1] + inv_i[ib, 0, 2] * rxb[2]
            tmp[1] = inv_i[ib, 1, 0] * rxb[0] + inv_i[ib, 1, 1] * rxb[1] + inv_i[ib, 1, 2] * rxb[2]
            tmp[2] = inv_i[ib, 2, 0] * rxb[0] + inv_i[ib, 2, 1] * rxb[1] + inv_i[ib, 2, 2] * rxb[2]
            k += rxb[0] * tmp[0] + rxb[1] * tmp[1] + rxb[2] * tmp[2]
            if tpass == 0:
                kn[c] = k
            elif tpass == 1:
                kt1[c] = k
            else:
                kt2[c] = k
        vr[0] = vel[ib, 0] + (omg[ib, 1] * rb[c, 2] - omg[ib, 2] * rb[c, 1]) - vel[ia, 0] - (omg[ia, 1] * ra[c, 2] - omg[ia, 2] * ra[c, 1])
        vr[1] = vel[ib, 1] + (omg[ib, 2] * rb[c, 0] - omg[ib, 0] * rb[c, 2]) - vel[ia, 1] - (omg[ia, 2] * ra[c, 0] - omg[ia, 0] * ra[c, 2])
        vr[2] = vel[ib, 2] + (omg[ib, 0] * rb[c, 1] - omg[ib, 1] * rb[c, 0]) - vel[ia, 2] - (omg[ia, 0] * ra[c, 1] - omg[ia, 1] * ra[c, 0])
        vn = vr[0] * n0 + vr[1] * n1 + vr[2] * n2
        if restitution > 0 and vn < -bounce_threshold:
            bias[c] = -restitution * vn
        if bias_extra is not None and bias_extra[c] > bias[c]:
            bias[c] = bias_extra[c]

    for it in range(iterations):
        for c in range(ncon):
            ia = body_a[c]
            ib = body_b[c]
            n0 = normal[c, 0]
            n1 = normal[c, 1]
            n2 = normal[c, 2]
            vr[0] = vel[ib, 0] + (omg[ib, 1] * rb[c, 2] - omg[ib, 2] * rb[c, 1]) - vel[ia, 0] - (omg[ia, 1] * ra[c, 2] - omg[ia, 2] * ra[c, 1])
            vr[1] = vel[ib, 1] + (omg[ib, 2] * rb[c, 0] - omg[ib, 0] * rb[c, 2]) - vel[ia, 1] - (omg[ia, 2] * ra[c, 0] - omg[ia, 0] * ra[c, 2])
            vr[2] = vel[ib, 2] + (omg[ib, 0] * rb[c, 1] - omg[ib, 1] * rb[c, 0]) - vel[ia, 2] - (omg[ia, 0] * ra[c, 1] - omg[ia, 1] * ra[c, 0])
            vn = vr[0] * n0 + vr[1] * n1 + vr[2] * n2
            dlam = (bias[c] - vn) / kn[c]
            newl = accn[c] + dlam
            if newl < 0.0:
                newl = 0.0
            dlam = newl - accn[c]
            accn[c] = newl
            p0 = dlam * n0
            p1 = dlam * n1
            p2 = dlam * n2
            _apply(inv_m, inv_i, vel, omg, ia, ib, &ra[c, 0], &rb[c, 0], p0, p1, p2)
            if mu <= 0.0:
                continue
            lim = mu * accn[c]
            for tpass in range(2):
                if tpass == 0:
                    tv[0] = t1s[c, 0]
                    tv[1] = t1s[c, 1]
                    tv[2] = t1s[c, 2]
                    k = kt1[c]
                else:
                    tv[0] = t2s[c, 0]
                    tv[1] = t2s[c, 1]
                    tv[2] = t2s[c, 2]
                    k = kt2[c]
                vr[0] = vel[ib, 0] + (omg[ib, 1] * rb[c, 2] - omg[ib, 2] * rb[c, 1]) - vel[ia, 0] - (omg[ia, 1] * ra[c, 2] - omg[ia, 2] * ra[c, 1])
                vr[1] = vel[ib, 1] + (omg[ib, 2] * rb[c, 0] - omg[ib, 0] * rb[c, 2]) - vel[ia, 1] - (omg[ia, 2] * ra[c, 0] - omg[ia, 0] * ra[c, 2])
                vr[2] = vel[ib, 2] + (omg[ib, 0] * rb[c, 1] - omg[ib, 1] * rb[c, 0]) - vel[ia, 2] - (omg[ia, 0] * ra[c, 1] - omg[ia, 1] * ra[c, 0])
                dl = -(vr[0] * tv[0] + vr[1] * tv[1] + vr[2] * tv[2]) / k
                if tpass == 0:
                    newl = acct1[c] + dl
                    if newl > lim:
                        newl = lim
                    if newl < -lim:
                        newl = -lim
                    dl = newl - acct1[c]
                    acct1[c] = newl
                else:
                    newl = acct2[c] + dl
                    if newl > lim:
                        newl = lim
                    if newl < -lim:
                        newl = -lim
                    dl = newl - acct2[c]
                    acct2[c] = newl
                _apply(inv_m, inv_i, vel, omg, ia, ib, &ra[c, 0], &rb[c, 0],
                       dl * tv[0], dl * tv[1], dl * tv[2])
    return accn


cdef inline void _apply(cnp.ndarray[double, ndim=1] inv_m, cnp.ndarray[double, ndim=3] inv_i,
                        cnp.ndarray[double, ndim=2] vel, cnp.ndarray[double, ndim=2] omg,
                        Py_ssize_t ia, Py_ssize_t ib, double* rac, double* rbc,
                        double p0, double p1, double p2):
    cdef double cr[3]
    vel[ia, 0] -= inv_m[ia] * p0
    vel[ia, 1] -= inv_m[ia] * p1
    vel[ia, 2] -= inv_m[ia] * p2
    cr[0] = rac[1] * p2 - rac[2] * p1
    cr[1] = rac[2] * p0 - rac[0] * p2
    cr[2] = rac[0] * p1 - rac[1] * p0
    omg[ia, 0] -= inv_i[ia, 0, 0] * cr[0] + inv_i[ia, 0, 1] * cr[1] + inv_i[ia, 0, 2] * cr[2]
    omg[ia, 1] -= inv_i[ia, 1, 0] * cr[0] + inv_i[ia, 1, 1] * cr[1] + inv_i[ia, 1, 2] * cr[2]
    omg[ia, 2] -= inv_i[ia, 2, 0] * cr[0] + inv_i[ia, 2, 1] * cr[1] + inv_i[ia, 2, 2] * cr[2]
    vel[ib, 0] += inv_m[ib] * p0
    vel[ib, 1] += inv_m[ib] * p1
    vel[ib, 2] += inv_m[ib] * p2
    cr[0] = rbc[1] * p2 - rbc[2] * p1
    cr[1] = rbc[2] * p0 - rbc[0] * p2
    cr[2] = rbc[0] * p1 - rbc[1] * p0
    omg[ib, 0] += inv_i[ib, 0, 0] * cr[0] + inv_i[ib, 0, 1] * cr[1] + inv_i[ib, 0, 2] * cr[2]
    omg[ib, 1] += inv_i[ib, 1, 0] * cr[0] + inv_i[ib, 1, 1] * cr[1] + inv_i[ib, 1, 2] * cr[2]
    omg[ib, 2] += inv_i[ib, 2, 0] * cr[0] + inv_i[ib, 2, 1] * cr[1] + inv_i[ib, 2, 2] * cr[2]


def position_correct(cnp.ndarray[double, ndim=1] inv_m, cnp.ndarray[double, ndim=3] inv_i,
                     Py_ssize_t nbody,
                     cnp.ndarray[cnp.intp_t, ndim=1] body_a, cnp.ndarray[cnp.intp_t, ndim=1] body_b,
                     cnp.ndarray[double, ndim=2] ra, cnp.ndarray[double, ndim=2] rb,
                     cnp.ndarray[double, ndim=2] normal, cnp.ndarray[double, ndim=1] depth,
                     double slop, double beta, int iterations, double max_correction):
    cdef cnp.ndarray[double, ndim=2] dpos = np.zeros((nbody, 3))
    cdef cnp.ndarray[double, ndim=2] drot = np.zeros((nbody, 3))
    cdef Py_ssize_t ncon = body_a.shape[0]
    cdef Py_ssize_t c, ia, ib
    cdef int it
    cdef double n0, n1, n2, moved, pen, corr, k, lam, p0, p1, p2
    cdef double rxa[3]
    cdef double rxb[3]
    cdef double tmp[3]
    for it in range(iterations):
        for c in range(ncon):
            ia = body_a[c]
            ib = body_b[c]
            n0 = normal[c, 0]
            n1 = normal[c, 1]
            n2 = normal[c, 2]
            moved = ((dpos[ib, 0] + (drot[ib, 1] * rb[c, 2] - drot[ib, 2] * rb[c, 1])
                      - dpos[ia, 0] - (drot[ia, 1] * ra[c, 2] - drot[ia, 2] * ra[c, 1])) * n0
                     + (dpos[ib, 1] + (drot[ib, 2] * rb[c, 0] - drot[ib, 0] * rb[c, 2])
                        - dpos[ia, 1] - (drot[ia, 2] * ra[c, 0] - drot[ia, 0] * ra[c, 2])) * n1
                     + (dpos[ib, 2] + (drot[ib, 0] * rb[c, 1] - drot[ib, 1] * rb[c, 0])
                        - dpos[ia, 2] - (drot[ia, 0] * ra[c, 1] - drot[ia, 1] * ra[c, 0])) * n2)
            pen = depth[c] - moved
            corr = pen - slop
            if corr <= 0.0:
                continue
            if corr > max_correction:
                corr = max_correction
            rxa[0] = ra[c, 1] * n2 - ra[c, 2] * n1
            rxa[1] = ra[c, 2] * n0 - ra[c, 0] * n2
            rxa[2] = ra[c, 0] * n1 - ra[c, 1] * n0
            rxb[0] = rb[c, 1] * n2 - rb[c, 2] * n1
            rxb[1] = rb[c, 2] * n0 - rb[c, 0] * n2
            rxb[2] = rb[c, 0] * n1 - rb[c, 1] * n0
            tmp[0] = inv_i[ia, 0, 0] * rxa[0] + inv_i[ia, 0, 1] * rxa[1] + inv_i[ia, 0, 2] * rxa[2]
            tmp[1] = inv_i[ia, 1, 0] * rxa[0] + inv_i[ia, 1, 1] * rxa[1] + inv_i[ia, 1, 2] * rxa[2]
            tmp[2] = inv_i[ia, 2, 0] * rxa[0] + inv_i[ia, 2, 1] * rxa[1] + inv_i[ia, 2, 2] * rxa[2]
            k = inv_m[ia] + inv_m[ib] + rxa[0] * tmp[0] + rxa[1] * tmp[1] + rxa[2] * tmp[2]
            tmp[0] = inv_i[ib, 0, 0] * rxb[0] + inv_i[ib, 0, 1] * rxb[1] + inv_i[ib, 0, 2] * rxb[2]
            tmp[1] = inv_i[ib, 1, 0] * rxb[0] + inv_i[ib, 1, 1] * rxb[1] + inv_i[ib, 1, 2] * rxb[2]
            tmp[2] = inv_i[ib, 2, 0] * rxb[0] + inv_i[ib, 2, 1] * rxb[1] + inv_i[ib, 2, 2] * rxb[2]
            k += rxb[0] * tmp[0] + rxb[1] * tmp[1] + rxb[2] * tmp[2]
            if k <= 0.0:
                continue
            lam = beta * corr / k
            p0 = lam * n0
            p1 = lam * n1
            p2 = lam * n2
            dpos[ia, 0] -= inv_m[ia] * p0
            dpos[ia, 1] -= inv_m[ia] * p1
            dpos[ia, 2] -= inv_m[ia] * p2
            rxa[0] = ra[c, 1] * p2 - ra[c, 2] * p1
            rxa[1] = ra[c, 2] * p0 - ra[c, 0] * p2
            rxa[2] = ra[c, 0] * p1 - ra[c, 1] * p0
            drot[ia, 0] -= inv_i[ia, 0, 0] * rxa[0] + inv_i[ia, 0, 1] * rxa[1] + inv_i[ia, 0, 2] * rxa[2]
            drot[ia, 1] -= inv_i[ia, 1, 0] * rxa[0] + inv_i[ia, 1, 1] * rxa[1] + inv_i[ia, 1, 2] * rxa[2]
            drot[ia, 2] -= inv_i[ia, 2, 0] * rxa[0] + inv_i[ia, 2, 1] * rxa[1] + inv_i[ia, 2, 2] * rxa[2]
            dpos[ib, 0] += inv_m[ib] * p0
            dpos[ib, 1] += inv_m[ib] * p1
            dpos[ib, 2] += inv_m[ib] * p2
            rxb[0] = rb[c, 1] * p2 - rb[c, 2] * p1
            rxb[1] = rb[c, 2] * p0 - rb[c, 0] * p2
            rxb[2] = rb[c, 0] * p1 - rb[c, 1] * p0
            drot[ib, 0] += inv_i[ib, 0, 0] * rxb[0] + inv_i[ib, 0, 1] * rxb[1] + inv_i[ib, 0, 2] * rxb[2]
            drot[ib, 1] += inv_i[ib, 1, 0] * rxb[0] + inv_i[ib, 1, 1] * rxb[1] + inv_i[ib, 1, 2] * rxb[2]
            drot[ib, 2] += inv_i[ib, 2, 0] * rxb[0] + inv_i[ib, 2, 1] * rxb[1] + inv_i[ib, 2, 2] * rxb[2]
    return dpos, drot


def render_heightmap(double x0, double y0, double pixel_size, int width, int height,
                     cnp.ndarray[double, ndim=2] v0, cnp.ndarray[double, ndim=2] v1,
                     cnp.ndarray[double, ndim=2] v2, double floor_z):
    cdef cnp.ndarray[double, ndim=2] z = np.full((height, width), floor_z)
    cdef Py_ssize_t t, ntris = v0.shape[0]
    cdef int c0, c1, r0, r1, rr, cc
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz
    cdef double xmin, xmax, ymin, ymax, area2, sgn, px, py, d0, d1, d2, zt
    for t in range(ntris):
        ax = v0[t, 0]
        ay = v0[t, 1]
        az = v0[t, 2]
        bx = v1[t, 0]
        by = v1[t, 1]
        bz = v1[t, 2]
        cx = v2[t, 0]
        cy = v2[t, 1]
        cz = v2[t, 2]
        xmin = min(ax, min(bx, cx))
        xmax = max(ax, max(bx, cx))
        ymin = min(ay, min(by, cy))
        ymax = max(ay, max(by, cy))
        c0 = <int>floor((xmin - x0) / pixel_size - 0.5)
        c1 = <int>ceil((xmax - x0) / pixel_size - 0.5) + 1
        r0 = <int>floor((ymin - y0) / pixel_size - 0.5)
        r1 = <int>ceil((ymax - y0) / pixel_size - 0.5) + 1
        if c0 < 0:
            c0 = 0
        if r0 < 0:
            r0 = 0
        if c1 > width:
            c1 = width
        if r1 > height:
            r1 = height
        if c0 >= c1 or r0 >= r1:
            continue
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if fabs(area2) < 1e-18:
            continue
        sgn = 1.0 if area2 > 0 else -1.0
        for rr in range(r0, r1):
            py = y0 + (rr + 0.5) * pixel_size
            for cc in range(c0, c1):
                px = x0 + (cc + 0.5) * pixel_size
                d0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                if sgn * d0 < 0:
                    continue
                d1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                if sgn * d1 < 0:
                    continue
                d2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                if sgn * d2 < 0:
                    continue
                zt = (d1 * az + d2 * bz + d0 * cz) / area2
                if zt > z[rr, cc]:
                    z[rr, cc] = zt
    return z
