# cython: language_level=3
"""Compiled versions of the hot kernels in ``_pykernels``.

Signatures and results match the numpy reference; arithmetic is written in
the same order so that agreement is at the round-off level (transcendental
functions may differ in the last ulp between libm and numpy).
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, log, cos, sin, floor, fabs, M_PI
from libc.stdint cimport uint64_t, int64_t, int8_t, uint8_t

cnp.import_array()

BACKEND = "cython"

cdef extern from *:
    """
    #include <stdint.h>
    static inline uint64_t hs_mulhi(uint64_t a, uint64_t b, uint64_t *lo) {
        unsigned __int128 p = (unsigned __int128)a * b;
        *lo = (uint64_t)p;
        return (uint64_t)(p >> 64);
    }
    """
    uint64_t hs_mulhi(uint64_t a, uint64_t b, uint64_t *lo) nogil

cdef uint64_t M0 = 0xD2E7470EE14C6C93
cdef uint64_t M1 = 0xCA5A826395121157
cdef uint64_t W0 = 0x9E3779B97F4A7C15
cdef uint64_t W1 = 0xBB67AE8584CAA73B
cdef uint64_t KEY_HI = 0x6A09E667F3BCC909
cdef double TWO_M53 = 1.0 / 9007199254740992.0
cdef double INF = float("inf")


# ---------------------------------------------------------------------------
# random numbers

cdef inline void philox(uint64_t* c, uint64_t k0, uint64_t k1) noexcept nogil:
    cdef int r
    cdef uint64_t hi0, lo0, hi1, lo1, c1, c3
    for r in range(10):
        if r:
            k0 = k0 + W0
            k1 = k1 + W1
        hi0 = hs_mulhi(M0, c[0], &lo0)
        hi1 = hs_mulhi(M1, c[2], &lo1)
        c1 = c[1]
        c3 = c[3]
        c[0] = hi1 ^ c1 ^ k0
        c[1] = lo1
        c[2] = hi0 ^ c3 ^ k1
        c[3] = lo0


cdef inline void uniforms_at(uint64_t seed, int64_t pid, int64_t step, uint64_t lane,
                             double* u) noexcept nogil:
    cdef uint64_t c[4]
    cdef int j
    c[0] = <uint64_t>step
    c[1] = <uint64_t>pid
    c[2] = lane
    c[3] = 0
    philox(c, seed, KEY_HI)
    for j in range(4):
        u[j] = (<double>(c[j] >> 11) + 0.5) * TWO_M53


cdef inline void normals_at(uint64_t seed, int64_t pid, int64_t step, uint64_t lane,
                            double* z) noexcept nogil:
    cdef double u[4]
    cdef double r, th
    uniforms_at(seed, pid, step, lane, u)
    r = sqrt(-2.0 * log(u[0]))
    th = 2.0 * M_PI * u[1]
    z[0] = r * cos(th)
    z[1] = r * sin(th)
    r = sqrt(-2.0 * log(u[2]))
    th = 2.0 * M_PI * u[3]
    z[2] = r * cos(th)
    z[3] = r * sin(th)


def uniforms4(seed, path_ids, step, lane):
    cdef const int64_t[::1] pid = np.ascontiguousarray(path_ids, dtype=np.int64).ravel()
    cdef const int64_t[::1] st = np.ascontiguousarray(
        np.broadcast_to(np.asarray(step, dtype=np.int64), np.shape(path_ids)), dtype=np.int64).ravel()
    cdef Py_ssize_t n = pid.shape[0], i
    out = np.empty((n, 4), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef uint64_t sd = <uint64_t>int(seed)
    cdef uint64_t ln = <uint64_t>int(lane)
    with nogil:
        for i in range(n):
            uniforms_at(sd, pid[i], st[i], ln, &o[i, 0])
    return out.reshape(np.shape(path_ids) + (4,))


def normals4(seed, path_ids, step, lane):
    cdef const int64_t[::1] pid = np.ascontiguousarray(path_ids, dtype=np.int64).ravel()
    cdef const int64_t[::1] st = np.ascontiguousarray(
        np.broadcast_to(np.asarray(step, dtype=np.int64), np.shape(path_ids)), dtype=np.int64).ravel()
    cdef Py_ssize_t n = pid.shape[0], i
    out = np.empty((n, 4), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef uint64_t sd = <uint64_t>int(seed)
    cdef uint64_t ln = <uint64_t>int(lane)
    with nogil:
        for i in range(n):
            normals_at(sd, pid[i], st[i], ln, &o[i, 0])
    return out.reshape(np.shape(path_ids) + (4,))


# ---------------------------------------------------------------------------
# boundary index

cdef struct BIdx:
    int64_t m
    double* ax
    double* ay
    double* bx
    double* by
    double* tx
    double* ty
    double* elen
    int64_t* e_prev
    int64_t* e_next
    uint8_t* convex
    double tol
    double x0
    double y0
    double cs
    int64_t nx
    int64_t ny
    int8_t* state
    int64_t* cptr
    int64_t* cedges
    int64_t* rptr
    int64_t* redges


cdef int64_t _dummy_i64[1]


cdef BIdx make_bi(object bi) except *:
    cdef BIdx b
    cdef double[::1] ax = bi.ax, ay = bi.ay, bx = bi.bx, by = bi.by
    cdef double[::1] tx = bi.tx, ty = bi.ty, el = bi.elen
    cdef int64_t[::1] ep = bi.e_prev, en = bi.e_next
    cdef uint8_t[::1] cv = bi.convex_u8
    cdef int8_t[::1] st = bi.cell_state
    cdef int64_t[::1] cp = bi.cell_ptr, rp = bi.ray_ptr
    cdef int64_t[::1] ce = bi.cell_edges, re = bi.ray_edges
    b.m = ax.shape[0]
    b.ax = &ax[0]
    b.ay = &ay[0]
    b.bx = &bx[0]
    b.by = &by[0]
    b.tx = &tx[0]
    b.ty = &ty[0]
    b.elen = &el[0]
    b.e_prev = &ep[0]
    b.e_next = &en[0]
    b.convex = &cv[0]
    b.tol = bi.tol
    b.x0 = bi.x0
    b.y0 = bi.y0
    b.cs = bi.cs
    b.nx = bi.nx
    b.ny = bi.ny
    b.state = &st[0]
    b.cptr = &cp[0]
    b.rptr = &rp[0]
    b.cedges = &ce[0] if ce.shape[0] > 0 else _dummy_i64
    b.redges = &re[0] if re.shape[0] > 0 else _dummy_i64
    return b


cdef inline int side_status(BIdx* b, double px, double py, int64_t e, double spar,
                            double dist, int* feat) noexcept nogil:
    cdef int64_t ein, eout
    cdef double vx, vy
    cdef bint lin, lout, inside
    if spar <= 0.0:
        feat[0] = 1
    elif spar >= b.elen[e]:
        feat[0] = 2
    else:
        feat[0] = 0
    if feat[0] == 0:
        inside = b.tx[e] * (py - b.ay[e]) - b.ty[e] * (px - b.ax[e]) > 0.0
    else:
        if feat[0] == 1:
            eout = e
            ein = b.e_prev[e]
        else:
            ein = e
            eout = b.e_next[e]
        vx = b.ax[eout]
        vy = b.ay[eout]
        lin = b.tx[ein] * (py - vy) - b.ty[ein] * (px - vx) > 0.0
        lout = b.tx[eout] * (py - vy) - b.ty[eout] * (px - vx) > 0.0
        if b.convex[eout]:
            inside = lin and lout
        else:
            inside = lin or lout
    if dist <= b.tol:
        return 0
    return 1 if inside else -1


cdef inline int nearest_pt(BIdx* b, double px, double py, bint use_grid,
                           double* qx, double* qy, double* dist, int64_t* edge,
                           int* feat) noexcept nogil:
    """Status (1 interior, 0 boundary, -1 exterior); outputs undefined if the
    grid reports a safely interior cell (edge set to -1)."""
    cdef int64_t ci, cj, cell, k, kk, lo, hi, e, best_e = 0
    cdef double dx, dy, s, ex, ey, d2, best = INF, best_s = 0.0
    cdef bint brute = True
    if use_grid:
        ci = <int64_t>floor((px - b.x0) / b.cs)
        cell = 0
        cj = <int64_t>floor((py - b.y0) / b.cs)
        if 0 <= ci < b.nx and 0 <= cj < b.ny:
            cell = cj * b.nx + ci
            if b.state[cell] == 0:
                edge[0] = -1
                feat[0] = -1
                return 1
            brute = b.state[cell] == 2
    if use_grid and not brute:
        lo = b.cptr[cell]
        hi = b.cptr[cell + 1]
        for kk in range(lo, hi):
            e = b.cedges[kk]
            dx = px - b.ax[e]
            dy = py - b.ay[e]
            s = dx * b.tx[e] + dy * b.ty[e]
            if s < 0.0:
                s = 0.0
            elif s > b.elen[e]:
                s = b.elen[e]
            ex = dx - s * b.tx[e]
            ey = dy - s * b.ty[e]
            d2 = ex * ex + ey * ey
            if d2 < best:
                best = d2
                best_e = e
                best_s = s
    if brute:
        for e in range(b.m):
            dx = px - b.ax[e]
            dy = py - b.ay[e]
            s = dx * b.tx[e] + dy * b.ty[e]
            if s < 0.0:
                s = 0.0
            elif s > b.elen[e]:
                s = b.elen[e]
            ex = dx - s * b.tx[e]
            ey = dy - s * b.ty[e]
            d2 = ex * ex + ey * ey
            if d2 < best:
                best = d2
                best_e = e
                best_s = s
    dist[0] = sqrt(best)
    edge[0] = best_e
    qx[0] = b.ax[best_e] + best_s * b.tx[best_e]
    qy[0] = b.ay[best_e] + best_s * b.ty[best_e]
    return side_status(b, px, py, best_e, best_s, dist[0], feat)


cdef inline int project_pt(BIdx* b, double px, double py, double* qx, double* qy,
                           double* push, int64_t* edge, int* feat) noexcept nogil:
    cdef double fx, fy, dist
    cdef int st = nearest_pt(b, px, py, True, &fx, &fy, &dist, edge, feat)
    if st < 0:
        qx[0] = fx
        qy[0] = fy
        push[0] = dist
    else:
        qx[0] = px
        qy[0] = py
        push[0] = 0.0
        if st > 0:
            edge[0] = -1
            feat[0] = -1
    return st


def nearest_boundary(px, py, bi):
    cdef BIdx b = make_bi(bi)
    cdef const double[::1] x = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(py, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], i
    qx = np.empty(n); qy = np.empty(n); dist = np.empty(n)
    edge = np.empty(n, dtype=np.int64)
    feat = np.empty(n, dtype=np.int8)
    status = np.empty(n, dtype=np.int8)
    cdef double[::1] vqx = qx, vqy = qy, vd = dist
    cdef int64_t[::1] ve = edge
    cdef int8_t[::1] vf = feat, vs = status
    cdef int f
    with nogil:
        for i in range(n):
            vs[i] = nearest_pt(&b, x[i], y[i], False, &vqx[i], &vqy[i], &vd[i], &ve[i], &f)
            vf[i] = f
    return qx, qy, dist, edge, feat, status


def project(px, py, bi):
    cdef BIdx b = make_bi(bi)
    cdef const double[::1] x = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(py, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], i
    qx = np.empty(n); qy = np.empty(n); push = np.empty(n)
    edge = np.empty(n, dtype=np.int64)
    feat = np.empty(n, dtype=np.int8)
    status = np.empty(n, dtype=np.int8)
    cdef double[::1] vqx = qx, vqy = qy, vp = push
    cdef int64_t[::1] ve = edge
    cdef int8_t[::1] vf = feat, vs = status
    cdef int f
    with nogil:
        for i in range(n):
            vs[i] = project_pt(&b, x[i], y[i], &vqx[i], &vqy[i], &vp[i], &ve[i], &f)
            vf[i] = f
    return qx, qy, push, edge, status, feat


cdef inline double ray_pt(BIdx* b, double ox, double oy, double dx, double dy,
                          double t_min, int64_t* edge) noexcept nogil:
    cdef double best = INF, t, s, den, wx, wy, ex, ey
    cdef int64_t best_e = -1, e, kk, ci, cj, stx, sty, cell
    cdef double tmx, tmy, tdx, tdy, texit
    cdef bint brute = True
    ci = <int64_t>floor((ox - b.x0) / b.cs)
    cj = <int64_t>floor((oy - b.y0) / b.cs)
    if 0 <= ci < b.nx and 0 <= cj < b.ny:
        brute = False
        stx = 1 if dx > 0 else -1
        sty = 1 if dy > 0 else -1
        if dx != 0.0:
            tmx = (b.x0 + (ci + (1 if dx > 0 else 0)) * b.cs - ox) / dx
            tdx = b.cs / fabs(dx)
        else:
            tmx = INF
            tdx = INF
        if dy != 0.0:
            tmy = (b.y0 + (cj + (1 if dy > 0 else 0)) * b.cs - oy) / dy
            tdy = b.cs / fabs(dy)
        else:
            tmy = INF
            tdy = INF
        while True:
            cell = cj * b.nx + ci
            for kk in range(b.rptr[cell], b.rptr[cell + 1]):
                e = b.redges[kk]
                ex = b.bx[e] - b.ax[e]
                ey = b.by[e] - b.ay[e]
                den = dx * ey - dy * ex
                if den == 0.0:
                    continue
                wx = b.ax[e] - ox
                wy = b.ay[e] - oy
                t = (wx * ey - wy * ex) / den
                s = (wx * dy - wy * dx) / den
                if s >= 0.0 and s <= 1.0 and t > t_min:
                    if t < best or (t == best and e < best_e):
                        best = t
                        best_e = e
            texit = tmx if tmx < tmy else tmy
            if best <= texit:
                break
            if tmx < tmy:
                ci += stx
                tmx += tdx
            else:
                cj += sty
                tmy += tdy
            if ci < 0 or ci >= b.nx or cj < 0 or cj >= b.ny:
                break
    if brute:
        for e in range(b.m):
            ex = b.bx[e] - b.ax[e]
            ey = b.by[e] - b.ay[e]
            den = dx * ey - dy * ex
            if den == 0.0:
                continue
            wx = b.ax[e] - ox
            wy = b.ay[e] - oy
            t = (wx * ey - wy * ex) / den
            s = (wx * dy - wy * dx) / den
            if s >= 0.0 and s <= 1.0 and t > t_min:
                if t < best:
                    best = t
                    best_e = e
    edge[0] = best_e
    return best


def ray_first_hit(ox, oy, dx, dy, bi, t_min=0.0):
    cdef BIdx b = make_bi(bi)
    cdef const double[::1] x = np.ascontiguousarray(ox, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(oy, dtype=np.float64)
    cdef const double[::1] u = np.ascontiguousarray(dx, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], i
    cdef double tm = t_min
    hx = np.empty(n); hy = np.empty(n); tt = np.empty(n)
    edge = np.empty(n, dtype=np.int64)
    cdef double[::1] vhx = hx, vhy = hy, vt = tt
    cdef int64_t[::1] ve = edge
    with nogil:
        for i in range(n):
            vt[i] = ray_pt(&b, x[i], y[i], u[i], v[i], tm, &ve[i])
            vhx[i] = x[i] + vt[i] * u[i]
            vhy[i] = y[i] + vt[i] * v[i]
    return hx, hy, tt, edge


# ---------------------------------------------------------------------------
# P1 location

cdef struct Loc:
    double* x
    double* y
    int64_t* tri
    double x0
    double y0
    double cs
    int64_t nx
    int64_t ny
    int64_t* ptr
    int64_t* items
    double tol


cdef Loc make_loc(object loc) except *:
    cdef Loc L
    cdef double[::1] x = loc.x, y = loc.y
    cdef int64_t[:, ::1] tri = loc.tri
    cdef int64_t[::1] ptr = loc.ptr, items = loc.items
    L.x = &x[0]
    L.y = &y[0]
    L.tri = &tri[0, 0]
    L.x0 = loc.x0
    L.y0 = loc.y0
    L.cs = loc.cs
    L.nx = loc.nx
    L.ny = loc.ny
    L.ptr = &ptr[0]
    L.items = &items[0] if items.shape[0] > 0 else _dummy_i64
    L.tol = loc.tol
    return L


cdef inline int64_t locate_pt(Loc* L, double px, double py, double* bary) noexcept nogil:
    cdef int64_t ci, cj, cell, kk, t, a, bb, c, best_t = -1
    cdef double xa, ya, xb, yb, xc, yc, det, l1, l2, l0, m, best = -INF
    ci = <int64_t>floor((px - L.x0) / L.cs)
    cj = <int64_t>floor((py - L.y0) / L.cs)
    if ci < 0 or ci >= L.nx or cj < 0 or cj >= L.ny:
        return -1
    cell = cj * L.nx + ci
    for kk in range(L.ptr[cell], L.ptr[cell + 1]):
        t = L.items[kk]
        a = L.tri[3 * t]
        bb = L.tri[3 * t + 1]
        c = L.tri[3 * t + 2]
        xa = L.x[a]; ya = L.y[a]
        xb = L.x[bb]; yb = L.y[bb]
        xc = L.x[c]; yc = L.y[c]
        det = (xb - xa) * (yc - ya) - (xc - xa) * (yb - ya)
        l1 = ((px - xa) * (yc - ya) - (xc - xa) * (py - ya)) / det
        l2 = ((xb - xa) * (py - ya) - (px - xa) * (yb - ya)) / det
        l0 = 1.0 - l1 - l2
        m = l0
        if l1 < m:
            m = l1
        if l2 < m:
            m = l2
        if m > best:
            best = m
            best_t = t
            bary[0] = l0
            bary[1] = l1
            bary[2] = l2
    if best < -L.tol:
        return -1
    return best_t


cdef inline double interp_pt(Loc* L, double* vals, double px, double py, double fill) noexcept nogil:
    cdef double bary[3]
    cdef int64_t t = locate_pt(L, px, py, bary)
    if t < 0:
        return fill
    return (vals[L.tri[3 * t]] * bary[0] + vals[L.tri[3 * t + 1]] * bary[1]) + vals[L.tri[3 * t + 2]] * bary[2]


def locate(px, py, loc):
    cdef Loc L = make_loc(loc)
    cdef const double[::1] x = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(py, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], i
    tri = np.empty(n, dtype=np.int64)
    bary = np.zeros((n, 3))
    cdef int64_t[::1] vt = tri
    cdef double[:, ::1] vb = bary
    with nogil:
        for i in range(n):
            vt[i] = locate_pt(&L, x[i], y[i], &vb[i, 0])
            if vt[i] < 0:
                vb[i, 0] = 0.0
                vb[i, 1] = 0.0
                vb[i, 2] = 0.0
    return tri, bary


def interpolate(px, py, values, loc, fill=np.nan):
    cdef Loc L = make_loc(loc)
    cdef const double[::1] x = np.ascontiguousarray(px, dtype=np.float64).ravel()
    cdef const double[::1] y = np.ascontiguousarray(py, dtype=np.float64).ravel()
    cdef const double[::1] vals = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], i
    cdef double fl = fill
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = interp_pt(&L, &vals[0], x[i], y[i], fl)
    return out.reshape(np.shape(px))


# ---------------------------------------------------------------------------
# level-curve tube test

cdef struct Gam:
    Loc loc
    double* vals
    double level
    double x_min
    double tol
    int64_t nseg
    double* sax
    double* say
    double* stx
    double* sty
    double* slen


cdef double _dummy_d[1]


cdef Gam make_gam(object gam) except *:
    cdef Gam G
    cdef double[::1] vals = gam.values
    cdef double[::1] sax = gam.seg_ax, say = gam.seg_ay
    cdef double[::1] stx = gam.seg_tx, sty = gam.seg_ty, sl = gam.seg_len
    G.loc = make_loc(gam.loc)
    G.vals = &vals[0]
    G.level = gam.level
    G.x_min = gam.x_min
    G.tol = gam.tol
    G.nseg = sax.shape[0]
    if G.nseg > 0:
        G.sax = &sax[0]; G.say = &say[0]; G.stx = &stx[0]; G.sty = &sty[0]; G.slen = &sl[0]
    else:
        G.sax = _dummy_d; G.say = _dummy_d; G.stx = _dummy_d; G.sty = _dummy_d; G.slen = _dummy_d
    return G


cdef inline bint gamma_pt(Gam* G, double px, double py) noexcept nogil:
    cdef double val, dx, dy, s, ex, ey, d2
    cdef int64_t k
    if px < G.x_min:
        return False
    val = interp_pt(&G.loc, G.vals, px, py, INF)
    if val <= G.level:
        return True
    for k in range(G.nseg):
        dx = px - G.sax[k]
        dy = py - G.say[k]
        s = dx * G.stx[k] + dy * G.sty[k]
        if s < 0.0:
            s = 0.0
        elif s > G.slen[k]:
            s = G.slen[k]
        ex = dx - s * G.stx[k]
        ey = dy - s * G.sty[k]
        d2 = ex * ex + ey * ey
        if d2 <= G.tol * G.tol:
            return True
    return False


def gamma_hit(px, py, gam):
    cdef Gam G = make_gam(gam)
    cdef const double[::1] x = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(py, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], i
    out = np.zeros(n, dtype=bool)
    cdef uint8_t[::1] o = out.view(np.uint8)
    with nogil:
        for i in range(n):
            o[i] = gamma_pt(&G, x[i], y[i])
    return out


# ---------------------------------------------------------------------------
# mirror coupling

cdef inline bint hinge_pt(BIdx* b, double mx, double my, double nx, double ny, int64_t e,
                          double* hx, double* hy) noexcept nogil:
    cdef double dmx = -ny, dmy = nx, tx = b.tx[e], ty = b.ty[e]
    cdef double den = dmx * ty - dmy * tx, wx, wy, alpha
    if not fabs(den) > 1e-12:
        hx[0] = mx
        hy[0] = my
        return False
    wx = b.ax[e] - mx
    wy = b.ay[e] - my
    alpha = (wx * ty - wy * tx) / den
    hx[0] = mx + alpha * dmx
    hy[0] = my + alpha * dmy
    return True


cdef inline void polar_fix(BIdx* b, double mx, double my, double nx, double ny,
                           double cx, double cy, int64_t e, double* qx, double* qy,
                           double* push) noexcept nogil:
    """Replace the nearest-point projection by the hinge-preserving one when valid."""
    cdef double hx, hy, rx, ry, r, tx, ty, sg, px2, py2, s, jx, jy, jump
    if not hinge_pt(b, mx, my, nx, ny, e, &hx, &hy):
        return
    rx = cx - hx
    ry = cy - hy
    r = sqrt(rx * rx + ry * ry)
    tx = b.tx[e]
    ty = b.ty[e]
    sg = -1.0 if rx * tx + ry * ty < 0.0 else 1.0
    px2 = hx + sg * r * tx
    py2 = hy + sg * r * ty
    s = (px2 - b.ax[e]) * tx + (py2 - b.ay[e]) * ty
    jx = px2 - cx
    jy = py2 - cy
    jump = sqrt(jx * jx + jy * jy)
    if s >= 0.0 and s <= b.elen[e] and jump <= 4.0 * push[0]:
        qx[0] = px2
        qy[0] = py2
        push[0] = jump


cdef inline bint mirror_pt(BIdx* b, double* xx, double* xy, double* yx, double* yy,
                           double dwx, double dwy, bint co, double coal_tol,
                           double* pushx, double* pushy, int64_t* ex, int64_t* ey) noexcept nogil:
    """Advance one pair in place; returns the new coalesced flag."""
    cdef double vx = yx[0] - xx[0], vy = yy[0] - xy[0]
    cdef double d = sqrt(vx * vx + vy * vy)
    cdef bint live = (not co) and d > 0.0
    cdef double nx = 0.0, ny = 0.0, dot, cxx, cxy, cyx, cyy, mx, my
    cdef double pxx, pxy, pyx, pyy, wx, wy, sep
    cdef int sx, sy, fx, fy
    if live:
        nx = vx / d
        ny = vy / d
    dot = dwx * nx + dwy * ny
    cxx = xx[0] + dwx
    cxy = xy[0] + dwy
    if live:
        cyx = yx[0] + (dwx - 2.0 * dot * nx)
        cyy = yy[0] + (dwy - 2.0 * dot * ny)
    else:
        cyx = cxx
        cyy = cxy
    sx = project_pt(b, cxx, cxy, &pxx, &pxy, pushx, ex, &fx)
    sy = project_pt(b, cyx, cyy, &pyx, &pyy, pushy, ey, &fy)
    mx = 0.5 * (xx[0] + yx[0])
    my = 0.5 * (xy[0] + yy[0])
    if live and sx < 0 and sy >= 0 and fx == 0:
        polar_fix(b, mx, my, nx, ny, cxx, cxy, ex[0], &pxx, &pxy, pushx)
    if live and sy < 0 and sx >= 0 and fy == 0:
        polar_fix(b, mx, my, nx, ny, cyx, cyy, ey[0], &pyx, &pyy, pushy)
    if not live:
        pyx = pxx
        pyy = pxy
        pushy[0] = pushx[0]
        ey[0] = ex[0]
    xx[0] = pxx
    xy[0] = pxy
    if live:
        wx = pyx - pxx
        wy = pyy - pxy
        sep = sqrt(wx * wx + wy * wy)
        if sep <= coal_tol or wx * vx + wy * vy <= 0.0:
            yx[0] = pxx
            yy[0] = pxy
            return True
        yx[0] = pyx
        yy[0] = pyy
        return False
    yx[0] = pxx
    yy[0] = pxy
    return True


def mirror_step(xx, xy, yx, yy, dwx, dwy, coalesced, bi, coal_tol):
    cdef BIdx b = make_bi(bi)
    cdef double[::1] X = np.array(xx, dtype=np.float64), XY = np.array(xy, dtype=np.float64)
    cdef double[::1] Y = np.array(yx, dtype=np.float64), YY = np.array(yy, dtype=np.float64)
    cdef const double[::1] wx = np.ascontiguousarray(dwx, dtype=np.float64)
    cdef const double[::1] wy = np.ascontiguousarray(dwy, dtype=np.float64)
    cdef const uint8_t[::1] co_in = np.ascontiguousarray(coalesced, dtype=np.uint8)
    cdef Py_ssize_t n = X.shape[0], i
    cdef double ct = coal_tol
    co = np.empty(n, dtype=bool)
    px_ = np.empty(n); py_ = np.empty(n)
    ex_ = np.empty(n, dtype=np.int64); ey_ = np.empty(n, dtype=np.int64)
    cdef uint8_t[::1] vco = co.view(np.uint8)
    cdef double[::1] vpx = px_, vpy = py_
    cdef int64_t[::1] vex = ex_, vey = ey_
    with nogil:
        for i in range(n):
            vco[i] = mirror_pt(&b, &X[i], &XY[i], &Y[i], &YY[i], wx[i], wy[i], co_in[i], ct,
                               &vpx[i], &vpy[i], &vex[i], &vey[i])
    return (np.asarray(X), np.asarray(XY), np.asarray(Y), np.asarray(YY), co,
            px_, py_, ex_, ey_)


cdef inline double left_k2(BIdx* b, double xx, double xy, double yx, double yy) noexcept nogil:
    cdef double mx = 0.5 * (xx + yx), my = 0.5 * (xy + yy)
    cdef double vx = yx - xx, vy = yy - xy, t
    cdef int64_t e
    t = ray_pt(b, mx, my, -vy, vx, 0.0, &e)
    if e < 0:
        return INF
    return my + t * vx


def mirror_advance(xx, xy, yx, yy, coalesced, path_ids, step0, seed, lane, dt,
                   max_steps, bi, gam, coal_tol, k_check, k_tol, both=False):
    cdef BIdx b = make_bi(bi)
    cdef Gam G = make_gam(gam)
    cdef double[::1] X = np.array(xx, dtype=np.float64), XY = np.array(xy, dtype=np.float64)
    cdef double[::1] Y = np.array(yx, dtype=np.float64), YY = np.array(yy, dtype=np.float64)
    cdef uint8_t[::1] co = np.array(coalesced, dtype=np.uint8)
    cdef const int64_t[::1] pid = np.ascontiguousarray(path_ids, dtype=np.int64)
    cdef const int64_t[::1] st0 = np.ascontiguousarray(step0, dtype=np.int64)
    cdef Py_ssize_t n = X.shape[0], i
    cdef int64_t k, kmax = max_steps
    cdef uint64_t sd = <uint64_t>int(seed)
    cdef uint64_t ln = <uint64_t>int(lane)
    cdef double sq = sqrt(dt), ct = coal_tol, ktol = k_tol, k2
    cdef bint kc = bool(k_check), hx, hy, was, nco, bth = bool(both), first
    steps = np.zeros(n, dtype=np.int64)
    code = np.zeros(n, dtype=np.int8)
    cstep = np.full(n, -1, dtype=np.int64)
    vstep = np.full(n, -1, dtype=np.int64)
    hitx = np.full(n, -1, dtype=np.int64)
    hity = np.full(n, -1, dtype=np.int64)
    xtyx = np.full(n, np.nan)
    xtyy = np.full(n, np.nan)
    ytxx = np.full(n, np.nan)
    ytxy = np.full(n, np.nan)
    kmin = np.full(n, np.inf)
    ltx = np.zeros(n)
    lty = np.zeros(n)
    cdef int64_t[::1] vsteps = steps, vc = cstep, vv = vstep, vhx = hitx, vhy = hity
    cdef int8_t[::1] vcode = code
    cdef double[::1] vk = kmin, vlx = ltx, vly = lty, vxx = xtyx, vxy = xtyy, vyx = ytxx, vyy = ytxy
    cdef double z[4]
    cdef double pushx, pushy
    cdef int64_t ex, ey
    with nogil:
        for i in range(n):
            if co[i]:
                vc[i] = 0
            hx = gamma_pt(&G, X[i], XY[i])
            hy = gamma_pt(&G, Y[i], YY[i])
            if hx:
                vhx[i] = 0
                vyx[i] = Y[i]
                vyy[i] = YY[i]
            if hy:
                vhy[i] = 0
                vxx[i] = X[i]
                vxy[i] = XY[i]
            if hx or hy:
                vcode[i] = 3 if (hx and hy) else (1 if hx else 2)
                if not bth or (hx and hy):
                    continue
            elif kc and not co[i]:
                k2 = left_k2(&b, X[i], XY[i], Y[i], YY[i])
                if k2 < vk[i]:
                    vk[i] = k2
                if k2 < -ktol:
                    vv[i] = 0
            for k in range(kmax):
                normals_at(sd, pid[i], st0[i] + k, ln, z)
                was = co[i]
                nco = mirror_pt(&b, &X[i], &XY[i], &Y[i], &YY[i], sq * z[0], sq * z[1], was, ct,
                                &pushx, &pushy, &ex, &ey)
                vlx[i] += pushx
                vly[i] += pushy
                if nco and not was:
                    vc[i] = k + 1
                co[i] = nco
                vsteps[i] = k + 1
                first = vcode[i] == 0
                if first and kc and not nco and (pushx > 0.0 or pushy > 0.0):
                    k2 = left_k2(&b, X[i], XY[i], Y[i], YY[i])
                    if k2 < vk[i]:
                        vk[i] = k2
                    if k2 < -ktol and vv[i] < 0:
                        vv[i] = k + 1
                hx = vhx[i] < 0 and gamma_pt(&G, X[i], XY[i])
                hy = vhy[i] < 0 and gamma_pt(&G, Y[i], YY[i])
                if hx:
                    vhx[i] = k + 1
                    vyx[i] = Y[i]
                    vyy[i] = YY[i]
                if hy:
                    vhy[i] = k + 1
                    vxx[i] = X[i]
                    vxy[i] = XY[i]
                if first and (hx or hy):
                    vcode[i] = 3 if (hx and hy) else (1 if hx else 2)
                if vcode[i] != 0 and (not bth or (vhx[i] >= 0 and vhy[i] >= 0)):
                    break
    return dict(xx=np.asarray(X), xy=np.asarray(XY), yx=np.asarray(Y), yy=np.asarray(YY),
                steps=steps, code=code, coal_step=cstep, viol_step=vstep, k_min=kmin,
                lt_x=ltx, lt_y=lty, coalesced=np.asarray(co).astype(bool),
                hit_x=hitx, hit_y=hity, x_at_ty_x=xtyx, x_at_ty_y=xtyy,
                y_at_tx_x=ytxx, y_at_tx_y=ytxy)
