"""Numpy implementations of the hot kernels.

These are the reference versions.  The compiled module ``_ckernels`` exposes
the same functions with the same signatures and is used when it imports.
Every function here operates on whole batches; per-path Python loops are
avoided except in the rare bridge subdivision of the skew-product sampler.
"""
import numpy as np

BACKEND = "numpy"

# Philox4x64-10 constants (Salmon et al. 2011), identical to numpy.random.Philox.
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
KEY_HI = 0x6A09E667F3BCC909  # fixed second key word


def _mulhilo(a, b):
    a0 = a & _LO
    a1 = a >> _S32
    b0 = b & _LO
    b1 = b >> _S32
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> _S32) + (p01 & _LO) + (p10 & _LO)
    hi = p11 + (p01 >> _S32) + (p10 >> _S32) + (mid >> _S32)
    return hi, a * b


def philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x64 block function on uint64 arrays."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    with np.errstate(over="ignore"):
        for r in range(10):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def uniforms4(seed, path_ids, step, lane):
    """Four open-interval uniforms per path, keyed by (seed, path, step, lane).

    Returns an array of shape (n, 4).  ``step`` may be a scalar or an array
    aligned with ``path_ids``.
    """
    pid = np.asarray(path_ids, dtype=np.int64).astype(np.uint64)
    st = np.broadcast_to(np.asarray(step, dtype=np.int64), pid.shape).astype(np.uint64)
    ln = np.full(pid.shape, lane, dtype=np.uint64)
    zero = np.zeros(pid.shape, dtype=np.uint64)
    out = philox4x64(st, pid, ln, zero, np.uint64(seed), np.uint64(KEY_HI))
    u = np.empty(pid.shape + (4,), dtype=np.float64)
    for j in range(4):
        u[..., j] = ((out[j] >> _S11).astype(np.float64) + 0.5) * 2.0**-53
    return u


def normals4(seed, path_ids, step, lane):
    """Four standard normals per path via Box-Muller on ``uniforms4``."""
    u = uniforms4(seed, path_ids, step, lane)
    z = np.empty_like(u)
    for a, b in ((0, 1), (2, 3)):
        r = np.sqrt(-2.0 * np.log(u[..., a]))
        th = 2.0 * np.pi * u[..., b]
        z[..., a] = r * np.cos(th)
        z[..., b] = r * np.sin(th)
    return z


# ---------------------------------------------------------------------------
# boundary queries


def nearest_boundary(px, py, bi):
    """Nearest boundary point for arrays of points (brute force over edges).

    Returns ``(qx, qy, dist, edge, feature, inside)`` where ``feature`` is 0 for
    an edge interior, 1 for the start vertex and 2 for the end vertex of
    ``edge``; ``inside`` is 1 for interior, 0 for on-boundary (within
    ``bi.tol``) and -1 for exterior.
    """
    px = np.ascontiguousarray(px, dtype=np.float64)
    py = np.ascontiguousarray(py, dtype=np.float64)
    n = px.shape[0]
    best = np.full(n, np.inf)
    edge = np.zeros(n, dtype=np.int64)
    spar = np.zeros(n)
    chunk = max(1, 2_000_000 // max(1, bi.n_edges))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        dx = px[lo:hi, None] - bi.ax[None, :]
        dy = py[lo:hi, None] - bi.ay[None, :]
        s = np.clip(dx * bi.tx + dy * bi.ty, 0.0, bi.elen)
        ex = dx - s * bi.tx
        ey = dy - s * bi.ty
        d2 = ex * ex + ey * ey
        k = np.argmin(d2, axis=1)  # first minimum -> lowest edge id on ties
        rows = np.arange(hi - lo)
        best[lo:hi] = d2[rows, k]
        edge[lo:hi] = k
        spar[lo:hi] = s[rows, k]
    dist = np.sqrt(best)
    return _finish_nearest(px, py, dist, edge, spar, bi)


def _finish_nearest(px, py, dist, edge, spar, bi):
    tx = bi.tx[edge]
    ty = bi.ty[edge]
    ax = bi.ax[edge]
    ay = bi.ay[edge]
    qx = ax + spar * tx
    qy = ay + spar * ty
    feature = np.where(spar <= 0.0, 1, np.where(spar >= bi.elen[edge], 2, 0))
    # side tests; interior feature: left of the edge
    left = tx * (py - ay) - ty * (px - ax) > 0.0
    inside = left.copy()
    fs = feature == 1
    if fs.any():
        e_out = edge[fs]
        e_in = bi.e_prev[e_out]
        vx = bi.ax[e_out]
        vy = bi.ay[e_out]
        l_in = bi.tx[e_in] * (py[fs] - vy) - bi.ty[e_in] * (px[fs] - vx) > 0.0
        l_out = bi.tx[e_out] * (py[fs] - vy) - bi.ty[e_out] * (px[fs] - vx) > 0.0
        cv = bi.convex_start[e_out]
        inside[fs] = np.where(cv, l_in & l_out, l_in | l_out)
    fe = feature == 2
    if fe.any():
        e_in = edge[fe]
        e_out = bi.e_next[e_in]
        vx = bi.ax[e_out]
        vy = bi.ay[e_out]
        l_in = bi.tx[e_in] * (py[fe] - vy) - bi.ty[e_in] * (px[fe] - vx) > 0.0
        l_out = bi.tx[e_out] * (py[fe] - vy) - bi.ty[e_out] * (px[fe] - vx) > 0.0
        cv = bi.convex_start[e_out]
        inside[fe] = np.where(cv, l_in & l_out, l_in | l_out)
    status = np.where(dist <= bi.tol, 0, np.where(inside, 1, -1)).astype(np.int8)
    return qx, qy, dist, edge, feature.astype(np.int8), status


def project(px, py, bi):
    """Nearest-point projection of exterior points onto the boundary.

    Interior and on-boundary points are returned unchanged with push 0.
    Returns ``(qx, qy, push, edge, status, feature)``; ``edge`` and
    ``feature`` are -1 for interior points.
    """
    qx, qy, dist, edge, feature, status = nearest_boundary(px, py, bi)
    out = status < 0
    rx = np.where(out, qx, px)
    ry = np.where(out, qy, py)
    push = np.where(out, dist, 0.0)
    e = np.where(status <= 0, edge, -1)
    f = np.where(status <= 0, feature, -1).astype(np.int8)
    return rx, ry, push, e, status, f


def ray_first_hit(ox, oy, dx, dy, bi, t_min=0.0):
    """First boundary crossing of rays ``o + t d`` with ``t > t_min``.

    Returns ``(hx, hy, t, edge)``; ``edge`` is -1 (and t = inf) if the ray
    never meets the boundary.
    """
    ox = np.asarray(ox, dtype=np.float64)[:, None]
    oy = np.asarray(oy, dtype=np.float64)[:, None]
    dx = np.asarray(dx, dtype=np.float64)[:, None]
    dy = np.asarray(dy, dtype=np.float64)[:, None]
    ex = (bi.bx - bi.ax)[None, :]
    ey = (bi.by - bi.ay)[None, :]
    den = dx * ey - dy * ex
    wx = bi.ax[None, :] - ox
    wy = bi.ay[None, :] - oy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wx * ey - wy * ex) / den
        s = (wx * dy - wy * dx) / den
    ok = (den != 0.0) & (s >= 0.0) & (s <= 1.0) & (t > t_min)
    t = np.where(ok, t, np.inf)
    k = np.argmin(t, axis=1)
    rows = np.arange(t.shape[0])
    tb = t[rows, k]
    edge = np.where(np.isfinite(tb), k, -1)
    with np.errstate(invalid="ignore"):
        hx = ox[:, 0] + tb * dx[:, 0]
        hy = oy[:, 0] + tb * dy[:, 0]
    return hx, hy, tb, edge


# ---------------------------------------------------------------------------
# P1 point location


def locate(px, py, loc):
    """Triangle index and barycentric coordinates for each point (-1 if none)."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    n = px.shape[0]
    tri = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    ci = np.floor((px - loc.x0) / loc.cs).astype(np.int64)
    cj = np.floor((py - loc.y0) / loc.cs).astype(np.int64)
    ok = (ci >= 0) & (ci < loc.nx) & (cj >= 0) & (cj < loc.ny)
    idx = np.nonzero(ok)[0]
    cell = cj[idx] * loc.nx + ci[idx]
    best = np.full(idx.shape[0], -np.inf)
    for pos in range(loc.max_per_cell):
        has = loc.ptr[cell] + pos < loc.ptr[cell + 1]
        if not has.any():
            break
        sel = np.nonzero(has)[0]
        t = loc.items[loc.ptr[cell[sel]] + pos]
        b = _bary(px[idx[sel]], py[idx[sel]], t, loc)
        m = b.min(axis=1)
        better = m > best[sel]
        best[sel[better]] = m[better]
        tri[idx[sel[better]]] = t[better]
        bary[idx[sel[better]]] = b[better]
    rejected = ok.nonzero()[0][best < -loc.tol]
    tri[rejected] = -1
    bary[rejected] = 0.0
    return tri, bary


def _bary(px, py, t, loc):
    a = loc.tri[t, 0]
    b = loc.tri[t, 1]
    c = loc.tri[t, 2]
    xa, ya = loc.x[a], loc.y[a]
    xb, yb = loc.x[b], loc.y[b]
    xc, yc = loc.x[c], loc.y[c]
    det = (xb - xa) * (yc - ya) - (xc - xa) * (yb - ya)
    l1 = ((px - xa) * (yc - ya) - (xc - xa) * (py - ya)) / det
    l2 = ((xb - xa) * (py - ya) - (px - xa) * (yb - ya)) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def interpolate(px, py, values, loc, fill=np.nan):
    tri, bary = locate(px, py, loc)
    out = np.full(np.shape(px), fill, dtype=np.float64)
    ok = tri >= 0
    if ok.any():
        nodes = loc.tri[tri[ok]]
        out[ok] = np.einsum("ij,ij->i", values[nodes], bary[ok])
    return out


# ---------------------------------------------------------------------------
# coupled steps


def hinge_point(mx, my, nx, ny, e, bi):
    """Intersection of the mirror (through m, normal n) with the line of edge e.

    Returns ``(hx, hy, ok)``; ``ok`` is False where the mirror is parallel to
    the edge line.
    """
    dmx = -ny
    dmy = nx
    tx = bi.tx[e]
    ty = bi.ty[e]
    den = dmx * ty - dmy * tx
    ok = np.abs(den) > 1e-12
    wx = bi.ax[e] - mx
    wy = bi.ay[e] - my
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(ok, (wx * ty - wy * tx) / np.where(ok, den, 1.0), 0.0)
    return mx + alpha * dmx, my + alpha * dmy, ok


def mirror_step(xx, xy, yx, yy, dwx, dwy, coalesced, bi, coal_tol):
    """One Cartesian mirror-coupling step for a batch of pairs.

    X moves by dW, Y by dW reflected across the current mirror (the
    perpendicular bisector of X and Y).  When exactly one particle leaves
    the domain across the interior of an edge it is moved back in polar
    coordinates about the hinge (mirror meets edge line), which keeps both
    particles equidistant from the hinge.  Otherwise exterior candidates are
    projected to the nearest boundary point.  Pairs whose separation drops to
    ``coal_tol`` or whose order along the mirror normal flips coalesce.

    Returns ``(xx, xy, yx, yy, coalesced, push_x, push_y, edge_x, edge_y)``.
    """
    vx = yx - xx
    vy = yy - xy
    d = np.sqrt(vx * vx + vy * vy)
    live = ~coalesced & (d > 0.0)
    dsafe = np.where(live, d, 1.0)
    nx = vx / dsafe
    ny = vy / dsafe
    dot = dwx * nx + dwy * ny
    cxx = xx + dwx
    cxy = xy + dwy
    cyx = np.where(live, yx + (dwx - 2.0 * dot * nx), cxx)
    cyy = np.where(live, yy + (dwy - 2.0 * dot * ny), cxy)
    pxx, pxy, pushx, ex, sx, fx = project(cxx, cxy, bi)
    pyx, pyy, pushy, ey, sy, fy = project(cyx, cyy, bi)
    mx = 0.5 * (xx + yx)
    my = 0.5 * (xy + yy)
    for who in (0, 1):
        if who == 0:
            sel = live & (sx < 0) & (sy >= 0) & (fx == 0)
            cx_, cy_, push, e = cxx, cxy, pushx, ex
        else:
            sel = live & (sy < 0) & (sx >= 0) & (fy == 0)
            cx_, cy_, push, e = cyx, cyy, pushy, ey
        if not sel.any():
            continue
        idx = np.nonzero(sel)[0]
        ee = e[idx]
        hx, hy, ok = hinge_point(mx[idx], my[idx], nx[idx], ny[idx], ee, bi)
        rx = cx_[idx] - hx
        ry = cy_[idx] - hy
        r = np.sqrt(rx * rx + ry * ry)
        tx = bi.tx[ee]
        ty = bi.ty[ee]
        sg = np.where(rx * tx + ry * ty < 0.0, -1.0, 1.0)
        qx = hx + sg * r * tx
        qy = hy + sg * r * ty
        s = (qx - bi.ax[ee]) * tx + (qy - bi.ay[ee]) * ty
        jx = qx - cx_[idx]
        jy = qy - cy_[idx]
        jump = np.sqrt(jx * jx + jy * jy)
        good = ok & (s >= 0.0) & (s <= bi.elen[ee]) & (jump <= 4.0 * push[idx])
        gi = idx[good]
        if who == 0:
            pxx[gi] = qx[good]
            pxy[gi] = qy[good]
            pushx[gi] = jump[good]
        else:
            pyx[gi] = qx[good]
            pyy[gi] = qy[good]
            pushy[gi] = jump[good]
    pyx = np.where(live, pyx, pxx)
    pyy = np.where(live, pyy, pxy)
    pushy = np.where(live, pushy, pushx)
    wx = pyx - pxx
    wy = pyy - pxy
    sep = np.sqrt(wx * wx + wy * wy)
    meet = live & ((sep <= coal_tol) | (wx * vx + wy * vy <= 0.0))
    pyx = np.where(meet, pxx, pyx)
    pyy = np.where(meet, pxy, pyy)
    co = coalesced | meet | (~live)
    return pxx, pxy, pyx, pyy, co, pushx, pushy, ex, np.where(live, ey, ex)


def gamma_hit(px, py, gam):
    """Level-curve tube test: phi_h(p) <= a or dist(p, Gamma) <= tol."""
    out = np.zeros(px.shape, dtype=bool)
    cand = px >= gam.x_min
    if not cand.any():
        return out
    idx = np.nonzero(cand)[0]
    val = interpolate(px[idx], py[idx], gam.values, gam.loc, fill=np.inf)
    hit = val <= gam.level
    if gam.seg_ax.size:
        dx = px[idx, None] - gam.seg_ax[None, :]
        dy = py[idx, None] - gam.seg_ay[None, :]
        s = np.clip(dx * gam.seg_tx + dy * gam.seg_ty, 0.0, gam.seg_len)
        ex = dx - s * gam.seg_tx
        ey = dy - s * gam.seg_ty
        hit |= (ex * ex + ey * ey).min(axis=1) <= gam.tol * gam.tol
    out[idx] = hit
    return out


def left_mirror_hit(xx, xy, yx, yy, bi):
    """Boundary point K where the mirror meets the boundary on the left of X->Y."""
    mx = 0.5 * (xx + yx)
    my = 0.5 * (xy + yy)
    vx = yx - xx
    vy = yy - xy
    hx, hy, t, e = ray_first_hit(mx, my, -vy, vx, bi, 0.0)
    return hx, hy, e


def mirror_advance(xx, xy, yx, yy, coalesced, path_ids, step0, seed, lane, dt,
                   max_steps, bi, gam, coal_tol, k_check, k_tol, both=False):
    """Run mirror-coupled pairs until one of them hits the level curve.

    Arrays are per run.  With ``both`` the run continues until each particle
    has hit.  Returns a dict with the final positions, number of steps
    taken, first-hit code (0 censored, 1 X first, 2 Y first, 3 same step),
    per-particle hit steps (-1 if none), the position of each particle at
    the other's hit,
    coalescence step (-1 if none), first confinement-violation step before
    the first hit (-1 if none), minimum observed K_2 and local times.
    """
    n = xx.shape[0]
    xx = xx.astype(np.float64).copy()
    xy = xy.astype(np.float64).copy()
    yx = yx.astype(np.float64).copy()
    yy = yy.astype(np.float64).copy()
    co = coalesced.astype(bool).copy()
    pid = np.asarray(path_ids, dtype=np.int64)
    st0 = np.asarray(step0, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    code = np.zeros(n, dtype=np.int8)
    cstep = np.where(co, 0, -1).astype(np.int64)
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
    sq = np.sqrt(dt)

    def record(idx, k, hx, hy):
        hitx[idx[hx]] = k
        hity[idx[hy]] = k
        xtyx[idx[hy]] = xx[idx[hy]]
        xtyy[idx[hy]] = xy[idx[hy]]
        ytxx[idx[hx]] = yx[idx[hx]]
        ytxy[idx[hx]] = yy[idx[hx]]
        first = code[idx] == 0
        c = np.where(hx & hy, 3, np.where(hx, 1, np.where(hy, 2, 0))).astype(np.int8)
        code[idx[first]] = c[first]

    def done(idx):
        if both:
            return (hitx[idx] >= 0) & (hity[idx] >= 0)
        return code[idx] != 0

    def kcheck(sel, k):
        if sel.size == 0:
            return
        _, ky, ke = left_mirror_hit(xx[sel], xy[sel], yx[sel], yy[sel], bi)
        ky = np.where(ke >= 0, ky, np.inf)
        kmin[sel] = np.minimum(kmin[sel], ky)
        bad = (ky < -k_tol) & (vstep[sel] < 0)
        vstep[sel[bad]] = k

    idx = np.arange(n)
    record(idx, 0, gamma_hit(xx, xy, gam), gamma_hit(yx, yy, gam))
    if k_check:
        kcheck(np.nonzero((code == 0) & ~co)[0], 0)
    active = ~done(idx)
    for k in range(int(max_steps)):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        z = normals4(seed, pid[idx], st0[idx] + k, lane)
        dwx = sq * z[:, 0]
        dwy = sq * z[:, 1]
        was = co[idx]
        first = code[idx] == 0
        nxx, nxy, nyx, nyy, nco, px_, py_, ex_, ey_ = mirror_step(
            xx[idx], xy[idx], yx[idx], yy[idx], dwx, dwy, was, bi, coal_tol)
        xx[idx], xy[idx], yx[idx], yy[idx] = nxx, nxy, nyx, nyy
        ltx[idx] += px_
        lty[idx] += py_
        newly = nco & ~was
        cstep[idx[newly]] = k + 1
        co[idx] = nco
        steps[idx] = k + 1
        if k_check:
            kcheck(idx[first & ~nco & ((px_ > 0.0) | (py_ > 0.0))], k + 1)
        hx = (hitx[idx] < 0) & gamma_hit(nxx, nxy, gam)
        hy = (hity[idx] < 0) & gamma_hit(nyx, nyy, gam)
        record(idx, k + 1, hx, hy)
        active[idx[done(idx)]] = False
    return dict(xx=xx, xy=xy, yx=yx, yy=yy, steps=steps, code=code,
                coal_step=cstep, viol_step=vstep, k_min=kmin, lt_x=ltx, lt_y=lty,
                coalesced=co, hit_x=hitx, hit_y=hity, x_at_ty_x=xtyx, x_at_ty_y=xtyy,
                y_at_tx_x=ytxx, y_at_tx_y=ytxy)
