"""Synchronous and mirror couplings of reflected Brownian motions.

The Cartesian mirror coupling moves X by dW and Y by dW reflected across
the perpendicular bisector of X and Y (the mirror), then returns any
particle that left the domain.  ``mirror_halfplane_skew`` builds the same
coupling in the half-plane from a Bessel(2) radius and reflected angles and
serves as an independent check of the Cartesian scheme.

``staged_runs`` implements the staged protocol in the quarter domain: a
synchronous start, the window events, mirror and independent phases, and a
final mirror phase run until both particles have hit the level curve.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import kernels
from .geometry import DomainSpec, coupling_regions
from .mesh import Mesh
from .rbm import PathState, SimConfig, project_point
from .spectral import LevelCurve

SYNCHRONOUS, MIRROR, INDEPENDENT, COALESCED = "synchronous", "mirror", "independent", "coalesced"


def bisector(x, y):
    """Perpendicular bisector of ``x`` and ``y`` as (point, unit direction)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    v = y - x
    d = float(np.hypot(*v))
    if d == 0.0:
        raise ValueError("coincident points have no bisector")
    n = v / d
    return 0.5 * (x + y), np.array([-n[1], n[0]])


@dataclass(frozen=True)
class MirrorState:
    x_state: PathState
    y_state: PathState
    regime: str = MIRROR
    hinge: tuple | None = None

    @property
    def x(self):
        return np.asarray(self.x_state.position, float)

    @property
    def y(self):
        return np.asarray(self.y_state.position, float)

    @property
    def coalesced(self):
        return self.regime == COALESCED

    @property
    def mirror(self):
        if self.coalesced:
            return None
        return bisector(self.x, self.y)


def _advance(st: PathState, q, push, edge, dt):
    return PathState((float(q[0]), float(q[1])), st.time + dt, st.local_time + push,
                     edge if edge is not None else st.last_edge)


def synchronous_step(domain: DomainSpec, state: MirrorState, dW, dt) -> MirrorState:
    """Both particles take the same increment and are projected independently."""
    dW = np.asarray(dW, float)
    qx, px, ex = project_point(domain, state.x + dW)
    qy, py, ey = project_point(domain, state.y + dW)
    return replace(state, x_state=_advance(state.x_state, qx, px, ex, dt),
                   y_state=_advance(state.y_state, qy, py, ey, dt))


def mirror_step(domain: DomainSpec, state: MirrorState, dW, dt, coal_tol) -> MirrorState:
    """One Cartesian mirror-coupling step (coalesced pairs move together)."""
    dW = np.asarray(dW, float)
    x, y = state.x, state.y
    out = kernels.mirror_step(np.array([x[0]]), np.array([x[1]]), np.array([y[0]]), np.array([y[1]]),
                              np.array([dW[0]]), np.array([dW[1]]), np.array([state.coalesced]),
                              domain.index, coal_tol)
    xx, xy, yx, yy, co, px, py, ex, ey = (a[0] for a in out)
    ex = None if px == 0.0 else int(ex)
    ey = None if py == 0.0 else int(ey)
    return replace(state, x_state=_advance(state.x_state, (xx, xy), float(px), ex, dt),
                   y_state=_advance(state.y_state, (yx, yy), float(py), ey, dt),
                   regime=COALESCED if co else MIRROR)


def hinge_update(domain: DomainSpec, state: MirrorState, reflecting_edge, push_x=None, push_y=None):
    """Hinge (mirror meets the line of ``reflecting_edge``) and rotation sign.

    The sign is that of the mirror's rotation caused by pushes of sizes
    ``push_x`` and ``push_y`` along the edge's inward normal (defaults: a
    unit push on whichever particle is closer to the edge).  The hinge is
    ``None`` when the mirror is parallel to the edge line.
    """
    bi = domain.index
    e = int(reflecting_edge)
    t = np.array([bi.tx[e], bi.ty[e]])
    a = np.array([bi.ax[e], bi.ay[e]])
    nrm = np.array([-t[1], t[0]])
    x, y = state.x, state.y
    v = y - x
    v = v / np.hypot(*v)
    mid = 0.5 * (x + y)
    d_m = np.array([-v[1], v[0]])
    den = d_m[0] * t[1] - d_m[1] * t[0]
    hinge = None
    if abs(den) > 1e-12:
        w = a - mid
        alpha = (w[0] * t[1] - w[1] * t[0]) / den
        hinge = mid + alpha * d_m
    if push_x is None and push_y is None:
        dx = abs((x - a) @ nrm)
        dy = abs((y - a) @ nrm)
        push_x, push_y = (1.0, 0.0) if dx <= dy else (0.0, 1.0)
    dv = (push_y or 0.0) * nrm - (push_x or 0.0) * nrm
    cr = v[0] * dv[1] - v[1] * dv[0]
    sign = 0 if abs(cr) <= 1e-12 * (abs(push_x or 0.0) + abs(push_y or 0.0) + 1e-300) else int(np.sign(cr))
    return (None if hinge is None else tuple(hinge.tolist())), sign


def coupling_time(trace_x, trace_y, tol, times=None):
    """First time the traces come within ``tol``; ``inf`` if they never do."""
    a = np.asarray(trace_x, float)
    b = np.asarray(trace_y, float)
    d = np.hypot(*(a - b).T)
    hit = np.nonzero(d <= tol)[0]
    if hit.size == 0:
        return math.inf
    k = int(hit[0])
    return float(times[k]) if times is not None else float(k)


# ---------------------------------------------------------------------------
# batched couplings


def sync_steps(domain: DomainSpec, xx, xy, yx, yy, dwx, dwy):
    """Vectorized synchronous step; returns new positions, pushes and edges."""
    bi = domain.index
    qxx, qxy, px, ex, _, _ = kernels.project(xx + dwx, xy + dwy, bi)
    qyx, qyy, py, ey, _, _ = kernels.project(yx + dwx, yy + dwy, bi)
    return qxx, qxy, qyx, qyy, px, py, ex, ey


def run_mirror_pairs(domain: DomainSpec, x0, y0, config: SimConfig, n_pairs, n_steps, coal_tol,
                     path_offset=0):
    """Cartesian mirror coupling for ``n_pairs`` pairs; returns final positions and coalescence steps."""
    xx = np.full(n_pairs, float(x0[0]))
    xy = np.full(n_pairs, float(x0[1]))
    yx = np.full(n_pairs, float(y0[0]))
    yy = np.full(n_pairs, float(y0[1]))
    co = np.zeros(n_pairs, dtype=bool)
    cstep = np.full(n_pairs, -1, dtype=np.int64)
    pid = path_offset + np.arange(n_pairs)
    sq = math.sqrt(config.dt)
    for k in range(n_steps):
        z = kernels.normals4(config.rng_seed, pid, k, config.lane)
        xx, xy, yx, yy, nco, *_ = kernels.mirror_step(xx, xy, yx, yy, sq * z[:, 0], sq * z[:, 1], co,
                                                      domain.index, coal_tol)
        cstep[nco & ~co] = k + 1
        co = nco
    return np.column_stack([xx, xy]), np.column_stack([yx, yy]), cstep


# ---------------------------------------------------------------------------
# half-plane skew product


class SkewPaths(NamedTuple):
    t: np.ndarray
    radius: np.ndarray  # (n_steps + 1, n_paths)
    theta_x: np.ndarray
    theta_y: np.ndarray
    tau_theta: np.ndarray  # coalescence time of the angles (inf if none)

    def x(self, k=-1):
        return np.column_stack([self.radius[k] * np.cos(self.theta_x[k]), self.radius[k] * np.sin(self.theta_x[k])])

    def y(self, k=-1):
        return np.column_stack([self.radius[k] * np.cos(self.theta_y[k]), self.radius[k] * np.sin(self.theta_y[k])])


BRIDGE_SUBSTEPS = 16


def mirror_halfplane_skew(r0, theta_x, theta_y, duration, dt, seed, n_paths=1, path_offset=0,
                          keep_path=True):
    """Mirror coupling in the upper half-plane through its skew-product form.

    The radius is |B| for an auxiliary planar Brownian motion B started at
    distance ``r0`` (an exact Bessel(2) skeleton).  The clock increment over
    a step is ``dt / (R_n R_{n+1})``; where the radius is within a few step
    sizes of 0 the step is refined with 16 Brownian-bridge substeps.  The
    angle of X is a Brownian motion in that clock, reflected on [0, pi] by
    projection; Y's free angle is its mirror image ``theta_x + theta_y - .``
    until the reflected angles meet, after which they agree.
    """
    if not (0.0 <= theta_x <= theta_y <= math.pi) or not r0 > 0:
        raise ValueError("need 0 <= theta_x <= theta_y <= pi and r0 > 0")
    n_steps = int(round(duration / dt))
    pid = path_offset + np.arange(n_paths)
    bx = np.full(n_paths, float(r0))
    by = np.zeros(n_paths)
    r = np.full(n_paths, float(r0))
    tx = np.full(n_paths, float(theta_x))
    ty = np.full(n_paths, float(theta_y))
    merged = np.full(n_paths, theta_x == theta_y)
    tau = np.where(merged, 0.0, np.inf)
    sq = math.sqrt(dt)
    rows = (n_steps + 1) if keep_path else 2
    R = np.empty((rows, n_paths))
    TX = np.empty((rows, n_paths))
    TY = np.empty((rows, n_paths))
    R[0], TX[0], TY[0] = r, tx, ty
    for k in range(n_steps):
        z = kernels.normals4(seed, pid, k, 0)
        nbx = bx + sq * z[:, 0]
        nby = by + sq * z[:, 1]
        nr = np.hypot(nbx, nby)
        dsig = dt / np.maximum(r * nr, 1e-300)
        small = np.minimum(r, nr) < 4.0 * sq
        if small.any():
            dsig[small] = _bridge_clock(bx[small], by[small], nbx[small], nby[small], dt, seed,
                                        pid[small], k)
        xi = z[:, 2]
        dth = np.sqrt(dsig) * xi
        live = ~merged
        nx_ = np.clip(tx + dth, 0.0, math.pi)
        ny_ = np.where(live, np.clip(ty - dth, 0.0, math.pi), nx_)
        meet = live & (nx_ >= ny_)
        nx_ = np.where(meet, 0.5 * (nx_ + ny_), nx_)
        ny_ = np.where(meet, nx_, ny_)
        tau[meet] = (k + 1) * dt
        merged |= meet
        ny_ = np.where(merged, nx_, ny_)
        bx, by, r, tx, ty = nbx, nby, nr, nx_, ny_
        row = k + 1 if keep_path else 1
        R[row], TX[row], TY[row] = r, tx, ty
    t = np.arange(n_steps + 1) * dt if keep_path else np.array([0.0, n_steps * dt])
    return SkewPaths(t, R, TX, TY, tau)


def _bridge_clock(ax, ay, bx, by, dt, seed, pid, k):
    """Clock increment over one step from a Brownian bridge between B_n and B_{n+1}."""
    m = BRIDGE_SUBSTEPS
    h = dt / m
    pts_x = [ax]
    pts_y = [ay]
    cx, cy = ax, ay
    for i in range(1, m):
        # bridge from (cx, cy) at time (i-1)h to (bx, by) at time dt
        rem = dt - (i - 1) * h
        z = kernels.normals4(seed, pid, k * m + i, 2)
        mean_x = cx + (bx - cx) * h / rem
        mean_y = cy + (by - cy) * h / rem
        var = h * (rem - h) / rem
        cx = mean_x + math.sqrt(var) * z[:, 0]
        cy = mean_y + math.sqrt(var) * z[:, 1]
        pts_x.append(cx)
        pts_y.append(cy)
    pts_x.append(bx)
    pts_y.append(by)
    rr = np.hypot(np.array(pts_x), np.array(pts_y))
    return (h / np.maximum(rr[:-1] * rr[1:], 1e-300)).sum(axis=0)


# ---------------------------------------------------------------------------
# level-curve tube used by the kernels


@dataclass
class GammaTube:
    """Level-curve target ``{x1 >= x_min and (phi_h <= a or dist(., Gamma) <= tol)}``."""

    level: float
    values: np.ndarray
    loc: object
    x_min: float
    seg_ax: np.ndarray
    seg_ay: np.ndarray
    seg_tx: np.ndarray
    seg_ty: np.ndarray
    seg_len: np.ndarray
    tol: float

    @classmethod
    def from_curve(cls, mesh: Mesh, values, curve: LevelCurve, tol=None):
        if curve.empty:
            raise ValueError("level curve is empty")
        if tol is None:
            tol = 0.5 * mesh.h
        a, b = curve.segments()
        d = b - a
        L = np.hypot(d[:, 0], d[:, 1])
        keep = L > 0
        a, d, L = a[keep], d[keep], L[keep]
        return cls(float(curve.level), np.array(values, dtype=np.float64), mesh.locator,
                   float(curve.r_min - tol - mesh.h), np.ascontiguousarray(a[:, 0]),
                   np.ascontiguousarray(a[:, 1]), d[:, 0] / L, d[:, 1] / L, L, float(tol))

    def hit(self, pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        return kernels.gamma_hit(pts[:, 0], pts[:, 1], self)


# ---------------------------------------------------------------------------
# staged protocol


@dataclass(frozen=True)
class StageSchedule:
    c_star: float
    epsilon: float
    j0: int
    regions: dict
    stop_markers: tuple = ("S0",) + tuple(f"S{i}" for i in range(3, 13))

    @classmethod
    def build(cls, epsilon, c_star=0.05):
        if not 0.0 < c_star < 1.0:
            raise ValueError("c_star must lie in (0, 1)")
        j0, reg = coupling_regions(epsilon, c_star)
        markers = ("S0",) + tuple(f"S1^{j}" for j in range(1, j0 + 2)) + tuple(
            f"S2^{j}" for j in range(1, j0 + 2)) + tuple(f"S{i}" for i in range(3, 13))
        return cls(float(c_star), float(epsilon), j0, reg, markers)


@dataclass
class CouplingRecord:
    run_id: int
    seed: int
    dt: float
    G0: bool = False
    F: tuple = ()
    F_star: bool = False
    G1: bool = False
    G2: bool = False
    G3: bool = False
    T_X_Gamma: float = math.inf
    T_Y_Gamma: float = math.inf
    X_at_TY: tuple = (math.nan, math.nan)
    Y_at_TX: tuple = (math.nan, math.nan)
    U: float = math.inf
    k_violation: bool = False
    k_min: float = math.inf
    clipped: bool = False

    @property
    def censored_x(self):
        return not math.isfinite(self.T_X_Gamma)

    @property
    def censored_y(self):
        return not math.isfinite(self.T_Y_Gamma)


RECORD_FIELDS = ("run_id", "seed", "dt", "G0", "F", "F_star", "G1", "G2", "G3", "T_X_Gamma", "T_Y_Gamma",
                 "X_at_TY_x", "X_at_TY_y", "Y_at_TX_x", "Y_at_TX_y", "U", "k_violation", "k_min", "clipped")


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([r.run_id, r.seed, repr(r.dt), int(r.G0), "".join("x01"[f + 1] for f in r.F), int(r.F_star),
                    int(r.G1), int(r.G2), int(r.G3), repr(r.T_X_Gamma), repr(r.T_Y_Gamma),
                    repr(r.X_at_TY[0]), repr(r.X_at_TY[1]), repr(r.Y_at_TX[0]), repr(r.Y_at_TX[1]), repr(r.U), int(r.k_violation), repr(r.k_min),
                    int(r.clipped)])
    return buf.getvalue()


# phases of the staged protocol
_P_S0, _P_WIN, _P_A7, _P_A9, _P_IND, _P_TERM, _P_DONE = range(7)


def _box_exit(px, py, cx, cy, box):
    """First exit of the segment p -> c from the open box.

    ``box`` = (x0, x1, y0, y1) with infinities for sides that are not
    tested.  Returns (exited, side, qx, qy, s) with side 0..3 for
    left/right/bottom/top and ``s`` the fraction of the step at the exit.
    A start point already outside exits at s = 0.
    """
    x0, x1, y0, y1 = box
    n = px.shape[0]
    inside0 = (px > x0) & (px < x1) & (py > y0) & (py < y1)
    inside1 = (cx > x0) & (cx < x1) & (cy > y0) & (cy < y1)
    exited = ~inside0 | ~inside1
    s = np.full(n, np.inf)
    side = np.full(n, -1, dtype=np.int64)
    dx = cx - px
    dy = cy - py
    with np.errstate(divide="ignore", invalid="ignore"):
        for k, (lim, coord, d, sgn) in enumerate(((x0, px, dx, -1), (x1, px, dx, 1), (y0, py, dy, -1),
                                                  (y1, py, dy, 1))):
            lim = np.broadcast_to(np.asarray(lim, float), (n,))
            live = np.isfinite(lim)
            if not live.any():
                continue
            t = (lim - coord) / d
            ok = live & (sgn * d > 0) & (t >= 0) & (t <= 1)
            better = ok & (t < s)
            s = np.where(better, t, s)
            side = np.where(better, k, side)
    # start outside: exit at the start point, side of the first violated constraint
    out0 = ~inside0
    if out0.any():
        viol = np.stack([px <= x0, px >= x1, py <= y0, py >= y1], axis=1)
        side = np.where(out0, np.argmax(viol, axis=1), side)
        s = np.where(out0, 0.0, s)
    s = np.where(exited & ~np.isfinite(s), 1.0, s)
    qx = px + np.where(np.isfinite(s), s, 0.0) * dx
    qy = py + np.where(np.isfinite(s), s, 0.0) * dy
    return exited, side, qx, qy, s


def _left_k(domain, xx, xy, yx, yy):
    mx = 0.5 * (xx + yx)
    my = 0.5 * (xy + yy)
    hx, hy, _, e = kernels.ray_first_hit(mx, my, -(yy - xy), yx - xx, domain.index, 0.0)
    return hx, hy, e


def staged_runs(domain: DomainSpec, gamma: GammaTube, schedule: StageSchedule, config: SimConfig,
                n_runs, run_offset=0, x0=(0.0, 0.0), y0=None, coal_tol=None):
    """Staged coupling runs in the quarter domain; one ``CouplingRecord`` per run.

    Run ``i`` uses noise path id ``run_offset + i``: X's increments are the
    first two normals of each counter block and Y's independent increments
    (used only in the independent phase) the last two.  The early phases
    are simulated in Python; the final mirror phase runs in the compiled
    kernel until both particles have hit the level-curve tube (or
    ``max_time``).
    """
    eps = schedule.epsilon
    if y0 is None:
        y0 = (0.0, eps)
    if coal_tol is None:
        coal_tol = 1e-4 * eps
    j0 = schedule.j0
    reg = schedule.regions
    n = int(n_runs)
    dt = config.dt
    sq = math.sqrt(dt)
    max_steps = config.max_steps
    ktol = 10.0 * domain.tol_geom
    bi = domain.index
    pid = run_offset + np.arange(n, dtype=np.int64)
    xmax = float(domain.vertices[:, 0].max())
    inf = math.inf

    # boxes (sides lying on the domain boundary are not tested)
    box_a1 = (-inf, eps, 0.7 * eps, inf)
    box_a4 = (-inf, eps, -0.3 * eps, 0.1 * eps)
    a9_lo, a9_hi = (j0 - 100) * eps, (j0 + 100) * eps
    clipped = a9_lo <= 0.0 or a9_hi >= xmax or (j0 - 50) * eps <= 0.0 or (j0 + 50) * eps >= xmax
    box_a9 = (a9_lo if a9_lo > 0.0 else -inf, a9_hi if a9_hi < xmax else inf, 0.0, inf)
    box_a7 = ((j0 * eps) if j0 > 0 else -inf, (j0 + 3) * eps, -0.5 * eps, inf)
    a11 = reg["cA11"]

    xx = np.full(n, float(x0[0]))
    xy = np.full(n, float(x0[1]))
    yx = np.full(n, float(y0[0]))
    yy = np.full(n, float(y0[1]))
    phase = np.full(n, _P_S0, dtype=np.int64)
    jw = np.zeros(n, dtype=np.int64)
    step = np.zeros(n, dtype=np.int64)
    G0 = np.zeros(n, bool)
    F = np.full((n, j0 + 1), -1, dtype=np.int8)
    Fstar = np.zeros(n, bool)
    G1 = np.zeros(n, bool)
    G2 = np.zeros(n, bool)
    G3 = np.zeros(n, bool)
    s11 = np.full(n, -1, dtype=np.int64)
    hitx = np.full(n, -1, dtype=np.int64)
    hity = np.full(n, -1, dtype=np.int64)
    xty = np.full((n, 2), np.nan)
    ytx = np.full((n, 2), np.nan)
    cstep = np.full(n, -1, dtype=np.int64)
    co = np.zeros(n, bool)
    kmin = np.full(n, np.inf)
    kviol = np.zeros(n, bool)

    def gamma_update(idx, k):
        hx = (hitx[idx] < 0) & gamma.hit(np.column_stack([xx[idx], xy[idx]]))
        hy = (hity[idx] < 0) & gamma.hit(np.column_stack([yx[idx], yy[idx]]))
        hitx[idx[hx]] = k
        hity[idx[hy]] = k
        xty[idx[hy]] = np.column_stack([xx[idx[hy]], xy[idx[hy]]])
        ytx[idx[hx]] = np.column_stack([yx[idx[hx]], yy[idx[hx]]])
        both = (hitx[idx] >= 0) & (hity[idx] >= 0)
        phase[idx[both]] = _P_DONE

    def kcheck(idx):
        idx = idx[(hitx[idx] < 0) & (hity[idx] < 0) & ~co[idx]]
        if idx.size == 0:
            return
        _, ky, ke = _left_k(domain, xx[idx], xy[idx], yx[idx], yy[idx])
        ky = np.where(ke >= 0, ky, np.inf)
        kmin[idx] = np.minimum(kmin[idx], ky)
        kviol[idx[ky < -ktol]] = True

    def enter_window(idx):
        """Entry checks for runs (re)entering window phase; cascades through immediate exits."""
        for _ in range(j0 + 2):
            if idx.size == 0:
                return
            j = jw[idx]
            lo = np.where(j > 0, j * eps, -inf)
            ex, side, qx, qy, _ = _box_exit(yx[idx], yy[idx], yx[idx], yy[idx],
                                            (lo, (j + 2) * eps, 0.6 * eps, 0.9 * eps))
            idx = idx[ex]
            if idx.size == 0:
                return
            window_exit(idx, side[ex], qy[ex])
            idx = idx[phase[idx] == _P_WIN]

    def window_exit(idx, side, qy):
        j = jw[idx]
        ok = (side == 1) & (qy > 0.7 * eps) & (qy < 0.8 * eps)
        F[idx, j] = ok.astype(np.int8)
        fail = idx[~ok]
        phase[fail] = _P_TERM
        good = idx[ok]
        jw[good] += 1
        done = good[jw[good] > j0]
        Fstar[done] = True
        phase[done] = _P_A7

    kcheck(np.arange(n))
    gamma_update(np.arange(n), 0)
    k = 0
    early = (_P_S0, _P_WIN, _P_A7, _P_A9, _P_IND)
    while k < max_steps:
        idx = np.nonzero(np.isin(phase, early))[0]
        if idx.size == 0:
            break
        z = kernels.normals4(config.rng_seed, pid[idx], k, config.lane)
        dwx, dwy = sq * z[:, 0], sq * z[:, 1]
        ph = phase[idx]
        oxx, oxy, oyx, oyy = xx[idx].copy(), xy[idx].copy(), yx[idx].copy(), yy[idx].copy()
        pushed = np.zeros(idx.size, bool)
        touched_x = np.zeros(idx.size, bool)
        # synchronous phases
        s = np.isin(ph, (_P_S0, _P_WIN, _P_A7))
        if s.any():
            si = idx[s]
            a, b, c, d, px, py, ex, ey = sync_steps(domain, xx[si], xy[si], yx[si], yy[si], dwx[s], dwy[s])
            xx[si], xy[si], yx[si], yy[si] = a, b, c, d
            pushed[s] = (px > 0) | (py > 0)
            touched_x[s] = ex >= 0
        m = ph == _P_A9
        if m.any():
            mi = idx[m]
            a, b, c, d, nco, px, py, ex, ey = kernels.mirror_step(xx[mi], xy[mi], yx[mi], yy[mi], dwx[m], dwy[m],
                                                                 co[mi], bi, coal_tol)
            cstep[mi[nco & ~co[mi]]] = k + 1
            co[mi] = nco
            xx[mi], xy[mi], yx[mi], yy[mi] = a, b, c, d
            pushed[m] = (px > 0) | (py > 0)
        ind = ph == _P_IND
        if ind.any():
            ii = idx[ind]
            qx, qy, px, _, _, _ = kernels.project(xx[ii] + dwx[ind], xy[ii] + dwy[ind], bi)
            rx, ry, py, _, _, _ = kernels.project(yx[ii] + sq * z[ind, 2], yy[ii] + sq * z[ind, 3], bi)
            xx[ii], xy[ii], yx[ii], yy[ii] = qx, qy, rx, ry
            pushed[ind] = (px > 0) | (py > 0)
        step[idx] = k + 1
        if (~co[idx]).any():
            d = np.hypot(xx[idx] - yx[idx], xy[idx] - yy[idx])
            meet = ~co[idx] & (d <= coal_tol) & (ph != _P_IND)
            cstep[idx[meet]] = k + 1
            co[idx[meet]] = True
        kcheck(idx[pushed])

        # stage transitions
        sel = ph == _P_S0
        if sel.any():
            si = idx[sel]
            ey_, side_y, qxy_, qyy_, s_y = _box_exit(oyx[sel], oyy[sel], yx[si], yy[si], box_a1)
            ex_, _, _, _, s_x = _box_exit(oxx[sel], oxy[sel], xx[si], xy[si], box_a4)
            stop = ey_ | ex_
            g0 = ey_ & (~ex_ | (s_y <= s_x)) & (side_y == 1) & (qyy_ >= 0.7 * eps) & (qyy_ <= 0.8 * eps)
            G0[si[g0]] = True
            phase[si[stop & ~g0]] = _P_TERM
            win = si[g0]
            phase[win] = _P_WIN
            jw[win] = 0
            enter_window(win)
        sel = ph == _P_WIN
        if sel.any():
            si = idx[sel]
            j = jw[si]
            lo = np.where(j > 0, j * eps, -inf)
            ex_, side, _, qy_, _ = _box_exit(oyx[sel], oyy[sel], yx[si], yy[si],
                                             (lo, (j + 2) * eps, 0.6 * eps, 0.9 * eps))
            if ex_.any():
                window_exit(si[ex_], side[ex_], qy_[ex_])
                enter_window(si[ex_][phase[si[ex_]] == _P_WIN])
        sel = ph == _P_A7
        if sel.any():
            si = idx[sel]
            ex_, _, _, _, _ = _box_exit(oxx[sel], oxy[sel], xx[si], xy[si], box_a7)
            on_bd = touched_x[sel] & (xx[si] > box_a7[0]) & (xx[si] < box_a7[1]) & (xy[si] > box_a7[2])
            stop = ex_ | on_bd
            g1 = on_bd & (xx[si] >= (j0 + 1) * eps) & (xx[si] <= (j0 + 2) * eps)
            G1[si[g1 & stop]] = True
            phase[si[stop]] = _P_A9
        sel = ph == _P_A9
        if sel.any():
            si = idx[sel]
            exx, sidex, _, _, sx_ = _box_exit(oxx[sel], oxy[sel], xx[si], xy[si], box_a9)
            exy, sidey, _, _, sy_ = _box_exit(oyx[sel], oyy[sel], yx[si], yy[si], box_a9)
            stop = exx | exy
            # G2: the particle leaving A9 first leaves through one of its vertical ends (A10)
            x_first = exx & (~exy | (sx_ <= sy_))
            y_first = exy & (~exx | (sy_ <= sx_))
            g2 = (x_first & (sidex <= 1)) | (y_first & (sidey <= 1))
            G2[si[g2]] = True
            phase[si[stop & ~g2]] = _P_TERM
            ent = si[stop & g2]
            phase[ent] = _P_IND
            if ent.size:
                in11 = a11.contains(np.column_stack([xx[ent], xy[ent]])) | a11.contains(
                    np.column_stack([yx[ent], yy[ent]]))
                phase[ent[in11]] = _P_TERM
        sel = ph == _P_IND
        if sel.any():
            si = idx[sel]
            s11_now = (s11[si] < 0) & (yx[si] >= 1.0)
            s11[si[s11_now]] = k + 1
            g3 = s11_now & (xx[si] <= 0.5)
            in11 = a11.contains(np.column_stack([xx[si], xy[si]])) | a11.contains(np.column_stack([yx[si], yy[si]]))
            G3[si[g3 & ~in11]] = True
            phase[si[in11]] = _P_TERM
        gamma_update(idx, k + 1)
        k += 1

    # final mirror phase in the compiled kernel
    term = np.nonzero(phase == _P_TERM)[0]
    if term.size:
        remaining = max_steps - step[term]
        # the kernel advances a common number of steps; runs that started it later are censored
        # at their own max_time below
        out = kernels.mirror_advance(xx[term], xy[term], yx[term], yy[term], co[term], pid[term], step[term],
                                     config.rng_seed, config.lane, dt, int(remaining.max()), bi, gamma,
                                     coal_tol, True, ktol, True)
        prior_hit = (hitx[term] >= 0) | (hity[term] >= 0)
        hx_k = np.where(out["hit_x"] >= 0, out["hit_x"] + step[term], -1)
        hy_k = np.where(out["hit_y"] >= 0, out["hit_y"] + step[term], -1)
        hx_k = np.where(hx_k > max_steps, -1, hx_k)
        hy_k = np.where(hy_k > max_steps, -1, hy_k)
        newx = hitx[term] < 0
        newy = hity[term] < 0
        hitx[term[newx]] = hx_k[newx]
        hity[term[newy]] = hy_k[newy]
        setxy = newy & (hy_k >= 0)
        xty[term[setxy]] = np.column_stack([out["x_at_ty_x"][setxy], out["x_at_ty_y"][setxy]])
        setyx = newx & (hx_k >= 0)
        ytx[term[setyx]] = np.column_stack([out["y_at_tx_x"][setyx], out["y_at_tx_y"][setyx]])
        cs = out["coal_step"]
        newc = (cstep[term] < 0) & (cs > 0) & (cs + step[term] <= max_steps)
        cstep[term[newc]] = cs[newc] + step[term[newc]]
        viol_k = (~prior_hit) & (out["viol_step"] >= 0)
        kviol[term[viol_k]] = True
        kmin[term[~prior_hit]] = np.minimum(kmin[term[~prior_hit]], out["k_min"][~prior_hit])

    recs = []
    for i in range(n):
        recs.append(CouplingRecord(
            run_id=int(pid[i]), seed=int(config.rng_seed), dt=dt, G0=bool(G0[i]),
            F=tuple(int(f) for f in F[i]), F_star=bool(Fstar[i]), G1=bool(G1[i]), G2=bool(G2[i]),
            G3=bool(G3[i]),
            T_X_Gamma=hitx[i] * dt if hitx[i] >= 0 else math.inf,
            T_Y_Gamma=hity[i] * dt if hity[i] >= 0 else math.inf,
            X_at_TY=(float(xty[i, 0]), float(xty[i, 1])),
            Y_at_TX=(float(ytx[i, 0]), float(ytx[i, 1])),
            U=cstep[i] * dt if cstep[i] >= 0 else math.inf,
            k_violation=bool(kviol[i]), k_min=float(kmin[i]), clipped=bool(clipped)))
    return recs


def staged_run(domain, gamma, schedule, config, run_id=0, **kw) -> CouplingRecord:
    """Single staged run (the batch driver with one run)."""
    return staged_runs(domain, gamma, schedule, config, 1, run_offset=run_id, **kw)[0]
