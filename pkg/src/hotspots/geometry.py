"""Polygonal domains: the one-hole ring D(eps, eps0), its quarter D1, and queries.

Coordinates are plane coordinates (x1, x2).  The full domain is symmetric
under x1 -> -x1 and x2 -> -2 - x2.  The quarter D1 = {x in D: x1 > 0,
x2 > -1} is a simple polygon whose edges carry boundary-condition tags:

``dirichlet_d``
    the segment of {x2 = -1} closing the tube (absorbing side of the mixed
    problem);
``left_ell``
    the segment of {x1 = 0} between (0, -eps) and (0, eps);
``side_s``
    every other edge of D1 (two connected components, top and bottom);
``neumann_other``
    used for all edges of the full ring and of auxiliary test domains.

Loops are stored with the domain on the left, so outer loops run
counterclockwise and the hole runs clockwise.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import NamedTuple

import numpy as np

from . import kernels

TAGS = ("dirichlet_d", "left_ell", "side_s", "neumann_other")
REGIONS = ("full_D", "quarter_D1", "custom")
DEFAULT_EPSILON = 0.1
DEFAULT_EPSILON0 = 0.01
MIN_ARC_SEGMENTS = 64
ARC_CENTER = (2.0, -1.0)


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class DomainParams:
    """Shape parameters of D(eps, eps0).

    ``arc_segments=None`` picks the smallest chord count whose turning angle
    is at most ``epsilon0`` (never fewer than 64).
    """

    epsilon: float = DEFAULT_EPSILON
    epsilon0: float = DEFAULT_EPSILON0
    arc_segments: int | None = None

    def __post_init__(self):
        e, e0 = float(self.epsilon), float(self.epsilon0)
        if not (0.0 < e0 < e < 0.25):
            raise ValueError(
                f"need 0 < epsilon0 < epsilon < 1/4, got epsilon={e}, epsilon0={e0}"
            )
        if self.arc_segments is not None and int(self.arc_segments) < 1:
            raise ValueError("arc_segments must be a positive integer")

    @property
    def r(self) -> float:
        """Distance from (2, 0) to the apex y where the tapered walls meet."""
        return self.epsilon0 / (2.0 * self.epsilon - self.epsilon0)

    def segments(self) -> int:
        if self.arc_segments is not None:
            return int(self.arc_segments)
        return max(MIN_ARC_SEGMENTS, min_arc_segments(0.5 * math.pi, self.epsilon0))


def min_arc_segments(sweep: float, turn_limit: float) -> int:
    """Smallest equal-angle chord count with turning angle <= turn_limit."""
    return int(math.ceil(abs(sweep) / turn_limit - 1e-9))


# ---------------------------------------------------------------------------
# arc chains


def build_arc_chain(center, band, start, end, turn_limit, n):
    """Polygonal arc from ``start`` to ``end`` around ``center``.

    Vertices sit at equally spaced polar angles with the radius interpolated
    linearly between the endpoint radii, so the endpoints are reproduced
    exactly and (for equal endpoint radii) every turning angle equals the
    angular step.  Raises ``ValueError`` when the chain leaves the annulus
    ``band`` or a turning angle exceeds ``turn_limit``.

    Returns an ``(n + 1, 2)`` array including both endpoints.
    """
    cx, cy = map(float, center)
    rmin, rmax = map(float, band)
    sx, sy = map(float, start)
    ex, ey = map(float, end)
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    rs = math.hypot(sx - cx, sy - cy)
    re = math.hypot(ex - cx, ey - cy)
    tol = 1e-12 * max(1.0, rmax)
    for rr, name in ((rs, "start"), (re, "end")):
        if not (rmin - tol <= rr <= rmax + tol):
            raise ValueError(f"{name} point radius {rr} outside band [{rmin}, {rmax}]")
    ts = math.atan2(sy - cy, sx - cx)
    te = math.atan2(ey - cy, ex - cx)
    sweep = math.remainder(te - ts, 2.0 * math.pi)
    need = min_arc_segments(sweep, turn_limit)
    if n < need:
        raise ValueError(
            f"turn limit {turn_limit} infeasible with n={n} chords over a "
            f"{abs(sweep):.6f} rad sweep; need n >= {need}"
        )
    k = np.arange(n + 1, dtype=np.float64)
    th = ts + sweep * k / n
    rad = rs + (re - rs) * k / n
    pts = np.column_stack([cx + rad * np.cos(th), cy + rad * np.sin(th)])
    pts[0] = (sx, sy)
    pts[-1] = (ex, ey)
    _check_arc_chain(pts, (cx, cy), rmin, rmax, turn_limit)
    return pts


def _check_arc_chain(pts, center, rmin, rmax, turn_limit):
    c = np.asarray(center)
    tol = 1e-12 * max(1.0, rmax)
    rad = np.hypot(*(pts - c).T)
    if rad.min() < rmin - tol or rad.max() > rmax + tol:
        raise ValueError("arc chain vertex outside its annulus band")
    # closest approach of each chord to the centre
    a, b = pts[:-1] - c, pts[1:] - c
    d = b - a
    s = np.clip(-(a * d).sum(1) / (d * d).sum(1), 0.0, 1.0)
    closest = np.hypot(*(a + s[:, None] * d).T)
    if closest.min() < rmin - tol:
        raise ValueError("arc chain chord dips below its annulus band")
    ta = turning_angles(pts)
    if ta.size and ta.max() > turn_limit + 1e-12:
        raise ValueError(f"arc chain turning angle {ta.max()} exceeds {turn_limit}")
    if _has_crossing(pts, closed=False):
        raise ValueError("arc chain self-intersects")


def turning_angles(pts):
    """|angle(y - x, z - y)| for consecutive vertex triples of a polyline."""
    d = np.diff(np.asarray(pts, dtype=float), axis=0)
    cr = d[:-1, 0] * d[1:, 1] - d[:-1, 1] * d[1:, 0]
    dt = (d[:-1] * d[1:]).sum(1)
    return np.abs(np.arctan2(cr, dt))


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_cross(p, q, a, b, tol=0.0):
    """Vectorised proper-crossing test of segments pq against segments ab."""
    o1 = _orient(p[..., 0], p[..., 1], q[..., 0], q[..., 1], a[..., 0], a[..., 1])
    o2 = _orient(p[..., 0], p[..., 1], q[..., 0], q[..., 1], b[..., 0], b[..., 1])
    o3 = _orient(a[..., 0], a[..., 1], b[..., 0], b[..., 1], p[..., 0], p[..., 1])
    o4 = _orient(a[..., 0], a[..., 1], b[..., 0], b[..., 1], q[..., 0], q[..., 1])
    return (
        ((o1 > tol) & (o2 < -tol) | (o1 < -tol) & (o2 > tol))
        & ((o3 > tol) & (o4 < -tol) | (o3 < -tol) & (o4 > tol))
    )


def _has_crossing(pts, closed):
    p = np.asarray(pts, dtype=float)
    a = p[:-1]
    b = p[1:]
    if closed:
        a = p
        b = np.roll(p, -1, axis=0)
    m = len(a)
    block = max(1, 2_000_000 // max(m, 1))
    for s0 in range(0, m, block):
        ii, jj = np.meshgrid(np.arange(s0, min(m, s0 + block)), np.arange(m), indexing="ij")
        keep = jj >= ii + 2
        if closed:
            keep &= ~((ii == 0) & (jj == m - 1))
        ii, jj = ii[keep], jj[keep]
        if segments_cross(a[ii], b[ii], a[jj], b[jj]).any():
            return True
    return False


# ---------------------------------------------------------------------------
# domain container


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Tagged polygonal domain (one or two boundary loops).

    ``edges[k] = (i, j)`` runs from vertex i to vertex j with the domain on
    its left; ``tags[k]`` is its boundary label.  Instances are treated as
    immutable; the arrays are flagged read-only.
    """

    vertices: np.ndarray
    edges: np.ndarray
    tags: tuple
    region_id: str = "custom"
    named_points: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))
    params: DomainParams | None = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 2)
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        v.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "tags", tuple(self.tags))
        pts = {k: (float(x), float(y)) for k, (x, y) in dict(self.named_points).items()}
        object.__setattr__(self, "named_points", MappingProxyType(pts))
        if len(self.tags) != len(e):
            raise ValueError("one tag per edge required")
        bad = set(self.tags) - set(TAGS)
        if bad:
            raise ValueError(f"unknown boundary tags {sorted(bad)}")
        if self.region_id not in REGIONS:
            raise ValueError(f"unknown region id {self.region_id!r}")

    # -- structure ---------------------------------------------------------
    @cached_property
    def loops(self):
        """Tuple of loops, each a tuple of consecutive edge ids."""
        nxt = {int(i): k for k, (i, _) in enumerate(self.edges)}
        seen = np.zeros(len(self.edges), dtype=bool)
        loops = []
        for k0 in range(len(self.edges)):
            if seen[k0]:
                continue
            loop = []
            k = k0
            while not seen[k]:
                seen[k] = True
                loop.append(k)
                k = nxt[int(self.edges[k, 1])]
            if k != k0:
                raise ValueError("edges do not form closed loops")
            loops.append(tuple(loop))
        return tuple(loops)

    @property
    def n_edges(self):
        return len(self.edges)

    def edge_points(self):
        a = self.vertices[self.edges[:, 0]]
        b = self.vertices[self.edges[:, 1]]
        return a, b

    def signed_area(self):
        a, b = self.edge_points()
        return 0.5 * float(np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))

    def area(self):
        return abs(self.signed_area())

    @cached_property
    def diameter(self):
        v = self.vertices
        lo, hi = v.min(0), v.max(0)
        return float(np.hypot(*(hi - lo)))

    @property
    def tol_geom(self):
        return 1e-12 * self.diameter

    @property
    def epsilon(self):
        return None if self.params is None else self.params.epsilon

    def tag_runs(self, tag):
        """Maximal runs of consecutive edges carrying ``tag``, per loop."""
        runs = []
        for loop in self.loops:
            flags = [self.tags[k] == tag for k in loop]
            if all(flags):
                runs.append(list(loop))
                continue
            start = flags.index(False)
            cur = []
            for off in range(1, len(loop) + 1):
                k = loop[(start + off) % len(loop)]
                if self.tags[k] == tag:
                    cur.append(k)
                elif cur:
                    runs.append(cur)
                    cur = []
            if cur:
                runs.append(cur)
        return runs

    def is_simple(self):
        """Check that no two non-adjacent edges cross or touch (within tol_geom).

        Pairs are screened by bounding-box overlap in row blocks so memory
        stays linear in the number of edges per block.
        """
        a, b = self.edge_points()
        m = len(a)
        tol = self.tol_geom
        lo = np.minimum(a, b) - tol
        hi = np.maximum(a, b) + tol
        e = self.edges
        block = max(1, 2_000_000 // max(m, 1))
        for s0 in range(0, m, block):
            rows = np.arange(s0, min(m, s0 + block))
            over = ((lo[rows, None, 0] <= hi[None, :, 0]) & (lo[None, :, 0] <= hi[rows, None, 0])
                    & (lo[rows, None, 1] <= hi[None, :, 1]) & (lo[None, :, 1] <= hi[rows, None, 1]))
            ii, jj = np.nonzero(over)
            ii = rows[ii]
            keep = jj > ii
            ii, jj = ii[keep], jj[keep]
            share = ((e[ii, 0] == e[jj, 1]) | (e[ii, 1] == e[jj, 0])
                     | (e[ii, 0] == e[jj, 0]) | (e[ii, 1] == e[jj, 1]))
            ii, jj = ii[~share], jj[~share]
            if ii.size == 0:
                continue
            if segments_cross(a[ii], b[ii], a[jj], b[jj]).any():
                return False
            # touching (improper) contacts between non-adjacent edges also count
            if (_segment_distance(a[ii], b[ii], a[jj], b[jj]) <= tol).any():
                return False
        return True

    # -- queries -------------------------------------------------------------
    @cached_property
    def index(self):
        return BoundaryIndex(self)


def _point_segment_distance(p, a, b):
    d = b - a
    L2 = (d * d).sum(-1)
    s = np.clip(((p - a) * d).sum(-1) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    q = a + s[..., None] * d
    return np.hypot(*(p - q).T) if p.ndim == 2 else np.linalg.norm(p - q, axis=-1)


def _segment_distance(a, b, c, d):
    r = np.minimum(_point_segment_distance(a, c, d), _point_segment_distance(b, c, d))
    r = np.minimum(r, _point_segment_distance(c, a, b))
    return np.minimum(r, _point_segment_distance(d, a, b))


# ---------------------------------------------------------------------------
# construction of D and D1


def _reflect_x1(p):
    p = np.array(p, dtype=float)
    p[..., 0] = 0.0 - p[..., 0]
    return p + 0.0


def _reflect_x2(p):
    p = np.array(p, dtype=float)
    p[..., 1] = -2.0 - p[..., 1]
    return p


def _quarter_paths(params: DomainParams):
    """Outer and inner wall polylines of D1, both starting at x1 = 0."""
    e, e0 = params.epsilon, params.epsilon0
    n = params.segments()
    c = ARC_CENTER
    c1 = build_arc_chain(c, (1 + e0 / 2, 1 + 2 * e0), (2.0, e0), (3.0 + e0, -1.0), e0, n)
    c2 = build_arc_chain(c, (1 - 2 * e0, 1 - e0 / 2), (2.0, -e0), (3.0 - e0, -1.0), e0, n)
    outer = np.vstack([[(0.0, e), (1.0, 2 * e)], c1])
    inner = np.vstack([[(0.0, -e), (1.0, -2 * e)], c2])
    return outer, inner


def _named_points(params: DomainParams):
    r = params.r
    return {
        "origin": (0.0, 0.0),
        "y": (2.0 + r, 0.0),
        "z": (-2.0 - r, 0.0),
        "v": (-1.0, 0.0),
        "top_left": (0.0, params.epsilon),
        "neck": (2.0, params.epsilon0),
    }


def build_quarter(params: DomainParams | None = None) -> DomainSpec:
    """The quarter D1 as one counterclockwise loop with boundary tags."""
    params = params or DomainParams()
    outer, inner = _quarter_paths(params)
    # (0,-e) -> inner wall -> (3-e0,-1) -> (3+e0,-1) -> outer wall reversed -> (0,e)
    verts = np.vstack([inner, outer[::-1]])
    m = len(verts)
    edges = np.column_stack([np.arange(m), (np.arange(m) + 1) % m])
    tags = ["side_s"] * m
    tags[len(inner) - 1] = "dirichlet_d"
    tags[m - 1] = "left_ell"
    dom = DomainSpec(verts, edges, tags, "quarter_D1", _named_points(params), params)
    _validate(dom)
    return dom


def build_domain(params: DomainParams | None = None) -> DomainSpec:
    """The full ring D: outer loop (counterclockwise) plus one hole (clockwise)."""
    params = params or DomainParams()
    P, Q = _quarter_paths(params)
    F, G = _reflect_x1, _reflect_x2
    outer = np.vstack([P[::-1], F(P[1:]), G(F(P[:-1]))[::-1], G(P[1:-1])])
    hole = np.vstack([F(Q[1:])[::-1], Q, G(Q[:-1])[::-1], G(F(Q[1:-1]))])
    verts = np.vstack([outer, hole])
    no, nh = len(outer), len(hole)
    e_out = np.column_stack([np.arange(no), (np.arange(no) + 1) % no])
    e_hole = no + np.column_stack([np.arange(nh), (np.arange(nh) + 1) % nh])
    edges = np.vstack([e_out, e_hole])
    tags = ["neumann_other"] * len(edges)
    dom = DomainSpec(verts, edges, tags, "full_D", _named_points(params), params)
    _validate(dom)
    return dom


def _validate(dom: DomainSpec):
    loops = dom.loops
    if dom.region_id == "quarter_D1" and len(loops) != 1:
        raise ValueError("quarter domain must be a single loop")
    if dom.region_id == "full_D" and len(loops) != 2:
        raise ValueError("full domain must have exactly one hole")
    if not dom.is_simple():
        raise ValueError("domain boundary is not simple")


def polygon(points, tag="neumann_other", region_id="custom", named_points=None):
    """Simple polygon from counterclockwise vertices, one tag for all edges."""
    v = np.asarray(points, dtype=float)
    m = len(v)
    area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
    if area < 0:
        v = v[::-1].copy()
    edges = np.column_stack([np.arange(m), (np.arange(m) + 1) % m])
    tags = tag if isinstance(tag, (list, tuple)) else [tag] * m
    return DomainSpec(v, edges, tags, region_id, named_points or {})


def rectangle(x0, y0, x1, y1, **kw):
    return polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], **kw)


def regular_polygon(n, radius=1.0, center=(0.0, 0.0), **kw):
    t = 2.0 * np.pi * np.arange(n) / n
    return polygon(np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)]), **kw)


def half_plane_box(half_width=50.0, height=50.0):
    """A large box standing in for the upper half-plane {x2 > 0}."""
    return rectangle(-half_width, 0.0, half_width, height)


# ---------------------------------------------------------------------------
# text export / import


HEADER = "hotspots-domain v1"


def dumps(dom: DomainSpec) -> str:
    lines = [HEADER]
    lines += [f"v {x!r} {y!r}" for x, y in dom.vertices.tolist()]
    lines += [f"e {i} {j} {t}" for (i, j), t in zip(dom.edges.tolist(), dom.tags)]
    lines += [f"p {k} {x!r} {y!r}" for k, (x, y) in dom.named_points.items()]
    return "\n".join(lines) + "\n"


def loads(text: str) -> DomainSpec:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows or " ".join(rows[0]) != HEADER:
        raise ValueError(f"missing '{HEADER}' header")
    verts, edges, tags, named = [], [], [], {}
    for r in rows[1:]:
        if r[0] == "v" and len(r) == 3:
            verts.append((float(r[1]), float(r[2])))
        elif r[0] == "e" and len(r) == 4:
            edges.append((int(r[1]), int(r[2])))
            tags.append(r[3])
        elif r[0] == "p" and len(r) == 4:
            named[r[1]] = (float(r[2]), float(r[3]))
        else:
            raise ValueError(f"malformed domain line: {' '.join(r)}")
    params = None
    if "top_left" in named and "neck" in named:
        params = DomainParams(named["top_left"][1], named["neck"][1], None)
    if "dirichlet_d" in tags:
        region = "quarter_D1"
    elif params is not None:
        region = "full_D"
    else:
        region = "custom"
    dom = DomainSpec(verts, edges, tags, region, named, params)
    if params is not None:
        nseg = len(dom.vertices) if region == "quarter_D1" else len(dom.vertices) // 4
        # the quarter loop holds 2 * (n + 1) + 4 vertices
        n_arc = (nseg - 6) // 2 if region == "quarter_D1" else None
        if n_arc:
            object.__setattr__(dom, "params", DomainParams(params.epsilon, params.epsilon0, n_arc))
    return dom


def save(dom: DomainSpec, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(dom))


def load(path) -> DomainSpec:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


# ---------------------------------------------------------------------------
# boundary index and point queries


class BoundaryIndex:
    """Edge arrays plus a uniform grid of candidate-edge lists.

    Cells whose whole extent is safely inside the domain are marked with
    state 0 so interior points skip the nearest-edge search.  For other
    cells the candidate list holds every edge that can be nearest to some
    point of the cell (``d(center, e) <= d_min(center) + cell diagonal``).
    A second list per cell holds the edges meeting the cell, used for ray
    traversal.
    """

    def __init__(self, dom: DomainSpec, max_cells=200_000):
        a, b = dom.edge_points()
        self.n_edges = len(a)
        self.ax, self.ay = a[:, 0].copy(), a[:, 1].copy()
        self.bx, self.by = b[:, 0].copy(), b[:, 1].copy()
        d = b - a
        self.elen = np.hypot(d[:, 0], d[:, 1])
        self.tx = d[:, 0] / self.elen
        self.ty = d[:, 1] / self.elen
        self.tol = dom.tol_geom
        m = self.n_edges
        self.e_prev = np.empty(m, dtype=np.int64)
        self.e_next = np.empty(m, dtype=np.int64)
        for loop in dom.loops:
            L = len(loop)
            for pos, k in enumerate(loop):
                self.e_prev[k] = loop[pos - 1]
                self.e_next[k] = loop[(pos + 1) % L]
        ip = self.e_prev
        cross = self.tx[ip] * self.ty - self.ty[ip] * self.tx
        self.convex_start = cross >= 0.0  # left turn at the start vertex
        self.convex_u8 = self.convex_start.astype(np.uint8)
        self._build_grid(max_cells)

    def _build_grid(self, max_cells):
        from scipy import ndimage
        from scipy.spatial import cKDTree

        xs = np.concatenate([self.ax, self.bx])
        ys = np.concatenate([self.ay, self.by])
        lo = np.array([xs.min(), ys.min()])
        hi = np.array([xs.max(), ys.max()])
        span = hi - lo
        cs = max(np.hypot(*span) / 512.0, math.sqrt(span[0] * span[1] / max_cells), 1e-9)
        margin = 2.0 * cs
        self.x0 = float(lo[0] - margin)
        self.y0 = float(lo[1] - margin)
        self.cs = float(cs)
        self.nx = int(math.ceil((span[0] + 2 * margin) / cs))
        self.ny = int(math.ceil((span[1] + 2 * margin) / cs))
        ncell = self.nx * self.ny
        ci = np.arange(ncell)
        cx = self.x0 + (ci % self.nx + 0.5) * cs
        cy = self.y0 + (ci // self.nx + 0.5) * cs
        diag = cs * math.sqrt(2.0)
        # boundary samples every cs/2 give distances to within cs/4
        k = np.maximum(1, np.ceil(self.elen / (0.5 * cs)).astype(int))
        sx = np.concatenate([self.ax[i] + np.arange(k[i]) / k[i] * (self.bx[i] - self.ax[i]) for i in range(self.n_edges)])
        sy = np.concatenate([self.ay[i] + np.arange(k[i]) / k[i] * (self.by[i] - self.ay[i]) for i in range(self.n_edges)])
        approx, _ = cKDTree(np.column_stack([sx, sy])).query(np.column_stack([cx, cy]))
        near = approx <= 3.0 * diag + 0.25 * cs
        # state 0: safely interior, 1: use candidate list, 2: far outside (brute force)
        state = np.full(ncell, 1, dtype=np.int8)
        labels, nlab = ndimage.label(~near.reshape(self.ny, self.nx))
        labels = labels.ravel()
        if nlab:
            first = np.full(nlab + 1, -1)
            idx = np.nonzero(labels)[0]
            first[labels[idx[::-1]]] = idx[::-1]
            reps = first[1:]
            *_, st = kernels.numpy_nearest(cx[reps], cy[reps], self)
            comp_state = np.concatenate([[1], np.where(st > 0, 0, 2)])
            state = np.where(labels > 0, comp_state[labels], state).astype(np.int8)
        near_idx = np.nonzero(near)[0]
        rows_c, cols_c, rows_r, cols_r = [], [], [], []
        chunk = max(1, 4_000_000 // max(1, self.n_edges))
        for s0 in range(0, len(near_idx), chunk):
            cells = near_idx[s0:s0 + chunk]
            px = cx[cells, None] - self.ax[None, :]
            py = cy[cells, None] - self.ay[None, :]
            t = np.clip(px * self.tx + py * self.ty, 0.0, self.elen)
            dd = np.hypot(px - t * self.tx, py - t * self.ty)
            dmin = dd.min(axis=1)
            r, c = np.nonzero(dd <= (dmin + diag + 4 * self.tol)[:, None])
            rows_c.append(cells[r])
            cols_c.append(c)
            r2, c2 = np.nonzero(dd <= 0.5 * diag + 4 * self.tol)
            rows_r.append(cells[r2])
            cols_r.append(c2)
            deep = dmin > 0.5 * diag + 4 * self.tol
            if deep.any():
                dc = cells[deep]
                *_, st = kernels.numpy_nearest(cx[dc], cy[dc], self)
                state[dc[st > 0]] = 0
        self.cell_state = state
        rows = np.concatenate(rows_c) if rows_c else np.zeros(0, int)
        cols = np.concatenate(cols_c) if cols_c else np.zeros(0, int)
        keep = state[rows] == 1
        self.cell_ptr, self.cell_edges = _csr(rows[keep], cols[keep], ncell)
        rr = np.concatenate(rows_r) if rows_r else np.zeros(0, int)
        rc = np.concatenate(cols_r) if cols_r else np.zeros(0, int)
        self.ray_ptr, self.ray_edges = _csr(rr, rc, ncell)


def _csr(rows, cols, n):
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, rows + 1, 1)
    return np.cumsum(ptr), cols.astype(np.int64)


class Location(NamedTuple):
    kind: str  # "interior", "exterior" or "boundary"
    tag: str | None = None
    edge: int = -1


class BoundaryFoot(NamedTuple):
    foot: np.ndarray
    inward_normal: np.ndarray
    edge_id: int
    at_vertex: bool
    distance: float


def classify_points(dom: DomainSpec, pts):
    """Vectorised classification: status 1 interior, 0 boundary, -1 exterior."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    _, _, _, edge, status, _ = kernels.project(pts[:, 0], pts[:, 1], dom.index)
    return status, edge


def classify(dom: DomainSpec, p) -> Location:
    status, edge = classify_points(dom, [p])
    s, e = int(status[0]), int(edge[0])
    if s > 0:
        return Location("interior")
    if s < 0:
        return Location("exterior")
    return Location("boundary", dom.tags[e], e)


def nearest_boundary(dom: DomainSpec, p) -> BoundaryFoot:
    """Closest boundary point, inward normal of its edge, edge id (lowest on ties)."""
    p = np.asarray(p, dtype=float).reshape(1, 2)
    qx, qy, dist, edge, feature, _ = kernels.nearest(p[:, 0], p[:, 1], dom.index)
    k = int(edge[0])
    bi = dom.index
    normal = np.array([-bi.ty[k], bi.tx[k]])
    return BoundaryFoot(np.array([qx[0], qy[0]]), normal, k, bool(feature[0] != 0), float(dist[0]))


def inside_mask(dom: DomainSpec, pts, closed=True):
    status, _ = classify_points(dom, pts)
    return status >= 0 if closed else status > 0


# ---------------------------------------------------------------------------
# geodesic distance to the Dirichlet segment


class GeodesicField:
    """Shortest-path distance inside the closed quarter domain to its
    ``dirichlet_d`` segment.

    Paths are straight between reflex vertices (where shortest paths bend),
    so distances come from a visibility graph over the reflex vertices with
    multiple sources on the target segment (samples every ``spacing`` plus
    the exact perpendicular foot from each node).
    """

    def __init__(self, dom: DomainSpec, spacing=None):
        if "dirichlet_d" not in dom.tags:
            raise ValueError("domain has no dirichlet_d edge")
        self.dom = dom
        k = dom.tags.index("dirichlet_d")
        a, b = dom.edge_points()
        self.ta, self.tb = a[k], b[k]
        if spacing is None:
            spacing = (dom.epsilon or 0.1) / 10.0
        m = max(1, int(math.ceil(np.linalg.norm(self.tb - self.ta) / spacing)))
        s = np.linspace(0.0, 1.0, m + 1)
        self.targets = self.ta + s[:, None] * (self.tb - self.ta)
        bi = dom.index
        reflex = ~bi.convex_start
        self.nodes = np.column_stack([bi.ax[reflex], bi.ay[reflex]])
        self.node_rho = self._node_distances()

    def _visible(self, p, q):
        """Visibility mask for segment arrays p, q of shape (n, 2)."""
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        n = len(p)
        ok = np.ones(n, dtype=bool)
        a, b = self.dom.edge_points()
        tol = 1e-13 * self.dom.diameter ** 2
        chunk = max(1, 2_000_000 // len(a))
        for s in range(0, n, chunk):
            e = min(n, s + chunk)
            hit = segments_cross(p[s:e, None, :], q[s:e, None, :], a[None], b[None], tol)
            ok[s:e] = ~hit.any(axis=1)
        for f in (0.25, 0.5, 0.75):
            idx = np.nonzero(ok)[0]
            if idx.size == 0:
                break
            mid = p[idx] + f * (q[idx] - p[idx])
            st, _ = classify_points(self.dom, mid)
            ok[idx[st < 0]] = False
        return ok

    def _direct(self, pts):
        """Distance to the target set along visible straight segments (inf if none)."""
        pts = np.asarray(pts, float)
        d = self.tb - self.ta
        s = np.clip(((pts - self.ta) @ d) / (d @ d), 0.0, 1.0)
        foot = self.ta + s[:, None] * d
        cand = [foot] + [np.broadcast_to(t, pts.shape) for t in self.targets]
        best = np.full(len(pts), np.inf)
        for q in cand:
            dist = np.hypot(*(pts - q).T)
            better = dist < best
            if better.any():
                idx = np.nonzero(better)[0]
                vis = self._visible(pts[idx], q[idx])
                best[idx[vis]] = dist[idx[vis]]
        return best

    def _node_distances(self):
        nodes = self.nodes
        n = len(nodes)
        rho = self._direct(nodes) if n else np.zeros(0)
        if n == 0:
            return rho
        ii, jj = np.triu_indices(n, k=1)
        vis = self._visible(nodes[ii], nodes[jj])
        w = np.hypot(*(nodes[ii] - nodes[jj]).T)
        adj = [[] for _ in range(n)]
        for i, j, ww in zip(ii[vis], jj[vis], w[vis]):
            adj[i].append((j, ww))
            adj[j].append((i, ww))
        dist = rho.copy()
        heap = [(d, i) for i, d in enumerate(dist) if np.isfinite(d)]
        heapq.heapify(heap)
        while heap:
            d, i = heapq.heappop(heap)
            if d > dist[i]:
                continue
            for j, ww in adj[i]:
                nd = d + ww
                if nd < dist[j]:
                    dist[j] = nd
                    heapq.heappush(heap, (nd, j))
        return dist

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        st, _ = classify_points(self.dom, pts)
        if (st < 0).any():
            raise ValueError("rho is defined only on the closure of the domain")
        best = self._direct(pts)
        for k, node in enumerate(self.nodes):
            if not np.isfinite(self.node_rho[k]):
                continue
            via = np.hypot(*(pts - node).T) + self.node_rho[k]
            better = via < best
            if better.any():
                idx = np.nonzero(better)[0]
                vis = self._visible(pts[idx], np.broadcast_to(node, (len(idx), 2)))
                best[idx[vis]] = via[idx[vis]]
        return best


def rho(dom: DomainSpec, p):
    """Geodesic distance in the closed quarter domain from ``p`` to ``dirichlet_d``."""
    field_ = _geodesic_cache(dom)
    out = field_(p)
    return float(out[0]) if np.ndim(p) == 1 else out


_GEO_CACHE: dict = {}


def _geodesic_cache(dom):
    key = id(dom)
    hit = _GEO_CACHE.get(key)
    if hit is None or hit[0] is not dom:
        hit = (dom, GeodesicField(dom))
        _GEO_CACHE[key] = hit
    return hit[1]


# ---------------------------------------------------------------------------
# named regions


@dataclass(frozen=True)
class NamedRegion:
    """Region of the plane intersected with a host domain.

    ``kind`` is one of:
    ``box``      open box (x_lo, x_hi, y_lo, y_hi); infinities allowed;
    ``vsegment`` vertical segment x1 = x, y_lo <= x2 <= y_hi (a window);
    ``disk``     closed disk (cx, cy, radius);
    ``circle``   circle (cx, cy, radius), tested with a band of ``tol``;
    ``union``    union of sub-regions in ``parts``.
    """

    id: str
    kind: str
    bounds: tuple = ()
    j: int | None = None
    parts: tuple = ()
    tol: float = 0.0

    def contains(self, pts, closed=False):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        if self.kind == "box":
            x0, x1, y0, y1 = self.bounds
            if closed:
                return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
            return (x > x0) & (x < x1) & (y > y0) & (y < y1)
        if self.kind == "vsegment":
            xx, y0, y1 = self.bounds
            return (np.abs(x - xx) <= self.tol) & (y >= y0) & (y <= y1)
        if self.kind == "disk":
            cx, cy, r = self.bounds
            return np.hypot(x - cx, y - cy) <= r
        if self.kind == "circle":
            cx, cy, r = self.bounds
            return np.abs(np.hypot(x - cx, y - cy) - r) <= max(self.tol, 1e-12)
        if self.kind == "union":
            out = np.zeros(len(pts), dtype=bool)
            for p in self.parts:
                out |= p.contains(pts, closed)
            return out
        raise ValueError(f"unknown region kind {self.kind}")


def coupling_regions(eps, c_star):
    """Rectangles and windows driving the staged coupling in D1.

    Keys are prefixed ``cA`` to keep them apart from the construction pieces
    of the domain.  ``j`` runs over 0..j0 with j0 = floor(c_star / eps).
    """
    j0 = int(math.floor(c_star / eps + 1e-12))
    inf = math.inf
    R = {}
    R["cA1"] = NamedRegion("cA1", "box", (0.0, eps, 0.7 * eps, inf))
    R["cA2"] = NamedRegion("cA2", "vsegment", (eps, 0.7 * eps, 0.8 * eps))
    R["cA4"] = NamedRegion("cA4", "box", (0.0, eps, -0.3 * eps, 0.1 * eps))
    for j in range(j0 + 1):
        R[f"cA5_{j}"] = NamedRegion(f"cA5_{j}", "box", (j * eps, (j + 2) * eps, 0.6 * eps, 0.9 * eps), j)
        R[f"cA6_{j}"] = NamedRegion(f"cA6_{j}", "vsegment", ((j + 2) * eps, 0.7 * eps, 0.8 * eps), j)
    R["cA7"] = NamedRegion("cA7", "box", (j0 * eps, (j0 + 3) * eps, -0.5 * eps, inf))
    R["cA8"] = NamedRegion("cA8", "box", ((j0 + 1) * eps, (j0 + 2) * eps, -inf, inf))
    R["cA9"] = NamedRegion("cA9", "box", ((j0 - 100) * eps, (j0 + 100) * eps, 0.0, inf))
    R["cA11"] = NamedRegion(
        "cA11",
        "union",
        parts=(
            NamedRegion("cA11a", "box", ((j0 - 50) * eps, (j0 + 50) * eps, -inf, inf)),
            NamedRegion("cA11b", "box", (-inf, eps, -inf, inf)),
        ),
    )
    R["cA12"] = NamedRegion("cA12", "vsegment", (1.0, -inf, inf))
    R["cA13"] = NamedRegion("cA13", "box", (-inf, 0.5, -inf, inf))
    return j0, R


def comparison_regions(params: DomainParams):
    """Annulus pieces around y, the lower half D_-, and the tube end set."""
    r = params.r
    y = (2.0 + r, 0.0)
    out = {
        "K1": NamedRegion("K1", "disk", (*y, 2 * r)),
        "K2": NamedRegion("K2", "circle", (*y, 0.5), tol=1e-9),
        "K3": NamedRegion("K3", "circle", (*y, 1.0), tol=1e-9),
        "D_minus": NamedRegion("D_minus", "box", (-math.inf, math.inf, -math.inf, -1.0)),
        "half_tube_C1": NamedRegion("half_tube_C1", "box", (-math.inf, 0.5, -math.inf, math.inf)),
    }
    return out


def in_K(pts):
    """The strip {|x1| <= 2, x2 > -1} used with the annulus pieces."""
    pts = np.atleast_2d(pts)
    return (np.abs(pts[:, 0]) <= 2.0) & (pts[:, 1] > -1.0)
