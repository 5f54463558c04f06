"""Triangle meshes of polygonal domains.

``triangulate`` produces a conforming Delaunay mesh by refinement: the
boundary is split according to a graded size field, interior points are
seeded on a hexagonal lattice, and then encroached or missing boundary
subsegments are split and circumcentres of skinny or oversized triangles
are inserted (Ruppert's scheme, batched) until every triangle has a minimum
angle of at least ``min_angle`` degrees.  Qhull (via scipy) does the
Delaunay step.

The size field is ``min(h, thickness / across)`` on the boundary, where
``thickness`` is the distance across the domain along the inward normal,
and grows linearly (slope ``grading``) away from it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from . import kernels
from .geometry import DomainSpec, classify_points


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation.

    ``triangles`` are counterclockwise; ``boundary_edges`` are oriented with
    the domain on the left and carry the tag (and source edge id) of the
    domain edge they lie on.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple
    h: float
    boundary_source: np.ndarray | None = None

    def __post_init__(self):
        for name, dt in (("nodes", np.float64), ("triangles", np.int64), ("boundary_edges", np.int64)):
            a = np.ascontiguousarray(getattr(self, name), dtype=dt)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        object.__setattr__(self, "boundary_tags", tuple(self.boundary_tags))
        if self.boundary_source is None:
            object.__setattr__(self, "boundary_source", np.full(len(self.boundary_edges), -1, dtype=np.int64))

    @property
    def n_nodes(self):
        return len(self.nodes)

    def areas(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def angles(self):
        """Interior angles (degrees), shape (n_triangles, 3)."""
        return triangle_angles(self.nodes[self.triangles])

    def min_angle(self):
        return float(self.angles().min())

    @cached_property
    def boundary_nodes(self):
        return np.unique(self.boundary_edges.ravel())

    def nodes_with_tag(self, tag):
        sel = [k for k, t in enumerate(self.boundary_tags) if t == tag]
        if not sel:
            return np.zeros(0, dtype=np.int64)
        return np.unique(self.boundary_edges[sel].ravel())

    def nearest_node(self, p):
        d = np.hypot(*(self.nodes - np.asarray(p, float)).T)
        return int(np.argmin(d))

    @cached_property
    def locator(self):
        return TriLocator(self)

    def edge_lengths(self):
        p = self.nodes[self.triangles]
        return np.stack([np.hypot(*(p[:, (i + 1) % 3] - p[:, i]).T) for i in range(3)], axis=1)


def triangle_angles(p):
    out = np.empty(p.shape[:-1])
    for i in range(3):
        a = p[..., (i + 1) % 3, :] - p[..., i, :]
        b = p[..., (i + 2) % 3, :] - p[..., i, :]
        cr = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
        out[..., i] = np.degrees(np.arctan2(np.abs(cr), (a * b).sum(-1)))
    return out


class TriLocator:
    """Uniform-grid bucket structure for point location in a mesh."""

    def __init__(self, mesh: Mesh, target_per_cell=4.0):
        # private writable copies (compiled kernels take non-const buffers)
        self.x = np.array(mesh.nodes[:, 0], dtype=np.float64)
        self.y = np.array(mesh.nodes[:, 1], dtype=np.float64)
        self.tri = np.array(mesh.triangles, dtype=np.int64)
        p = mesh.nodes[mesh.triangles]
        lo = p.min(axis=1)
        hi = p.max(axis=1)
        span = mesh.nodes.max(0) - mesh.nodes.min(0)
        nt = len(self.tri)
        cs = math.sqrt(max(span[0] * span[1], 1e-300) * target_per_cell / max(nt, 1))
        cs = max(cs, float(np.median(hi - lo)) if nt else 1.0)
        self.cs = cs
        self.x0 = float(mesh.nodes[:, 0].min() - cs)
        self.y0 = float(mesh.nodes[:, 1].min() - cs)
        self.nx = int(math.ceil((span[0] + 2 * cs) / cs)) + 1
        self.ny = int(math.ceil((span[1] + 2 * cs) / cs)) + 1
        pad = 1e-9 * max(span.max(), 1.0)
        i0 = np.floor((lo[:, 0] - pad - self.x0) / cs).astype(np.int64)
        i1 = np.floor((hi[:, 0] + pad - self.x0) / cs).astype(np.int64)
        j0 = np.floor((lo[:, 1] - pad - self.y0) / cs).astype(np.int64)
        j1 = np.floor((hi[:, 1] + pad - self.y0) / cs).astype(np.int64)
        rows, cols = [], []
        for di in range(int((i1 - i0).max()) + 1 if nt else 0):
            for dj in range(int((j1 - j0).max()) + 1):
                ok = (i0 + di <= i1) & (j0 + dj <= j1)
                t = np.nonzero(ok)[0]
                rows.append((j0[t] + dj) * self.nx + (i0[t] + di))
                cols.append(t)
        rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        ptr = np.zeros(self.nx * self.ny + 1, dtype=np.int64)
        np.add.at(ptr, rows + 1, 1)
        self.ptr = np.cumsum(ptr)
        self.items = cols.astype(np.int64)
        counts = np.diff(self.ptr)
        self.max_per_cell = int(counts.max()) if counts.size else 0
        self.tol = 1e-9

    def locate(self, pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        return kernels.locate(pts[:, 0], pts[:, 1], self)

    def interpolate(self, values, pts, fill=np.nan):
        pts = np.atleast_2d(np.asarray(pts, float))
        return kernels.interpolate(pts[:, 0], pts[:, 1], np.ascontiguousarray(values, float), self, fill)


# ---------------------------------------------------------------------------
# size field


class SizeField:
    def __init__(self, dom: DomainSpec, h, across=4.0, grading=0.3):
        self.h = float(h)
        self.grading = grading
        a, b = dom.edge_points()
        bi = dom.index
        pts, sizes = [], []
        for k in range(dom.n_edges):
            L = bi.elen[k]
            m = max(2, int(math.ceil(L / (0.5 * h))))
            s = (np.arange(m) + 0.5) / m
            p = a[k] + s[:, None] * (b[k] - a[k])
            nrm = np.array([-bi.ty[k], bi.tx[k]])
            o = p + 1e-9 * dom.diameter * nrm
            _, _, t, e = kernels.ray_first_hit(o[:, 0], o[:, 1], np.full(m, nrm[0]), np.full(m, nrm[1]), bi, 1e-12)
            thick = np.where(e >= 0, t, np.inf)
            pts.append(p)
            sizes.append(np.minimum(self.h, thick / across))
        self.pts = np.vstack(pts)
        self.sizes = np.concatenate(sizes)
        self.tree = cKDTree(self.pts)

    def __call__(self, x):
        x = np.atleast_2d(x)
        k = min(48, len(self.pts))
        d, i = self.tree.query(x, k=k)
        d = d.reshape(len(x), k)
        i = i.reshape(len(x), k)
        val = (self.sizes[i] + self.grading * d).min(axis=1)
        return np.minimum(self.h, val)


# ---------------------------------------------------------------------------
# triangulation


class MeshingError(RuntimeError):
    pass


def _boundary_points(dom: DomainSpec, size: SizeField):
    """Split every domain edge according to the size field."""
    a, b = dom.edge_points()
    pts = [dom.vertices.copy()]
    nv = len(dom.vertices)
    segs, src = [], []
    nxt = nv
    for k, (i, j) in enumerate(dom.edges):
        L = float(np.hypot(*(b[k] - a[k])))
        m = max(16, int(math.ceil(L / (0.25 * size.sizes.min()))))
        m = min(m, 4000)
        s = np.linspace(0.0, 1.0, m + 1)
        p = a[k] + s[:, None] * (b[k] - a[k])
        dens = 1.0 / size(p)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s) * L)])
        n = max(1, int(math.ceil(cum[-1] - 1e-9)))
        if n == 1:
            segs.append((i, j))
            src.append(k)
            continue
        targets = cum[-1] * np.arange(1, n) / n
        sp = np.interp(targets, cum, s)
        newp = a[k] + sp[:, None] * (b[k] - a[k])
        ids = np.arange(nxt, nxt + len(newp))
        nxt += len(newp)
        pts.append(newp)
        chain = [i, *ids.tolist(), j]
        for u, v in zip(chain[:-1], chain[1:]):
            segs.append((u, v))
            src.append(k)
    return np.vstack(pts), np.array(segs, dtype=np.int64), np.array(src, dtype=np.int64)


def _hex_seeds(dom: DomainSpec, size: SizeField, h):
    lo = dom.vertices.min(0)
    hi = dom.vertices.max(0)
    dy = h * math.sqrt(3.0) / 2.0
    ys = np.arange(lo[1] + 0.5 * dy, hi[1], dy)
    rows = []
    for r, y in enumerate(ys):
        off = 0.5 * h if r % 2 else 0.0
        xs = np.arange(lo[0] + off + 0.5 * h, hi[0], h)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    if not rows:
        return np.zeros((0, 2))
    p = np.vstack(rows)
    if len(p) == 0:
        return p
    st, _ = classify_points(dom, p)
    p = p[st > 0]
    s = size(p)
    p = p[s >= 0.9 * h]
    dist = kernels.nearest(p[:, 0], p[:, 1], dom.index)[2]
    return p[dist >= 0.6 * h]


def _circumcenters(p):
    ax, ay = p[:, 0, 0], p[:, 0, 1]
    bx, by = p[:, 1, 0] - ax, p[:, 1, 1] - ay
    cx, cy = p[:, 2, 0] - ax, p[:, 2, 1] - ay
    d = 2.0 * (bx * cy - by * cx)
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    return np.column_stack([ax + ux, ay + uy]), np.hypot(ux, uy)


def _edge_keys(tri, n):
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e.sort(axis=1)
    return e[:, 0] * n + e[:, 1]


def triangulate(dom: DomainSpec, h, min_angle=20.0, across=4.0, grading=0.3, max_rounds=200):
    """Quality conforming Delaunay mesh of ``dom`` with target edge length ``h``."""
    h = float(h)
    if not h > 0:
        raise ValueError("h must be positive")
    eps = dom.epsilon
    if eps is not None and h > eps / 3.0 + 1e-15:
        raise ValueError(f"h={h} too coarse; need h <= epsilon/3 = {eps / 3.0}")
    size = SizeField(dom, h, across, grading)
    bpts, segs, src = _boundary_points(dom, size)
    pts = np.vstack([bpts, _hex_seeds(dom, size, h)])
    tol = dom.tol_geom
    seg_list = [segs]
    src_list = [src]
    tri = None
    for _round in range(max_rounds):
        segs = np.concatenate(seg_list)
        src = np.concatenate(src_list)
        seg_list, src_list = [segs], [src]
        n = len(pts)
        tri = Delaunay(pts, qhull_options="Qbb Qc Qz Q12").simplices.astype(np.int64)
        keys = set(_edge_keys(tri, n).tolist())
        sk = np.sort(segs, axis=1)
        present = np.fromiter((int(k) in keys for k in (sk[:, 0] * n + sk[:, 1])), bool, len(segs))
        mid = 0.5 * (pts[segs[:, 0]] + pts[segs[:, 1]])
        half = 0.5 * np.hypot(*(pts[segs[:, 1]] - pts[segs[:, 0]]).T)
        enc = ~present
        # a point strictly inside a subsegment's diametral circle encroaches it
        tree = cKDTree(pts)
        for k in np.nonzero(present)[0]:
            cand = tree.query_ball_point(mid[k], half[k] * (1.0 - 1e-9))
            for c in cand:
                if c != segs[k, 0] and c != segs[k, 1]:
                    enc[k] = True
                    break
        if enc.any():
            pts, seg_list, src_list = _split_segments(pts, segs, src, enc)
            continue
        cent = pts[tri].mean(axis=1)
        st, _ = classify_points(dom, cent)
        tri = tri[st > 0]
        P = pts[tri]
        ang = triangle_angles(P).min(axis=1)
        cc, R = _circumcenters(P)
        target = size(cent[st > 0])
        bad = (ang < min_angle) | (R > 0.7 * target)
        if not bad.any():
            break
        order = np.argsort(-(R[bad] / target[bad]))
        cand = cc[bad][order]
        csize = target[bad][order]
        crad = R[bad][order]
        # split subsegments encroached by candidate points instead of inserting them
        stree = cKDTree(mid)
        enc = np.zeros(len(segs), dtype=bool)
        keep = np.ones(len(cand), dtype=bool)
        hits = stree.query_ball_point(cand, half.max())
        for i, lst in enumerate(hits):
            for k in lst:
                if np.hypot(*(cand[i] - mid[k])) < half[k] * (1.0 - 1e-9):
                    enc[k] = True
                    keep[i] = False
        cst, _ = classify_points(dom, cand)
        keep &= cst > 0
        cand = cand[keep]
        csize = csize[keep]
        crad = crad[keep]
        if len(cand):
            sel = _thin(cand, 0.4 * np.minimum(csize, crad))
            cand = cand[sel]
            d, _ = tree.query(cand)
            cand = cand[d > 1e-3 * crad[sel]]
        if not enc.any() and len(cand) == 0:
            raise MeshingError("refinement stalled with bad triangles left")
        if enc.any():
            pts, seg_list, src_list = _split_segments(pts, segs, src, enc)
        if len(cand):
            pts = np.vstack([pts, cand])
    else:
        raise MeshingError(f"no quality mesh after {max_rounds} rounds")
    return _finalize(dom, pts, tri, segs, src, h, min_angle, tol)


def _thin(p, r):
    """Greedy subset of points with pairwise distance >= r (first come first kept)."""
    tree = cKDTree(p)
    pairs = tree.query_pairs(r.max(), output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(len(p))
    d = np.hypot(*(p[pairs[:, 0]] - p[pairs[:, 1]]).T)
    close = d < np.minimum(r[pairs[:, 0]], r[pairs[:, 1]])
    pairs = pairs[close]
    alive = np.ones(len(p), dtype=bool)
    nbr = [[] for _ in range(len(p))]
    for i, j in pairs:
        nbr[i].append(j)
        nbr[j].append(i)
    for i in range(len(p)):
        if alive[i]:
            for j in nbr[i]:
                if j > i:
                    alive[j] = False
    return np.nonzero(alive)[0]


def _split_segments(pts, segs, src, mask):
    idx = np.nonzero(mask)[0]
    midp = 0.5 * (pts[segs[idx, 0]] + pts[segs[idx, 1]])
    new_ids = np.arange(len(pts), len(pts) + len(idx))
    pts = np.vstack([pts, midp])
    keep = segs[~mask]
    a = np.column_stack([segs[idx, 0], new_ids])
    b = np.column_stack([new_ids, segs[idx, 1]])
    return pts, [keep, a, b], [src[~mask], src[idx], src[idx]]


def _finalize(dom, pts, tri, segs, src, h, min_angle, tol):
    used = np.unique(tri.ravel())
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    nodes = pts[used]
    tri = remap[tri]
    segs = remap[segs]
    if (segs < 0).any():
        raise MeshingError("boundary subsegment lost during meshing")
    # counterclockwise orientation
    p = nodes[tri]
    ar = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = ar < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    order = np.lexsort((tri[:, 2], tri[:, 1], tri[:, 0]))
    tri = tri[order]
    return _assemble_mesh(dom, nodes, tri, segs, src, h, min_angle)


def _assemble_mesh(dom, nodes, tri, segs, src, h, min_angle):
    n = len(nodes)
    bnd = boundary_edges_of(tri)
    bkey = np.sort(bnd, axis=1)
    bkey = bkey[:, 0] * n + bkey[:, 1]
    skey = np.sort(segs, axis=1)
    skey = skey[:, 0] * n + skey[:, 1]
    lookup = dict(zip(skey.tolist(), src.tolist()))
    srcs = np.array([lookup.get(k, -1) for k in bkey.tolist()], dtype=np.int64)
    if (srcs < 0).any() or len(bnd) != len(segs):
        raise MeshingError("mesh boundary does not match the domain boundary")
    order = np.argsort(srcs, kind="stable")
    bnd, srcs = bnd[order], srcs[order]
    tags = tuple(dom.tags[k] for k in srcs)
    mesh = Mesh(nodes, tri, bnd, tags, h, srcs)
    check_mesh(mesh, min_angle)
    return mesh


def boundary_edges_of(tri):
    """Edges used by exactly one triangle, oriented as in that triangle."""
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    k = np.sort(e, axis=1)
    n = int(tri.max()) + 1
    key = k[:, 0] * n + k[:, 1]
    uniq, inv, cnt = np.unique(key, return_inverse=True, return_counts=True)
    if cnt.max() > 2:
        raise MeshingError("non-manifold edge in triangulation")
    return e[cnt[inv] == 1]


def check_mesh(mesh: Mesh, min_angle=20.0):
    ar = mesh.areas()
    if not (ar > 0).all():
        raise MeshingError("degenerate or clockwise triangle")
    if mesh.min_angle() < min_angle - 1e-9:
        raise MeshingError(f"minimum angle {mesh.min_angle():.2f} below {min_angle}")


# ---------------------------------------------------------------------------
# derived meshes


def reflect_mesh(mesh: Mesh, axis: str, value: float, tags_to_drop=()):
    """Union of ``mesh`` and its mirror image across x1 = value ('x') or x2 = value ('y').

    Nodes on the mirror line are shared.  Boundary edges lying on the mirror
    line (those tagged with one of ``tags_to_drop``) become interior.
    """
    nodes = mesh.nodes.copy()
    k = 0 if axis == "x" else 1
    refl = nodes.copy()
    refl[:, k] = 2.0 * value - refl[:, k]
    if axis == "x" and value == 0.0:
        refl[:, 0] = 0.0 - nodes[:, 0] + 0.0
    on = np.abs(nodes[:, k] - value) <= 1e-12 * max(1.0, np.abs(nodes).max())
    n = len(nodes)
    new_index = np.where(on, np.arange(n), n + np.cumsum(~on) - 1)
    all_nodes = np.vstack([nodes, refl[~on]])
    tri2 = new_index[mesh.triangles][:, [0, 2, 1]]
    tri = np.vstack([mesh.triangles, tri2])
    keep = np.array([t not in tags_to_drop for t in mesh.boundary_tags])
    b1 = mesh.boundary_edges[keep]
    b2 = new_index[b1][:, [1, 0]]
    tags = tuple(t for t, kk in zip(mesh.boundary_tags, keep) if kk)
    src = mesh.boundary_source[keep]
    return Mesh(all_nodes, tri, np.vstack([b1, b2]), tags + tags, mesh.h, np.concatenate([src, src]))


def symmetric_full_mesh(quarter_mesh: Mesh, full_dom: DomainSpec):
    """Mesh of the full ring built from a quarter mesh by two reflections.

    The result is exactly symmetric under x1 -> -x1 and x2 -> -2 - x2; all
    boundary edges get the tags of ``full_dom`` (source ids refer to it).
    """
    m1 = reflect_mesh(quarter_mesh, "x", 0.0, ("left_ell",))
    m2 = reflect_mesh(m1, "y", -1.0, ("dirichlet_d",))
    # retag against the full domain: nearest domain edge of each boundary edge midpoint
    mid = 0.5 * (m2.nodes[m2.boundary_edges[:, 0]] + m2.nodes[m2.boundary_edges[:, 1]])
    *_, edge, _, _ = kernels.nearest(mid[:, 0], mid[:, 1], full_dom.index)
    tags = tuple(full_dom.tags[k] for k in edge)
    return Mesh(m2.nodes, m2.triangles, m2.boundary_edges, tags, m2.h, edge.astype(np.int64))


def refine_uniform(mesh: Mesh):
    """Split every triangle into four via edge midpoints (nested refinement)."""
    tri = mesh.triangles
    n = mesh.n_nodes
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    k = np.sort(e, axis=1)
    key = k[:, 0] * n + k[:, 1]
    uniq, inv = np.unique(key, return_inverse=True)
    mids = n + inv.reshape(3, -1).T  # midpoint node of edge (0,1), (1,2), (2,0)
    ua, ub = uniq // n, uniq % n
    nodes = np.vstack([mesh.nodes, 0.5 * (mesh.nodes[ua] + mesh.nodes[ub])])
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    m01, m12, m20 = mids[:, 0], mids[:, 1], mids[:, 2]
    new = np.vstack([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    bk = np.sort(mesh.boundary_edges, axis=1)
    bmid = n + np.searchsorted(uniq, bk[:, 0] * n + bk[:, 1])
    be = mesh.boundary_edges
    bnd = np.vstack([np.column_stack([be[:, 0], bmid]), np.column_stack([bmid, be[:, 1]])])
    tags = mesh.boundary_tags + mesh.boundary_tags
    src = np.concatenate([mesh.boundary_source, mesh.boundary_source])
    return Mesh(nodes, new, bnd, tags, 0.5 * mesh.h, src)


def mesh_domain(dom: DomainSpec, h, symmetric=True, **kw):
    """Mesh for ``dom``; the full ring is meshed via its quarter when ``symmetric``."""
    if dom.region_id == "full_D" and symmetric:
        from .geometry import build_quarter

        q = build_quarter(dom.params)
        return symmetric_full_mesh(triangulate(q, h, **kw), dom)
    return triangulate(dom, h, **kw)


# ---------------------------------------------------------------------------
# text export / import

HEADER = "hotspots-mesh v1"


def dumps(mesh: Mesh) -> str:
    out = [HEADER, f"# h {mesh.h!r}"]
    out += [f"n {x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    out += [f"t {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    out += [f"b {i} {j} {t}" for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags)]
    return "\n".join(out) + "\n"


def loads(text: str) -> Mesh:
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise ValueError(f"missing '{HEADER}' header")
    nodes, tris, bnd, tags = [], [], [], []
    h = float("nan")
    for ln in lines[1:]:
        r = ln.split()
        if not r:
            continue
        if r[0] == "#":
            if len(r) == 3 and r[1] == "h":
                h = float(r[2])
            continue
        if r[0] == "n":
            nodes.append((float(r[1]), float(r[2])))
        elif r[0] == "t":
            tris.append((int(r[1]), int(r[2]), int(r[3])))
        elif r[0] == "b":
            bnd.append((int(r[1]), int(r[2])))
            tags.append(r[3])
        else:
            raise ValueError(f"malformed mesh line: {ln}")
    return Mesh(np.array(nodes), np.array(tris), np.array(bnd).reshape(-1, 2), tags, h)


def save(mesh: Mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(mesh))


def load(path) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
