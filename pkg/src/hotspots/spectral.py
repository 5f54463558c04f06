"""P1 finite elements for Neumann and mixed Laplace eigenproblems.

The mixed problem ``mixed_2_3`` imposes a Dirichlet condition on edges
tagged ``dirichlet_d`` (by eliminating those nodes) and the natural Neumann
condition elsewhere.  Eigenvectors are always returned on all mesh nodes,
with zeros at eliminated nodes.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, mesh_domain

BCS = ("neumann_full", "mixed_2_3")
TOL_EIG = 1e-9


class EigenSolveError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class EigenPair:
    """Eigenvalue with its mass-normalized nodal vector."""

    value: float
    vector: np.ndarray
    bc: str
    residual: float = float("nan")

    def __post_init__(self):
        v = np.array(self.vector, dtype=np.float64)
        v.flags.writeable = False
        object.__setattr__(self, "vector", v)


# ---------------------------------------------------------------------------
# assembly


def element_matrices(p):
    """Stiffness and mass matrices of P1 triangles with vertex arrays ``p`` (nt,3,2)."""
    x, y = p[..., 0], p[..., 1]
    bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (bx[:, 0] * by[:, 1] - bx[:, 1] * by[:, 0])
    ke = (bx[:, :, None] * bx[:, None, :] + by[:, :, None] * by[:, None, :]) / (4.0 * area)[:, None, None]
    me = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12.0)[:, None, None]
    return ke, me


def dirichlet_nodes(mesh: Mesh):
    return mesh.nodes_with_tag("dirichlet_d")


def assemble(mesh: Mesh, bc="neumann_full"):
    """Return ``(K, M, dof_map)``; ``dof_map[i]`` is the mesh node of unknown ``i``."""
    if bc not in BCS:
        raise ValueError(f"unknown boundary condition {bc!r}")
    tri = mesh.triangles
    ke, me = element_matrices(mesh.nodes[tri])
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sort_indices()
    M.sort_indices()
    dof = np.arange(n, dtype=np.int64)
    if bc == "mixed_2_3":
        fixed = dirichlet_nodes(mesh)
        if len(fixed) == 0:
            raise ValueError("mixed_2_3 needs edges tagged dirichlet_d")
        dof = np.setdiff1d(dof, fixed)
        K = K[dof][:, dof].tocsr()
        M = M[dof][:, dof].tocsr()
    return K, M, dof


# ---------------------------------------------------------------------------
# eigensolver


def _residuals(K, M, vals, V):
    R = K @ V - (M @ V) * vals[None, :]
    den = np.linalg.norm(M @ V, axis=0)
    return np.linalg.norm(R, axis=0) / np.where(den > 0, den, 1.0)


def _rayleigh_ritz(K, M, V):
    Kr = V.T @ (K @ V)
    Mr = V.T @ (M @ V)
    Kr = 0.5 * (Kr + Kr.T)
    Mr = 0.5 * (Mr + Mr.T)
    w, C = sla.eigh(Kr, Mr)
    return w, V @ C


def eigensolve(K, M, k=6, bc="neumann_full", dof_map=None, n_total=None, nodes=None,
               tol=TOL_EIG, sigma=None, max_refine=20):
    """The ``k`` smallest eigenpairs of ``K v = lam M v``, ascending.

    Shift-invert Lanczos (ARPACK) about a small negative shift, followed by a
    Rayleigh-Ritz cleanup and, if needed, block inverse iteration until every
    relative residual is at most ``tol``.  Vectors are mass-orthonormal and,
    when ``nodes`` is given, signed so the value at the node nearest the
    origin is nonnegative.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = K.shape[0]
    if n_total is None:
        n_total = n
    if dof_map is None:
        dof_map = np.arange(n)
    if sigma is None:
        d = K.diagonal() / M.diagonal()
        sigma = -1e-3 * float(np.median(d))
    A = (K - sigma * M).tocsc()
    lu = spla.splu(A)
    kk = min(k + 2, n - 1)
    op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=np.float64)
    v0 = 1.0 + 0.1 * np.sin(np.arange(n) * 0.7071)
    try:
        w, V = spla.eigsh(K, kk, M, sigma=sigma, which="LM", OPinv=op, v0=v0,
                          ncv=min(n, max(2 * kk + 1, 24)), tol=1e-14, maxiter=20 * n)
    except spla.ArpackNoConvergence as exc:
        V = exc.eigenvectors
        if V is None or V.shape[1] < k:
            raise EigenSolveError("ARPACK did not converge") from exc
    w, V = _rayleigh_ritz(K, M, V)
    res = _residuals(K, M, w, V)
    it = 0
    while (res[:k] > tol).any():
        if it >= max_refine:
            raise EigenSolveError(f"eigen residual {res[:k].max():.3e} above {tol:g}")
        V = lu.solve(np.asarray(M @ V))
        w, V = _rayleigh_ritz(K, M, V)
        res = _residuals(K, M, w, V)
        it += 1
    pairs = []
    if nodes is not None:
        origin_node = int(np.argmin(np.hypot(nodes[:, 0], nodes[:, 1])))
    for i in range(k):
        full = np.zeros(n_total)
        full[dof_map] = V[:, i]
        nrm = math.sqrt(float(V[:, i] @ (M @ V[:, i])))
        full /= nrm
        if nodes is not None and full[origin_node] < 0:
            full = -full
        pairs.append(EigenPair(float(w[i]), full, bc, float(res[i])))
    return pairs


def eigenpairs(mesh: Mesh, bc="neumann_full", k=4, tol=TOL_EIG):
    K, M, dof = assemble(mesh, bc)
    return eigensolve(K, M, k, bc, dof, mesh.n_nodes, mesh.nodes, tol)


def mass_matrix(mesh: Mesh):
    return assemble(mesh, "neumann_full")[1]


def mass_norm(mesh: Mesh, v, M=None):
    if M is None:
        M = mass_matrix(mesh)
    return math.sqrt(float(v @ (M @ v)))


class SecondNeumann(NamedTuple):
    value: float
    pair: EigenPair
    gap: float
    mesh: Mesh
    pairs: list


def second_neumann(domain, h=None, mesh: Mesh | None = None, k=4):
    """Second Neumann eigenpair of ``domain`` with the relative gap (lam3-lam2)/lam2."""
    if mesh is None:
        mesh = mesh_domain(domain, h)
    pairs = eigenpairs(mesh, "neumann_full", k)
    lam2 = pairs[1].value
    gap = (pairs[2].value - lam2) / lam2 if k > 2 else float("nan")
    return SecondNeumann(lam2, pairs[1], gap, mesh, pairs)


def first_mixed(domain, h=None, mesh: Mesh | None = None, k=2):
    """First eigenpair of the mixed problem (Dirichlet on ``dirichlet_d``)."""
    if mesh is None:
        mesh = mesh_domain(domain, h)
    pairs = eigenpairs(mesh, "mixed_2_3", k)
    return pairs[0], mesh


# ---------------------------------------------------------------------------
# post-processing


def gradient_field(mesh: Mesh, values):
    """Exact gradient of the P1 interpolant on each triangle, shape (nt, 2)."""
    p = mesh.nodes[mesh.triangles]
    v = np.asarray(values, float)[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    two_a = bx[:, 0] * by[:, 1] - bx[:, 1] * by[:, 0]
    return np.column_stack([(bx * v).sum(1) / two_a, (by * v).sum(1) / two_a])


@dataclass(frozen=True, eq=False)
class LevelCurve:
    level: float
    chains: list = field(default_factory=list)
    closed: list = field(default_factory=list)

    @property
    def points(self):
        if not self.chains:
            return np.zeros((0, 2))
        return np.vstack(self.chains)

    @property
    def empty(self):
        return not self.chains

    @property
    def r_min(self):
        return float(self.points[:, 0].min()) if self.chains else float("nan")

    @property
    def r_max(self):
        return float(self.points[:, 0].max()) if self.chains else float("nan")

    def segments(self):
        """All polyline segments as (start, end) arrays."""
        if not self.chains:
            return np.zeros((0, 2)), np.zeros((0, 2))
        a = np.vstack([c[:-1] for c in self.chains])
        b = np.vstack([c[1:] for c in self.chains])
        return a, b


def level_curve(mesh: Mesh, values, a) -> LevelCurve:
    """Marching-triangles extraction of ``{v = a}`` (nodes with ``v >= a`` count as above)."""
    v = np.asarray(values, float)
    tri = mesh.triangles
    above = v[tri] >= a
    na = above.sum(axis=1)
    cut = np.nonzero((na == 1) | (na == 2))[0]
    if len(cut) == 0:
        return LevelCurve(float(a), [], [])
    n = mesh.n_nodes
    seg_keys = []
    for t in cut:
        ks = []
        for i in range(3):
            u, w = tri[t, i], tri[t, (i + 1) % 3]
            if above[t, i] != above[t, (i + 1) % 3]:
                ks.append(min(u, w) * n + max(u, w))
        seg_keys.append(ks)
    keys = np.unique(np.array(seg_keys).ravel())
    ku, kw = keys // n, keys % n
    s = (a - v[ku]) / (v[kw] - v[ku])
    pts = mesh.nodes[ku] + s[:, None] * (mesh.nodes[kw] - mesh.nodes[ku])
    idx = {int(k): i for i, k in enumerate(keys)}
    adj = [[] for _ in keys]
    for k1, k2 in seg_keys:
        i, j = idx[k1], idx[k2]
        adj[i].append(j)
        adj[j].append(i)
    seen = np.zeros(len(keys), dtype=bool)
    chains, closed = [], []

    def walk(start):
        path = [start]
        seen[start] = True
        prev, cur = -1, start
        while True:
            nxt = [j for j in adj[cur] if j != prev and not seen[j]]
            if not nxt:
                if len(path) > 2 and start in adj[cur] and prev != start:
                    return path + [start], True
                return path, False
            prev, cur = cur, nxt[0]
            seen[cur] = True
            path.append(cur)

    for i in range(len(keys)):
        if len(adj[i]) == 1 and not seen[i]:
            p, c = walk(i)
            chains.append(pts[p])
            closed.append(c)
    for i in range(len(keys)):
        if not seen[i]:
            p, c = walk(i)
            chains.append(pts[p])
            closed.append(c)
    return LevelCurve(float(a), chains, closed)


def section_max(mesh: Mesh, values, x1):
    """Maximum of the P1 interpolant over the vertical section ``{x_1 = x1}``."""
    v = np.asarray(values, float)
    tri = mesh.triangles
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    xa, xb = mesh.nodes[e[:, 0], 0], mesh.nodes[e[:, 1], 0]
    lo, hi = np.minimum(xa, xb), np.maximum(xa, xb)
    sel = (lo <= x1) & (hi >= x1)
    e, xa, xb = e[sel], xa[sel], xb[sel]
    flat = xb == xa
    s = np.where(flat, 0.0, (x1 - xa) / np.where(flat, 1.0, xb - xa))
    vals = v[e[:, 0]] + s * (v[e[:, 1]] - v[e[:, 0]])
    vals = np.concatenate([vals, v[e[flat, 1]]])
    if len(vals) == 0:
        raise ValueError(f"section x1={x1} misses the mesh")
    return float(vals.max())


class ExtremaReport(NamedTuple):
    max_node: int
    max_value: float
    boundary_max_node: int
    boundary_max_value: float
    min_node: int
    min_value: float
    boundary_min_node: int
    boundary_min_value: float
    margin_max: float
    margin_min: float


def extrema_report(mesh: Mesh, values) -> ExtremaReport:
    """Global versus boundary extrema of nodal values and the two margins."""
    v = np.asarray(values, float)
    b = mesh.boundary_nodes
    imax, imin = int(np.argmax(v)), int(np.argmin(v))
    bmax = int(b[np.argmax(v[b])])
    bmin = int(b[np.argmin(v[b])])
    return ExtremaReport(imax, float(v[imax]), bmax, float(v[bmax]), imin, float(v[imin]),
                         bmin, float(v[bmin]), float(v[imax] - v[bmax]), float(v[bmin] - v[imin]))


def reflection_permutation(mesh: Mesh, axis, value):
    """Node permutation induced by reflection across x1=value ('x') or x2=value ('y')."""
    from scipy.spatial import cKDTree

    q = mesh.nodes.copy()
    k = 0 if axis == "x" else 1
    q[:, k] = 2.0 * value - q[:, k]
    d, i = cKDTree(mesh.nodes).query(q)
    tol = 1e-9 * max(1.0, float(np.abs(mesh.nodes).max()))
    if d.max() > tol:
        raise ValueError("mesh is not symmetric under the requested reflection")
    return i


# ---------------------------------------------------------------------------
# export


def eigen_csv(mesh: Mesh, values) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node_id", "x", "y", "value"])
    for i, ((x, y), val) in enumerate(zip(mesh.nodes.tolist(), np.asarray(values, float).tolist())):
        w.writerow([i, repr(x), repr(y), repr(val)])
    return buf.getvalue()


def level_curve_csv(curve: LevelCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["chain", "index", "x", "y"])
    for c, chain in enumerate(curve.chains):
        for i, (x, y) in enumerate(chain.tolist()):
            w.writerow([c, i, repr(x), repr(y)])
    return buf.getvalue()
