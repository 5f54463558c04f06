"""Numerical studies: eigenvalue trends, symmetry and monotonicity checks,
coupling probabilities, the representation check and the hot-spots verdict.

Every check is a ``Check`` record with a descriptive anchor, measured
values, interval (when random), tolerance and a verdict among ``pass``,
``fail``, ``report-only`` and ``inconclusive``.  Reports serialize to JSON
deterministically.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import __version__
from .coupling import GammaTube, StageSchedule, staged_runs
from .geometry import DomainParams, DomainSpec, GeodesicField, build_domain, build_quarter, classify_points
from .mesh import Mesh, mesh_domain
from .rbm import RATE_FACTOR, SimConfig, heat_mass_curve, run_batch, survival_curve
from .spectral import (extrema_report, first_mixed, gradient_field, level_curve, mass_matrix,
                       reflection_permutation, second_neumann, section_max)
from .stats import Estimate, log_slope, mean_ci, spearman, wilson

PASS, FAIL, REPORT, INCONCLUSIVE = "pass", "fail", "report-only", "inconclusive"


# ---------------------------------------------------------------------------
# configuration and reports


@dataclass(frozen=True)
class StudyConfig:
    """Parameter grids, sample sizes and output location of a study run.

    Lengths are in domain units and times in units of the simulated standard
    Brownian motion.  The checks on the counterexample domain use
    ``min(epsilons)`` and ``epsilon0s[0]``; the eigenvalue trend sweeps the
    whole ``epsilon0s`` grid.  The decay cross-checks run on the wider
    ``decay_params`` domain where the first eigenvalues are large enough to
    be seen within a simulated time of a few dozen units.
    """

    epsilons: tuple = (0.15, 0.1)
    epsilon0s: tuple = (0.01, 0.004, 0.002, 0.001)
    c_star: float = 0.05
    hs: tuple = (0.02, 0.01)
    dt: float = 1e-5
    n_paths: int = 10_000
    t_grid: tuple = (0.25, 0.5, 1.0, 2.0)
    seed: int = 0
    output_dir: str = "out"
    max_time: float = 20.0
    martingale_point: tuple = (0.5, 0.0)
    martingale_time: float = 0.05
    martingale_dt: float = 1e-4
    pair_samples: int = 10_000
    decay_params: tuple = (0.24, 0.2)
    decay_dt: float = 1e-3
    decay_t_grid: tuple = tuple(5.0 + 2.5 * i for i in range(15))

    def __post_init__(self):
        for name in ("epsilons", "epsilon0s", "hs", "t_grid", "decay_t_grid"):
            v = tuple(float(x) for x in getattr(self, name))
            if not v:
                raise ValueError(f"{name}: grid must be nonempty")
            object.__setattr__(self, name, v)
        if int(self.n_paths) < 100:
            raise ValueError("n_paths: need at least 100")
        if not 0.0 < self.c_star < 1.0:
            raise ValueError("c_star: must lie in (0, 1)")
        for name in ("dt", "martingale_dt", "decay_dt", "max_time", "martingale_time"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name}: must be positive")
        if any(h <= 0 for h in self.hs):
            raise ValueError("hs: mesh sizes must be positive")
        if max(self.hs) > min(self.epsilons) / 3.0:
            raise ValueError("hs: mesh sizes must not exceed min(epsilons)/3")
        object.__setattr__(self, "n_paths", int(self.n_paths))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "martingale_point", tuple(float(x) for x in self.martingale_point))
        object.__setattr__(self, "decay_params", tuple(float(x) for x in self.decay_params))
        DomainParams(min(self.epsilons), self.epsilon0s[0])
        DomainParams(*self.decay_params)

    @property
    def primary(self):
        return DomainParams(min(self.epsilons), self.epsilon0s[0])

    @classmethod
    def keys(cls):
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_dict(cls, d):
        unknown = sorted(set(d) - set(cls.keys()))
        if unknown:
            raise KeyError(unknown[0])
        return cls(**d)

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self).items()}

    def content_hash(self):
        blob = json.dumps({"config": self.to_dict(), "version": __version__}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Check:
    name: str
    anchor: str
    verdict: str
    values: dict = field(default_factory=dict)
    ci: dict | None = None
    tolerance: dict | None = None

    def to_dict(self):
        return _clean({"name": self.name, "anchor": self.anchor, "verdict": self.verdict,
                       "values": self.values, "ci": self.ci, "tolerance": self.tolerance})


@dataclass
class StudyReport:
    checks: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, check: Check):
        self.checks.append(check)
        return check

    def extend(self, checks):
        for c in checks:
            self.add(c)

    @property
    def failed(self):
        return [c for c in self.checks if c.verdict == FAIL]

    def to_json(self):
        doc = {"provenance": _clean(self.provenance), "checks": [c.to_dict() for c in self.checks]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, Estimate):
        return _clean(obj.as_dict())
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isfinite(f):
            return f
        return "nan" if math.isnan(f) else ("inf" if f > 0 else "-inf")
    return obj


# ---------------------------------------------------------------------------
# eigenvalue trend


def lambda_trend_study(epsilon, epsilon0_grid, h):
    """Second Neumann eigenvalue and gap for each ratio in a descending eps0 grid."""
    grid = [float(e) for e in epsilon0_grid]
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("epsilon0 grid must be strictly descending")
    rows = []
    for e0 in grid:
        try:
            sn = second_neumann(build_domain(DomainParams(epsilon, e0)), h)
            rows.append({"epsilon0": e0, "ratio": e0 / epsilon, "lambda2": sn.value, "gap": sn.gap})
        except Exception as exc:  # keep the other rows
            rows.append({"epsilon0": e0, "ratio": e0 / epsilon, "error": str(exc)})
    lam = [r["lambda2"] for r in rows if "lambda2" in r]
    mono = all(b < a for a, b in zip(lam, lam[1:]))
    check = Check("lambda_trend", "second eigenvalue decreases with the neck width ratio; gap evidence of simplicity",
                  PASS if mono and len(lam) == len(rows) else FAIL,
                  {"rows": rows, "strictly_decreasing": mono},
                  tolerance={"gap_report_threshold": 0.05})
    return rows, check


# ---------------------------------------------------------------------------
# symmetry


class SymmetryResult(NamedTuple):
    sym_residual: float
    antisym_residual: float
    nodal_hausdorff: float


def symmetry_residuals(mesh: Mesh, values, M=None):
    """Relative mass-norm residuals of ``values`` against its x1-symmetrization
    and its antisymmetrization about x2 = -1."""
    v = np.asarray(values, float)
    if M is None:
        M = mass_matrix(mesh)
    nrm = math.sqrt(float(v @ (M @ v)))
    px = reflection_permutation(mesh, "x", 0.0)
    py = reflection_permutation(mesh, "y", -1.0)
    s = 0.5 * (v + v[px])
    a = 0.5 * (v - v[py])
    rs = s - v
    ra = a - v
    return math.sqrt(float(rs @ (M @ rs))) / nrm, math.sqrt(float(ra @ (M @ ra))) / nrm


def nodal_hausdorff(mesh: Mesh, values, dom: DomainSpec, samples=2000):
    """Hausdorff distance between the zero level curve and ``D ∩ {x2 = -1}``."""
    curve = level_curve(mesh, values, 0.0)
    if curve.empty:
        return math.inf
    pts = curve.points
    d1 = float(np.abs(pts[:, 1] + 1.0).max())
    lo, hi = dom.vertices[:, 0].min(), dom.vertices[:, 0].max()
    xs = np.linspace(lo, hi, samples)
    line = np.column_stack([xs, np.full_like(xs, -1.0)])
    st, _ = classify_points(dom, line)
    line = line[st >= 0]
    from scipy.spatial import cKDTree

    a, b = curve.segments()
    dense = np.vstack([a + f * (b - a) for f in np.linspace(0, 1, 5)])
    d2 = float(cKDTree(dense).query(line)[0].max()) if len(line) else 0.0
    return max(d1, d2)


def symmetry_suite(mesh: Mesh, values, dom: DomainSpec, tol=0.02):
    rs, ra = symmetry_residuals(mesh, values)
    hd = nodal_hausdorff(mesh, values, dom)
    h = mesh.h
    ok = rs <= tol and ra <= tol and hd <= 2 * h
    return SymmetryResult(rs, ra, hd), Check(
        "symmetry", "eigenfunction symmetric in x1 and antisymmetric about x2 = -1; nodal line on x2 = -1",
        PASS if ok else FAIL,
        {"sym_residual": rs, "antisym_residual": ra, "nodal_hausdorff": hd, "h": h},
        tolerance={"residual": tol, "hausdorff": 2 * h})


# ---------------------------------------------------------------------------
# monotonicity in the quarter domain


def gamma_level(mesh: Mesh, values):
    """Level a = sup of phi over the section x1 = 1, and its level curve."""
    a = section_max(mesh, values, 1.0)
    return a, level_curve(mesh, values, a)


def side_components(mesh: Mesh, dom: DomainSpec):
    """Mesh node sets of each run of side_s edges."""
    out = []
    for run in dom.tag_runs("side_s"):
        es = set(run)
        sel = [k for k, s in enumerate(mesh.boundary_source) if int(s) in es]
        out.append(np.unique(mesh.boundary_edges[sel].ravel()))
    return out


def gradient_window(mesh: Mesh, values, x_lo=0.25, x_hi=1.5):
    """Fraction of triangles in the strip whose gradient angle lies in [3pi/4, 5pi/4]."""
    g = gradient_field(mesh, values)
    c = mesh.nodes[mesh.triangles].mean(axis=1)
    sel = (c[:, 0] >= x_lo) & (c[:, 0] <= x_hi)
    ang = np.mod(np.arctan2(g[sel, 1], g[sel, 0]), 2 * np.pi)
    ok = (ang >= 0.75 * np.pi) & (ang <= 1.25 * np.pi)
    return float(ok.mean()), int(sel.sum())


def interpolation_tolerance(mesh: Mesh, values):
    """Per-triangle tolerance h_T^2 * |Hessian proxy| from recovered nodal gradients."""
    g = gradient_field(mesh, values)
    area = mesh.areas()
    n = mesh.n_nodes
    acc = np.zeros((n, 2))
    w = np.zeros(n)
    for i in range(3):
        np.add.at(acc, mesh.triangles[:, i], g * area[:, None])
        np.add.at(w, mesh.triangles[:, i], area)
    ng = acc / w[:, None]
    hx = gradient_field(mesh, ng[:, 0])
    hy = gradient_field(mesh, ng[:, 1])
    hess = np.sqrt((hx ** 2).sum(1) + (hy ** 2).sum(1))
    hT = mesh.edge_lengths().max(axis=1)
    return hT ** 2 * hess


def admissible_pairs(dom: DomainSpec, n_pairs, seed, max_len=0.5):
    """Rejection-sampled pairs (x, y) whose mirror misses the left edge segment.

    Kind 1: x1 <= 2 and y - x within pi/4 of the +x1 direction.  Kind 2:
    x1 >= 2 and y - x at an angle in [-3pi/4, -pi/4] from the radius out of
    the arc centre (2, -1).
    """
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    lo = dom.vertices.min(0)
    hi = dom.vertices.max(0)
    eps = dom.epsilon
    xs, ys, kinds = [], [], []
    total = 0
    while total < n_pairs:
        m = 4 * n_pairs
        x = lo + (hi - lo) * rng.random((m, 2))
        ang = rng.uniform(-np.pi, np.pi, m)
        r = max_len * rng.random(m)
        y = x + r[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
        sx, _ = classify_points(dom, x)
        sy, _ = classify_points(dom, y)
        ok = (sx >= 0) & (sy >= 0) & (r > 0)
        d = y - x
        c1 = (np.abs(np.arctan2(d[:, 1], d[:, 0])) <= np.pi / 4) & (x[:, 0] <= 2.0)
        rad = x - np.array([2.0, -1.0])
        rel = np.arctan2(rad[:, 0] * d[:, 1] - rad[:, 1] * d[:, 0], (rad * d).sum(1))
        c2 = (rel >= -0.75 * np.pi) & (rel <= -0.25 * np.pi) & (x[:, 0] >= 2.0)
        mid = 0.5 * (x + y)
        mdir = np.column_stack([-d[:, 1], d[:, 0]])
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -mid[:, 0] / mdir[:, 0]
            y_at0 = mid[:, 1] + t * mdir[:, 1]
        hits_left = np.isfinite(y_at0) & (np.abs(y_at0) <= eps)
        keep = ok & (c1 | c2) & ~hits_left
        idx = np.nonzero(keep)[0][: n_pairs - total]
        xs.append(x[idx])
        ys.append(y[idx])
        kinds.append(np.where(c1[idx], 1, 2))
        total += idx.size
    return np.vstack(xs), np.vstack(ys), np.concatenate(kinds)


def monotonicity_suite(mesh: Mesh, values, dom: DomainSpec, n_pairs=10_000, seed=0, max_violation=0.01):
    """Pair comparisons, the level-curve bracket, boundary rank monotonicity and
    the gradient-angle window for the positive first mixed eigenfunction."""
    eps = dom.epsilon
    h = mesh.h
    v = np.asarray(values, float)
    checks = []
    # (a) pairs
    x, y, kinds = admissible_pairs(dom, n_pairs, seed)
    loc = mesh.locator
    fx = loc.interpolate(v, x)
    fy = loc.interpolate(v, y)
    tol_t = interpolation_tolerance(mesh, v)
    tx, _ = loc.locate(x)
    ty, _ = loc.locate(y)
    tol = np.where(tx >= 0, tol_t[np.maximum(tx, 0)], 0.0) + np.where(ty >= 0, tol_t[np.maximum(ty, 0)], 0.0)
    ok = np.isfinite(fx) & np.isfinite(fy)
    viol = ok & (fx < fy - tol)
    rate = wilson(int(viol.sum()), int(ok.sum()))
    checks.append(Check("pair_comparison", "phi(x) >= phi(y) for mirror-admissible pairs",
                        PASS if rate.value <= max_violation else FAIL,
                        {"violations": int(viol.sum()), "pairs": int(ok.sum()),
                         "pairs_condition_i": int((kinds == 1).sum()), "pairs_condition_ii": int((kinds == 2).sum())},
                        ci=rate.as_dict(), tolerance={"max_rate": max_violation}))
    # (b) bracket
    a, curve = gamma_level(mesh, v)
    lo_b, hi_b = 1 - 2 * eps - h, 1 + h
    ok_b = (not curve.empty) and curve.r_min >= lo_b and curve.r_max <= hi_b
    checks.append(Check("gamma_bracket", "level curve through the section max stays between 1 - 2 eps and 1",
                        PASS if ok_b else FAIL, {"a": a, "r_min": curve.r_min, "r_max": curve.r_max},
                        tolerance={"r_min_ge": lo_b, "r_max_le": hi_b}))
    # (c) rank monotonicity along side_s
    geo = GeodesicField(dom)
    rhos = []
    for comp in side_components(mesh, dom):
        rhos.append(spearman(geo(mesh.nodes[comp]), v[comp]))
    ok_c = bool(rhos) and min(rhos) >= 0.99
    checks.append(Check("boundary_monotonicity", "phi increases with intrinsic distance to the Dirichlet segment along the sides",
                        PASS if ok_c else FAIL, {"spearman": rhos}, tolerance={"min_spearman": 0.99}))
    # (d) gradient window
    frac, nt = gradient_window(mesh, v)
    checks.append(Check("gradient_window", "gradient angle within [3pi/4, 5pi/4] for 1/4 <= x1 <= 3/2",
                        PASS if frac >= 0.98 else FAIL, {"fraction": frac, "triangles": nt},
                        tolerance={"min_fraction": 0.98}))
    return checks, curve


# ---------------------------------------------------------------------------
# coupling probabilities


class CouplingStudyRow(NamedTuple):
    epsilon: float
    n_runs: int
    p_bad: Estimate
    p_good: Estimate
    p_g0: Estimate
    p_chain: Estimate
    violations: Estimate
    censored: int
    tail: list  # (t, Estimate) pairs
    records: list


def gamma_for(params: DomainParams, h):
    """Quarter domain, mesh, first mixed eigenpair, level a and its tube for ``params``."""
    dom = build_quarter(params)
    pair, mesh = first_mixed(dom, h)
    a, curve = gamma_level(mesh, pair.vector)
    return dom, mesh, pair, a, curve, GammaTube.from_curve(mesh, pair.vector, curve)


def _staged_chunk(args):
    params, h, c_star, dt, seed, max_time, offset, count = args
    dom, mesh, pair, a, curve, gam = gamma_for(params, h)
    cfg = SimConfig(dt=dt, rng_seed=seed, max_time=max_time)
    return staged_runs(dom, gam, StageSchedule.build(params.epsilon, c_star), cfg, count, run_offset=offset)


def pmap(fn, items, jobs=1):
    """Ordered map, in worker processes when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def coupling_row(params: DomainParams, h, c_star, n_runs, dt, seed, max_time, t_grid=(), setup=None, jobs=1):
    """Staged runs for one epsilon summarized as Wilson estimates.

    Run ``i`` always uses noise path id ``i``, so splitting the runs over
    ``jobs`` worker processes does not change any record.
    """
    if jobs > 1:
        bounds = np.linspace(0, n_runs, jobs + 1).astype(int)
        chunks = pmap(_staged_chunk, [(params, h, c_star, dt, seed, max_time, int(lo), int(hi - lo))
                                      for lo, hi in zip(bounds, bounds[1:]) if hi > lo], jobs)
        recs = [r for c in chunks for r in c]
    else:
        dom, mesh, pair, a, curve, gam = setup if setup is not None else gamma_for(params, h)
        cfg = SimConfig(dt=dt, rng_seed=seed, max_time=max_time)
        recs = staged_runs(dom, gam, StageSchedule.build(params.epsilon, c_star), cfg, n_runs)
    return summarize_records(params.epsilon, recs, t_grid)


def summarize_records(epsilon, recs, t_grid=()):
    n_runs = len(recs)
    tx = np.array([r.T_X_Gamma for r in recs])
    ty = np.array([r.T_Y_Gamma for r in recs])
    xa = np.array([r.X_at_TY for r in recs]).reshape(-1, 2)
    bad = tx < ty
    good = (ty < tx) & (xa[:, 0] <= 0.5)
    chain = np.array([r.G0 and r.F_star and r.G1 and r.G2 and r.G3 for r in recs], dtype=bool)
    cens = int((~np.isfinite(tx) & ~np.isfinite(ty)).sum())
    tail = [(float(t), wilson(int((bad & (tx >= t)).sum()), n_runs)) for t in t_grid]
    return CouplingStudyRow(float(epsilon), n_runs, wilson(int(bad.sum()), n_runs), wilson(int(good.sum()), n_runs),
                            wilson(int(sum(r.G0 for r in recs)), n_runs), wilson(int(chain.sum()), n_runs),
                            wilson(int(sum(r.k_violation for r in recs)), n_runs), cens, tail, recs)


def coupling_probability_study(epsilons, epsilon0=0.01, h=0.02, c_star=0.05, n_runs=10_000, dt=1e-5, seed=0,
                               max_time=20.0, t_grid=(), jobs=1):
    """Staged-coupling estimates for each epsilon (processed in descending order)."""
    rows = [coupling_row(DomainParams(e, epsilon0), h, c_star, n_runs, dt, seed, max_time, t_grid, jobs=jobs)
            for e in sorted(epsilons, reverse=True)]
    return rows, coupling_checks(rows)


def coupling_checks(rows):
    rows = sorted(rows, key=lambda r: -r.epsilon)
    checks = []
    for r in rows:
        if r.censored == r.n_runs:
            checks.append(Check(f"coupling_censored_{r.epsilon:g}", "all runs censored before either particle reached the level curve",
                                INCONCLUSIVE, {"censored": r.censored, "n_runs": r.n_runs}))
    rows = [r for r in rows if r.censored < r.n_runs]
    for big, small in zip(rows, rows[1:]):
        ok = small.p_bad.lo <= big.p_bad.hi
        checks.append(Check(f"p_bad_order_{small.epsilon:g}_vs_{big.epsilon:g}",
                            "probability that X reaches the level curve first decays as eps decreases",
                            PASS if ok else FAIL,
                            {"p_bad_small_eps": small.p_bad.value, "p_bad_large_eps": big.p_bad.value},
                            ci={"small_eps": small.p_bad.as_dict(), "large_eps": big.p_bad.as_dict()},
                            tolerance={"rule": "lo(small eps) <= hi(large eps)"}))
    for r in rows:
        checks.append(Check(f"p_good_positive_{r.epsilon:g}",
                            "Y reaches the level curve first while X is still in x1 <= 1/2 with positive probability",
                            PASS if r.p_good.value > 0 else FAIL, {"count": int(round(r.p_good.value * r.n_runs))},
                            ci=r.p_good.as_dict()))
        checks.append(Check(f"confinement_{r.epsilon:g}", "mirror meets the left edge at or above the origin before the level curve is hit",
                            PASS if r.violations.value < 0.01 else FAIL,
                            {"violations": int(round(r.violations.value * r.n_runs))}, ci=r.violations.as_dict(),
                            tolerance={"max_rate": 0.01}))
        checks.append(Check(f"g0_positive_{r.epsilon:g}", "the synchronous start event has positive probability",
                            PASS if r.p_g0.value > 0 else INCONCLUSIVE, {"count": int(round(r.p_g0.value * r.n_runs))},
                            ci=r.p_g0.as_dict()))
        clipped = bool(r.records and r.records[0].clipped)
        checks.append(Check(f"full_chain_{r.epsilon:g}", "all staged events occur together with positive probability",
                            REPORT, {"count": int(round(r.p_chain.value * r.n_runs)), "regions_clipped": clipped},
                            ci=r.p_chain.as_dict()))
        checks.append(Check(f"tail_{r.epsilon:g}", "tail of the bad-order hitting time",
                            REPORT, {"tail": [[t, e.value] for t, e in r.tail], "censored": r.censored}))
    return checks


# ---------------------------------------------------------------------------
# representation check


def martingale_check(dom: DomainSpec, mesh: Mesh, pair, x, t, n_paths, dt, seed, k_ci=3.0):
    """Compare E[phi(X_{t^T}) exp(r (t^T))] with phi(x); T is the Dirichlet hitting
    time and r = RATE_FACTOR * lam is the decay rate of phi under the simulated motion."""
    lam = RATE_FACTOR * pair.value
    v = pair.vector
    cfg = SimConfig(dt=dt, rng_seed=seed, max_time=t)
    n_steps = int(round(t / dt))
    b = run_batch(dom, np.tile(np.asarray(x, float), (n_paths, 1)), cfg, n_steps=n_steps,
                  absorb_tags=("dirichlet_d",))
    T = np.where(b.hit_step >= 0, b.hit_step * dt, n_steps * dt)
    phi_end = np.where(b.hit_step >= 0, 0.0, mesh.locator.interpolate(v, b.positions()))
    phi_end = np.nan_to_num(phi_end, nan=0.0)
    samples = phi_end * np.exp(lam * T)
    est = mean_ci(samples)
    target = float(mesh.locator.interpolate(v, np.asarray(x, float)[None])[0])
    ok = abs(est.value - target) <= k_ci * est.half_width
    return est, target, Check("martingale", "phi(x) = E[phi(X_S) exp(lam S)] for S = t ^ Dirichlet hitting time",
                               PASS if ok else FAIL, {"estimate": est.value, "phi_x": target, "t": t, "dt": dt},
                               ci=est.as_dict(), tolerance={"ci_half_widths": k_ci})


def representation_sign(records, mesh: Mesh, pair, level):
    """Difference of E[phi(X_S) e^{r S}] and E[phi(Y_S) e^{r S}] with S the first
    level-curve hit and r = RATE_FACTOR * lam."""
    lam = RATE_FACTOR * pair.value
    v = pair.vector
    vals = []
    for r in records:
        S = min(r.T_X_Gamma, r.T_Y_Gamma)
        if not math.isfinite(S):
            continue
        if r.T_X_Gamma < r.T_Y_Gamma:
            px = level
            py = float(mesh.locator.interpolate(v, np.asarray(r.Y_at_TX, float)[None])[0])
        elif r.T_Y_Gamma < r.T_X_Gamma:
            py = level
            px = float(mesh.locator.interpolate(v, np.asarray(r.X_at_TY, float)[None])[0])
        else:
            px = py = level
        if math.isnan(px) or math.isnan(py):
            continue
        vals.append((px - py) * math.exp(lam * S))
    est = mean_ci(np.array(vals)) if len(vals) > 1 else Estimate(float("nan"), -math.inf, math.inf, len(vals))
    fem = float(mesh.locator.interpolate(v, np.array([[0.0, 0.0]]))[0] - mesh.locator.interpolate(
        v, np.array([[0.0, level_point_eps(mesh)]]))[0])
    if est.lo > 0:
        verdict = PASS
    elif est.hi < 0:
        verdict = FAIL
    else:
        verdict = INCONCLUSIVE
    return Check("representation_sign", "phi(0,0) > phi(0,eps) through the coupled representation",
                 verdict, {"mc_difference": est.value, "fem_difference": fem, "runs_used": len(vals)},
                 ci=est.as_dict())


def level_point_eps(mesh: Mesh):
    """Top-left corner height of the quarter mesh (the point (0, eps))."""
    left = mesh.nodes[np.abs(mesh.nodes[:, 0]) <= 1e-12]
    return float(left[:, 1].max())


# ---------------------------------------------------------------------------
# decay-rate cross checks


def survival_decay(dom: DomainSpec, start, t_grid, n_paths, dt, seed):
    """Slope of log P(T > t) against t for the mixed problem (compare with -RATE_FACTOR * mu)."""
    cfg = SimConfig(dt=dt, rng_seed=seed)
    curve = survival_curve(dom, [start], t_grid, n_paths, cfg)
    p = [e.value for e in curve.estimates[0]]
    return log_slope(t_grid, p), curve


def heat_decay(dom: DomainSpec, start, t_grid, n_paths, dt, seed):
    """Slope of log |P(X_t in D_-) - 1/2| against t (compare with -RATE_FACTOR * lambda_2)."""
    cfg = SimConfig(dt=dt, rng_seed=seed)
    est = heat_mass_curve(dom, start, t_grid, n_paths, cfg)
    dev = [abs(e.value - 0.5) for e in est]
    return log_slope(t_grid, dev), est


# ---------------------------------------------------------------------------
# verdict


class VerdictRow(NamedTuple):
    h: float
    lambda2: float
    gap: float
    margin_max: float
    margin_min: float
    max_point: tuple
    min_point: tuple
    n_nodes: int


VIOLATION = "VIOLATION CONFIRMED"
HOLDS = "HOT SPOTS HOLDS"
REPORT_ONLY = "REPORT-ONLY"


def hotspots_verdict(domain: DomainSpec, hs, roundoff=1e-12):
    """Margins sup_D phi - sup_bd phi and inf_bd phi - inf_D phi per mesh size,
    Richardson error bars between consecutive sizes, and a verdict."""
    hs = sorted((float(h) for h in hs), reverse=True)
    if len(hs) < 2:
        raise ValueError("need at least two mesh sizes")
    rows = []
    for h in hs:
        sn = second_neumann(domain, h)
        rep = extrema_report(sn.mesh, sn.pair.vector)
        rows.append(VerdictRow(h, sn.value, sn.gap, rep.margin_max, rep.margin_min,
                               tuple(sn.mesh.nodes[rep.max_node].tolist()), tuple(sn.mesh.nodes[rep.min_node].tolist()),
                               sn.mesh.n_nodes))
    bars = []
    for c, f in zip(rows, rows[1:]):
        ratio = (c.h / f.h) ** 2 - 1.0
        bars.append({"h_coarse": c.h, "h_fine": f.h, "max": abs(f.margin_max - c.margin_max) / ratio,
                     "min": abs(f.margin_min - c.margin_min) / ratio})
    scale = max(abs(r.margin_max) + abs(r.margin_min) for r in rows) + 1.0
    pos = [r.margin_max > roundoff * scale and r.margin_min > roundoff * scale for r in rows]
    zero = [r.margin_max <= roundoff * scale and r.margin_min <= roundoff * scale for r in rows]
    if all(pos):
        verdict = VIOLATION
    elif all(zero):
        verdict = HOLDS
    else:
        verdict = REPORT_ONLY
    return rows, bars, verdict


def verdict_checks(rows, bars, verdict, centers=((0.0, 0.0), (0.0, -2.0))):
    stable = verdict in (VIOLATION, HOLDS)
    checks = [Check("hotspots_margins", "second Neumann eigenfunction has interior extrema strictly beyond boundary values",
                    PASS if stable else FAIL,
                    {"verdict": verdict, "rows": [r._asdict() for r in rows], "richardson": bars},
                    tolerance={"rule": "margins sign-stable across refinements"})]
    if verdict == VIOLATION:
        ok = True
        dists = []
        for r in rows:
            dmax = math.dist(r.max_point, centers[0])
            dmin = math.dist(r.min_point, centers[1])
            dists.append({"h": r.h, "max_dist": dmax, "min_dist": dmin})
            ok &= dmax <= 2 * r.h and dmin <= 2 * r.h
        checks.append(Check("extrema_locations", "interior maximum near (0,0) and minimum near (0,-2)",
                            PASS if ok else FAIL, {"distances": dists}, tolerance={"max_dist": "2h"}))
    return checks


def decay_checks(params: DomainParams, h, t_grid, n_paths, dt, seed):
    """Monte Carlo decay rates against FEM eigenvalues on the quarter and full domains."""
    q = build_quarter(params)
    mu_pair, _ = first_mixed(q, h)
    slope, curve = survival_decay(q, (0.0, 0.0), t_grid, n_paths, dt, seed)
    target = -RATE_FACTOR * mu_pair.value
    rel = abs(slope / target - 1.0)
    checks = [Check("survival_decay", "survival of the mixed-problem motion decays at the first mixed eigenvalue rate",
                    PASS if rel <= 0.10 else FAIL,
                    {"slope": slope, "fem_mu": mu_pair.value, "expected_slope": target, "relative_error": rel,
                     "epsilon": params.epsilon, "epsilon0": params.epsilon0, "dt": dt},
                    tolerance={"relative": 0.10})]
    full = build_domain(params)
    sn = second_neumann(full, h)
    hslope, hest = heat_decay(full, (0.0, 0.0), t_grid, n_paths, dt, seed + 1)
    htarget = -RATE_FACTOR * sn.value
    hrel = abs(hslope / htarget - 1.0)
    checks.append(Check("heat_split_decay", "mass split between the two halves relaxes to 1/2 at the second Neumann eigenvalue rate",
                        PASS if hrel <= 0.15 else FAIL,
                        {"slope": hslope, "fem_lambda2": sn.value, "expected_slope": htarget, "relative_error": hrel,
                         "mass_below": [e.value for e in hest]},
                        tolerance={"relative": 0.15}))
    return checks, curve


# ---------------------------------------------------------------------------
# full study


def _csv(header, rows):
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def coupling_summary_csv(rows):
    out = []
    for r in rows:
        for name, e in (("p_bad", r.p_bad), ("p_good", r.p_good), ("p_g0", r.p_g0), ("p_chain", r.p_chain),
                        ("violations", r.violations)):
            out.append((r.epsilon, name, e.value, e.lo, e.hi, r.n_runs, r.censored))
        for t, e in r.tail:
            out.append((r.epsilon, f"tail_{t:g}", e.value, e.lo, e.hi, r.n_runs, r.censored))
    return _csv(["epsilon", "quantity", "p", "lo", "hi", "n_runs", "censored"], out)


def run_study(config: StudyConfig, jobs=1, log=None):
    """Run every check of the suite; returns the report and ``{filename: text}`` outputs."""
    from . import svg
    from .coupling import records_csv

    say = log or (lambda msg: None)
    report = StudyReport(provenance={"config_hash": config.content_hash(), "version": __version__,
                                     "config": config.to_dict()})
    files = {}
    p = config.primary
    h0 = config.hs[0]

    say("eigenvalue trend")
    rows, check = lambda_trend_study(p.epsilon, sorted(config.epsilon0s, reverse=True), h0)
    report.add(check)
    files["lambda_trend.csv"] = _csv(["epsilon0", "ratio", "lambda2", "gap"],
                                     [(r["epsilon0"], r["ratio"], r.get("lambda2", math.nan), r.get("gap", math.nan))
                                      for r in rows])

    say("verdict")
    full = build_domain(p)
    vrows, bars, verdict = hotspots_verdict(full, config.hs)
    report.extend(verdict_checks(vrows, bars, verdict))
    files["verdict.csv"] = _csv(list(VerdictRow._fields),
                                [tuple(r)[:5] + (str(r.max_point), str(r.min_point), r.n_nodes) for r in vrows])

    say("symmetry")
    sn = second_neumann(full, h0)
    _, check = symmetry_suite(sn.mesh, sn.pair.vector, full)
    report.add(check)
    rep = extrema_report(sn.mesh, sn.pair.vector)
    nodal = level_curve(sn.mesh, sn.pair.vector, 0.0)

    say("monotonicity")
    dom, mesh, pair, a, curve, gam = gamma_for(p, h0)
    checks, _ = monotonicity_suite(mesh, pair.vector, dom, config.pair_samples, config.seed)
    report.extend(checks)

    say("representation")
    _, _, check = martingale_check(dom, mesh, pair, config.martingale_point, config.martingale_time,
                                   config.n_paths, config.martingale_dt, config.seed)
    report.add(check)

    say("coupling")
    crow = []
    for e in sorted(config.epsilons, reverse=True):
        params = DomainParams(e, config.epsilon0s[0])
        setup = (dom, mesh, pair, a, curve, gam) if params == p and jobs <= 1 else None
        row = coupling_row(params, h0, config.c_star, config.n_paths, config.dt, config.seed, config.max_time,
                           config.t_grid, setup=setup, jobs=jobs)
        crow.append(row)
        files[f"coupling_eps{e:g}.csv"] = records_csv(row.records)
        if params == p:
            report.add(representation_sign(row.records, mesh, pair, a))
    report.extend(coupling_checks(crow))
    files["coupling_summary.csv"] = coupling_summary_csv(crow)

    say("decay cross-checks")
    dp = DomainParams(*config.decay_params)
    checks, surv = decay_checks(dp, h0, config.decay_t_grid, config.n_paths, config.decay_dt, config.seed)
    report.extend(checks)
    files["survival.csv"] = surv.to_csv()

    files["domain.svg"] = svg.domain_svg(full, [(nodal, "#d62728")], {
        "max": tuple(sn.mesh.nodes[rep.max_node]), "min": tuple(sn.mesh.nodes[rep.min_node])})
    files["quarter.svg"] = svg.domain_svg(dom, [(curve, "#9467bd")], {"X0": (0.0, 0.0), "Y0": (0.0, p.epsilon)})
    files["survival.svg"] = svg.line_plot_svg(
        {"P(T>t)": (surv.t, [e.value for e in surv.estimates[0]])}, "t", "P(T>t)", logy=True,
        title="survival, mixed problem")
    eps = [r.epsilon for r in crow]
    files["probability.svg"] = svg.line_plot_svg(
        {"p_bad": (eps, [r.p_bad.value for r in crow]), "p_good": (eps, [r.p_good.value for r in crow])},
        "epsilon", "probability", title="coupling probabilities")
    files["report.json"] = report.to_json()
    return report, files
