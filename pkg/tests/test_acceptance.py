"""Acceptance criteria 1-9 at their stated sizes and tolerances.

Each test records one PASS/FAIL line, printed at the end of the session by
the terminal-summary hook in ``conftest.py``.  The whole module takes about
ten minutes on one core.
"""
import math

import numpy as np
import pytest

from hotspots import coupling as cp
from hotspots import experiments as ex
from hotspots import geometry as g
from hotspots import kernels
from hotspots import mesh as msh
from hotspots import rbm
from hotspots import spectral as sp
from hotspots import stats
from hotspots.geometry import DomainParams
from hotspots.rbm import SimConfig
from oracles import DISK_LAMBDA2, RECTANGLE_LAMBDA2

pytestmark = pytest.mark.acceptance

RESULTS = {}
HALF = g.half_plane_box()


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def test_1_analytic_eigenvalues():
    rect = sp.eigenpairs(msh.triangulate(g.rectangle(0, 0, 2, 1), 0.05), "neumann_full", k=3)[1].value
    disk = sp.eigenpairs(msh.triangulate(g.regular_polygon(256, 1.0), 0.06), "neumann_full", k=3)[1].value
    e_rect = abs(rect / RECTANGLE_LAMBDA2 - 1)
    e_disk = abs(disk / DISK_LAMBDA2 - 1)
    ok = e_rect <= 0.01 and e_disk <= 0.015
    assert record(1, ok, f"rectangle rel err {e_rect:.2e} (<= 1e-2), 256-gon rel err {e_disk:.2e} (<= 1.5e-2)")


def test_2_symmetry_structure(full, neumann):
    res, check = ex.symmetry_suite(neumann.mesh, neumann.pair.vector, full, tol=0.02)
    ok = res.sym_residual <= 0.02 and res.antisym_residual <= 0.02 and res.nodal_hausdorff <= 2 * 0.02
    assert record(2, ok and check.verdict == ex.PASS,
                  f"sym {res.sym_residual:.2e}, antisym {res.antisym_residual:.2e} (<= 0.02), "
                  f"nodal Hausdorff {res.nodal_hausdorff:.2e} (<= {2 * 0.02})")


def test_3_level_curve_geometry(quarter, quarter_mesh, mixed):
    checks, _ = ex.monotonicity_suite(quarter_mesh, mixed.vector, quarter, n_pairs=10_000, seed=0)
    by = {c.name: c for c in checks}
    need = ("gamma_bracket", "boundary_monotonicity", "gradient_window")
    ok = all(by[k].verdict == ex.PASS for k in need)
    b, s, w = (by[k].values for k in need)
    assert record(3, ok, f"r_min {b['r_min']:.4f} r_max {b['r_max']:.4f}, min spearman {min(s['spearman']):.4f}, "
                         f"gradient window {w['fraction']:.4f}; pair check {by['pair_comparison'].verdict}")


def test_4_hotspots_margins(full):
    rows, bars, verdict = ex.hotspots_verdict(full, [0.02, 0.01])
    checks = ex.verdict_checks(rows, bars, verdict)
    ok = verdict in (ex.VIOLATION, ex.HOLDS) and all(c.verdict == ex.PASS for c in checks)
    if verdict == ex.VIOLATION:
        ok &= len(checks) == 2
    m = ", ".join(f"h={r.h}: max {r.margin_max:.3e} min {r.margin_min:.3e}" for r in rows)
    assert record(4, ok, f"{verdict}; {m}; richardson {bars[0]['max']:.1e}/{bars[0]['min']:.1e}")


def test_5_rbm_correctness():
    # half-plane marginal against the reflected normal law
    x0, t, n = 0.1, 1.0, 10_000
    b = rbm.run_batch(HALF, np.tile([0.0, x0], (n, 1)), SimConfig(dt=1e-4, rng_seed=101, max_time=t))
    _, p_ks = stats.ks_1samp(b.y, lambda y: stats.reflected_normal_cdf(y, x0, t))
    # disk exit time from the centre of the unit disk
    hs = rbm.hitting_time(g.rectangle(-2, -2, 2, 2), (0, 0), lambda x, y: x * x + y * y >= 1.0,
                          SimConfig(dt=1e-5, rng_seed=102, max_time=20.0), n_paths=10_000)
    se = stats.std_error(hs.times)
    z_disk = abs(hs.mean() - 0.5) / se
    # survival decay of the mixed problem against the FEM eigenvalue
    cfg = ex.StudyConfig()
    q = g.build_quarter(DomainParams(*cfg.decay_params))
    mu, _ = sp.first_mixed(q, 0.02)
    slope, _ = ex.survival_decay(q, (0.0, 0.0), cfg.decay_t_grid, 10_000, cfg.decay_dt, 103)
    rel = abs(slope / (-rbm.RATE_FACTOR * mu.value) - 1)
    ok = p_ks > 0.01 and z_disk <= 3 and not hs.censored.any() and rel <= 0.10
    assert record(5, ok, f"half-plane KS p={p_ks:.3f} (> 0.01); disk mean {hs.mean():.4f} vs 0.5 "
                         f"({z_disk:.2f} SE, <= 3); survival slope {slope:.5f} vs "
                         f"{-rbm.RATE_FACTOR * mu.value:.5f} (rel {rel:.3f} <= 0.10)")


def _mirror_isometry_error(n=10_000, seed=7):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, 2))
    y = rng.uniform(-1, 1, (n, 2))
    dw = 0.01 * rng.standard_normal((n, 2))
    box = g.rectangle(-5, -5, 5, 5)
    out = kernels.mirror_step(x[:, 0].copy(), x[:, 1].copy(), y[:, 0].copy(), y[:, 1].copy(),
                              dw[:, 0].copy(), dw[:, 1].copy(), np.zeros(n, bool), box.index, 1e-9)
    nx = np.column_stack(out[:2])
    ny = np.column_stack(out[2:4])
    keep = ~out[4]
    ix = np.linalg.norm(nx - x, axis=1)
    iy = np.linalg.norm(ny - y, axis=1)
    # increments are recovered from positions, so rounding is relative to the coordinate size
    scale = np.maximum(1.0, np.maximum(np.abs(x).max(1), np.abs(y).max(1)))
    inc = (np.abs(iy - ix) / scale)[keep]
    # the new Y is the reflection of the new X in the old mirror
    m = 0.5 * (x + y)
    u = (y - x) / np.linalg.norm(y - x, axis=1)[:, None]
    r = nx - m
    refl = m + r - 2 * (r * u).sum(1)[:, None] * u
    sep = np.linalg.norm(y - x, axis=1)
    mir = (np.linalg.norm(ny - refl, axis=1) / sep)[keep]
    return float(inc.max()), float(mir.max())


def _sync_exact(n=10_000, seed=8):
    # dyadic coordinates and increments make every sum exact in binary floating point
    rng = np.random.default_rng(seed)
    x = rng.integers(-128, 128, (n, 2)) / 64.0
    y = rng.integers(-128, 128, (n, 2)) / 64.0
    dw = rng.integers(-64, 64, (n, 2)) / 1024.0
    box = g.rectangle(-5, -5, 5, 5)
    out = cp.sync_steps(box, x[:, 0], x[:, 1], y[:, 0], y[:, 1], dw[:, 0], dw[:, 1])
    d0 = x - y
    d1 = np.column_stack([out[0] - out[2], out[1] - out[3]])
    return bool((d0 == d1).all())


def _hinge_drift(n_paths=1000, n_steps=4000, seed=9):
    xx, xy, yx, yy = (np.full(n_paths, v) for v in (-0.3, 0.05, 0.4, 0.3))
    co = np.zeros(n_paths, bool)
    sq = math.sqrt(1e-4)
    prev = None
    worst, episodes = 0.0, 0
    for k in range(n_steps):
        z = kernels.normals4(seed, np.arange(n_paths), k, 0)
        xx, xy, yx, yy, co, px, py, *_ = kernels.mirror_step(xx, xy, yx, yy, sq * z[:, 0], sq * z[:, 1], co,
                                                             HALF.index, 1e-9)
        vx, vy = yx - xx, yy - xy
        with np.errstate(divide="ignore", invalid="ignore"):
            h = 0.5 * (xx + yx) + 0.5 * (xy + yy) * vy / vx
        single = ((px > 0) != (py > 0)) & ~co
        if prev is not None:
            sel = single & np.isfinite(h) & np.isfinite(prev)
            episodes += int(sel.sum())
            if sel.any():
                worst = max(worst, float(np.abs(h - prev)[sel].max()))
        prev = h
    return worst, episodes


def test_6_coupling_invariants():
    inc, mir = _mirror_isometry_error()
    exact = _sync_exact()
    r0, tx, ty, T, n, dt = 1.0, math.pi / 3, 2 * math.pi / 3, 0.5, 10_000, 1e-4
    sk = cp.mirror_halfplane_skew(r0, tx, ty, T, dt, seed=11, n_paths=n, keep_path=False)
    cx, cy, _ = cp.run_mirror_pairs(HALF, (r0 * math.cos(tx), r0 * math.sin(tx)),
                                    (r0 * math.cos(ty), r0 * math.sin(ty)), SimConfig(dt=dt, rng_seed=12), n,
                                    round(T / dt), 1e-9)
    pks = [stats.ks_2samp(a, b)[1] for a, b in ((sk.x()[:, 0], cx[:, 0]), (sk.x()[:, 1], cx[:, 1]),
                                                (sk.y()[:, 0], cy[:, 0]), (sk.y()[:, 1], cy[:, 1]))]
    drift, episodes = _hinge_drift()
    ok = inc <= 1e-12 and mir <= 1e-12 and exact and min(pks) > 0.01 and drift < 10 * HALF.tol_geom \
        and episodes > 0
    assert record(6, ok, f"mirror increment mismatch {inc:.1e} (rel. to coordinates), reflection rel err {mir:.1e} (<= 1e-12); "
                         f"synchronous exact {exact}; skew vs Cartesian KS min p {min(pks):.3f} (> 0.01); "
                         f"hinge drift {drift:.1e} over {episodes} single-edge steps (< {10 * HALF.tol_geom:.0e})")


def test_7_staged_coupling_directions():
    rows, checks = ex.coupling_probability_study((0.15, 0.1), epsilon0=0.01, h=0.02, c_star=0.05, n_runs=10_000,
                                                 dt=1e-5, seed=0, max_time=20.0)
    by = {c.name: c.verdict for c in checks}
    need = ["p_bad_order_0.1_vs_0.15", "p_good_positive_0.15", "p_good_positive_0.1", "confinement_0.15",
            "confinement_0.1"]
    ok = all(by.get(k) == ex.PASS for k in need)
    detail = "; ".join(f"eps={r.epsilon}: p_bad {r.p_bad.value:.4f} [{r.p_bad.lo:.4f},{r.p_bad.hi:.4f}] "
                       f"p_good {r.p_good.value:.4f} viol {r.violations.value:.4f} G0 {r.p_g0.value:.4f}"
                       for r in rows)
    assert record(7, ok, detail)


def test_8_martingale_representation(quarter, quarter_mesh, mixed):
    est, target, check = ex.martingale_check(quarter, quarter_mesh, mixed, (0.5, 0.0), 0.05, 10_000, 1e-4, 0)
    ok = abs(est.value - target) <= 3 * est.half_width
    assert record(8, ok and check.verdict == ex.PASS,
                  f"estimate {est.value:.6f} vs phi(x) {target:.6f}, |diff| {abs(est.value - target):.2e} "
                  f"<= 3 x {est.half_width:.2e}")


def test_9_determinism():
    cfg = ex.StudyConfig(epsilons=(0.1,), epsilon0s=(0.01,), hs=(0.03, 0.025), n_paths=200, dt=1e-4,
                         pair_samples=500, decay_t_grid=(1.0, 2.0, 3.0), max_time=5.0, t_grid=(0.5, 1.0))
    _, a = ex.run_study(cfg)
    _, b = ex.run_study(cfg)
    same = a == b
    files = sorted(a)
    extra = msh.dumps(msh.mesh_domain(g.build_domain(), 0.03)) == msh.dumps(msh.mesh_domain(g.build_domain(), 0.03))
    assert record(9, same and extra, f"{len(files)} study outputs byte-identical: {same}; mesh file identical: {extra}")
