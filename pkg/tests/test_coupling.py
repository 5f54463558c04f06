import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hotspots import coupling as cp
from hotspots import geometry as g
from hotspots import kernels
from hotspots.coupling import MirrorState, StageSchedule
from hotspots.rbm import PathState, SimConfig
from hotspots.stats import ks_2samp

HALF = g.half_plane_box()
BOX = g.rectangle(-5, -5, 5, 5)

coord = st.floats(-1.0, 1.0)
small = st.floats(-0.05, 0.05)


def pair(x, y, regime=cp.MIRROR):
    return MirrorState(PathState(tuple(map(float, x))), PathState(tuple(map(float, y))), regime)


# -- synchronous coupling --------------------------------------------------------


@given(coord, coord, coord, coord, small, small)
def test_synchronous_difference_preserved_off_boundary(a, b, c, d, u, v):
    s = pair((a, b), (c, d), cp.SYNCHRONOUS)
    n = cp.synchronous_step(BOX, s, (u, v), 1e-4)
    np.testing.assert_allclose(n.x - n.y, s.x - s.y, atol=4e-16)
    assert n.x_state.local_time == 0.0 and n.y_state.local_time == 0.0


def test_synchronous_identical_start_stays_identical(quarter):
    s = pair((0.2, 0.0), (0.2, 0.0), cp.SYNCHRONOUS)
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = cp.synchronous_step(quarter, s, 0.01 * rng.standard_normal(2), 1e-4)
        assert (s.x == s.y).all()


def test_synchronous_push_changes_difference():
    s = pair((0.0, 1.0), (0.0, 0.05), cp.SYNCHRONOUS)
    n = cp.synchronous_step(HALF, s, (0.0, -0.1), 1e-4)
    push = n.y_state.local_time
    assert push == pytest.approx(0.05)
    assert (n.x - n.y)[1] == pytest.approx((s.x - s.y)[1] - push, abs=1e-15)


def test_batched_sync_steps_match_single():
    xx, xy, yx, yy = (np.array([v]) for v in (0.0, 1.0, 0.0, 0.05))
    out = cp.sync_steps(HALF, xx, xy, yx, yy, np.array([0.0]), np.array([-0.1]))
    assert out[3][0] == 0.0 and out[5][0] == pytest.approx(0.05)


# -- mirror coupling -------------------------------------------------------------


def test_bisector_example():
    p, d = cp.bisector((0, 1), (2, 1))
    np.testing.assert_allclose(p, (1, 1))
    assert abs(d[0]) == 0.0 and abs(d[1]) == 1.0
    with pytest.raises(ValueError):
        cp.bisector((1, 1), (1, 1))


def _reflect(p, m, d):
    r = p - m
    return m + 2 * (r @ d) * d - r


@given(coord, coord, coord, coord, small, small)
def test_mirror_step_off_boundary_reflects_increment(a, b, c, d, u, v):
    s = pair((a, b), (c, d))
    if np.linalg.norm(s.x - s.y) < 1e-3:
        return
    n = cp.mirror_step(BOX, s, (u, v), 1e-4, 1e-9)
    if n.coalesced:
        return
    m0, d0 = s.mirror
    # Y's increment is X's increment reflected, so Y stays X's mirror image
    assert np.linalg.norm(n.y - s.y) == pytest.approx(np.linalg.norm(n.x - s.x), rel=1e-9, abs=1e-15)
    np.testing.assert_allclose(n.y, _reflect(n.x, m0, d0), atol=1e-14)
    m1, d1 = n.mirror
    assert abs(d0[0] * d1[1] - d0[1] * d1[0]) <= 1e-12
    assert abs(d0[0] * (m1 - m0)[1] - d0[1] * (m1 - m0)[0]) <= 1e-14


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_mirror_increments_are_isometric_and_bisector_consistent(quarter, seed):
    rng = np.random.default_rng(seed)
    s = pair((0.2, 0.0), (0.25, 0.05))
    for _ in range(50):
        if s.coalesced:
            break
        dw = 0.005 * rng.standard_normal(2)
        n = cp.mirror_step(quarter, s, dw, 1e-4, 1e-6)
        if not n.coalesced and n.x_state.local_time == s.x_state.local_time \
                and n.y_state.local_time == s.y_state.local_time:
            # free step: Y's increment is X's reflected, so both move equally far
            assert np.linalg.norm(n.y - s.y) == pytest.approx(np.linalg.norm(n.x - s.x), rel=1e-9)
        if not n.coalesced:
            p, d = n.mirror
            assert abs(np.linalg.norm(n.x - p) - np.linalg.norm(n.y - p)) <= 10 * quarter.tol_geom
        s = n


def test_coalesced_pairs_move_together(quarter):
    s = pair((0.2, 0.0), (0.2, 0.0), cp.COALESCED)
    n = cp.mirror_step(quarter, s, (0.01, 0.0), 1e-4, 1e-6)
    assert n.coalesced and (n.x == n.y).all()
    near = cp.mirror_step(quarter, pair((0.2, 0.0), (0.2, 1e-7)), (0.0, 0.0), 1e-4, 1e-6)
    assert near.coalesced and (near.x == near.y).all()


def _half_plane_contacts(n_paths=200, n_steps=2000, seed=3):
    """Mirror pairs in the half-plane; per step and path: X, Y, push flags."""
    xx, xy, yx, yy = (np.full(n_paths, v) for v in (-0.3, 0.05, 0.4, 0.3))
    co = np.zeros(n_paths, bool)
    sq = math.sqrt(1e-4)
    rows = []
    for k in range(n_steps):
        z = kernels.normals4(seed, np.arange(n_paths), k, 0)
        xx, xy, yx, yy, co, px, py, *_ = kernels.mirror_step(xx, xy, yx, yy, sq * z[:, 0], sq * z[:, 1], co,
                                                             HALF.index, 1e-9)
        rows.append(np.column_stack([xx, xy, yx, yy, px > 0, py > 0, co]))
    return np.array(rows)


def _axis_hinge(r):
    # where the mirror meets the x1 axis
    v = r[..., 2:4] - r[..., :2]
    mx, my = 0.5 * (r[..., 0] + r[..., 2]), 0.5 * (r[..., 1] + r[..., 3])
    with np.errstate(divide="ignore", invalid="ignore"):
        return mx + my * v[..., 1] / v[..., 0]


def test_half_plane_contacts_equidistant_from_hinge():
    rows = _half_plane_contacts()
    r = rows.reshape(-1, rows.shape[-1])
    r = r[(r[:, 4] + r[:, 5] > 0) & (r[:, 6] == 0)]
    assert len(r) > 50
    h = np.column_stack([_axis_hinge(r), np.zeros(len(r))])
    dx = np.linalg.norm(r[:, :2] - h, axis=1)
    dy = np.linalg.norm(r[:, 2:4] - h, axis=1)
    np.testing.assert_allclose(dx, dy, rtol=1e-9)


def test_hinge_constant_during_single_particle_reflection():
    rows = _half_plane_contacts()
    h = _axis_hinge(rows)
    single = (rows[1:, :, 4] != rows[1:, :, 5]) & (rows[1:, :, 6] == 0)
    assert single.sum() > 50
    drift = np.abs(np.diff(h, axis=0))[single]
    assert drift.max() < 10 * HALF.tol_geom


def test_hinge_update_examples():
    # bottom edge is y = 0; mirror x1 = 0.3 is perpendicular to it
    s = pair((0.1, 0.0), (0.5, 0.0))
    hinge, sign = cp.hinge_update(HALF, s, 0, push_x=1.0, push_y=1.0)
    assert hinge == pytest.approx((0.3, 0.0))
    assert sign == 0
    s = pair((0.1, 0.0), (0.6, 0.5))
    hinge, sign = cp.hinge_update(HALF, s, 0)
    assert sign != 0
    h = np.array(hinge)
    assert np.linalg.norm(s.x - h) == pytest.approx(np.linalg.norm(s.y - h), rel=1e-12)
    # a reflection push on X alone keeps both particles equidistant from the hinge
    n = cp.mirror_step(HALF, s, (0.0, -0.01), 1e-4, 1e-9)
    assert n.x_state.local_time > 0 and n.y_state.local_time == 0
    assert np.linalg.norm(n.x - h) == pytest.approx(np.linalg.norm(n.y - h), rel=1e-12)
    hinge2, _ = cp.hinge_update(HALF, n, 0)
    assert hinge2 == pytest.approx(hinge, abs=1e-12)
    # mirror parallel to the edge line has no hinge
    assert cp.hinge_update(HALF, pair((0.0, 0.1), (0.0, 0.5)), 0)[0] is None


# -- wedge: simultaneous contact on two edge lines ---------------------------------


def _meet(m, d, u):
    """Parameter s with s * u on the line through m with direction d."""
    det = d[..., 0] * u[1] - d[..., 1] * u[0]
    return (d[..., 0] * m[..., 1] - d[..., 1] * m[..., 0]) / det


def _mirrors(x, y):
    v = y - x
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    return 0.5 * (x + y), np.stack([-v[..., 1], v[..., 0]], -1)


def _rotate(d, t):
    c, s = np.cos(t), np.sin(t)
    return np.stack([c * d[..., 0] - s * d[..., 1], s * d[..., 0] + c * d[..., 1]], -1)


def _predicted_direction(m, d, own, other, delta=1e-6):
    """Direction along ``own`` in which the mirror's meet moves when the mirror turns
    about its meet with ``other`` towards the normal of ``other``."""
    h = _meet(m, d, other)[..., None] * other
    turns = [_rotate(d, sg * delta) for sg in (1.0, -1.0)]
    steeper = np.abs(turns[0] @ other) < np.abs(turns[1] @ other)
    moved = np.where(steeper, _meet(h, turns[0], own), _meet(h, turns[1], own))
    return np.sign(moved - _meet(m, d, own))


def test_wedge_hinges_move_into_predicted_half_lines():
    alpha = 2 * math.pi / 3
    wedge = g.polygon([(0, 0), (3, 0), (3 * math.cos(alpha), 3 * math.sin(alpha))])
    k_x = np.array([1.0, 0.0])
    k_y = np.array([math.cos(alpha), math.sin(alpha)])
    rng = np.random.default_rng(0)
    n = 1000
    rx = rng.uniform(0.5, 1.5, n)
    ry = rx + rng.choice([-1.0, 1.0], n) * rng.uniform(0.2, 0.6, n)
    x0, y0 = rx[:, None] * k_x, ry[:, None] * k_y
    m, d = _mirrors(x0, y0)
    # the mirror is not perpendicular to either contact line
    assert (np.abs(d @ k_x) > 1e-3).all() and (np.abs(d @ k_y) > 1e-3).all()
    dir_x = _predicted_direction(m, d, k_x, k_y)
    dir_y = _predicted_direction(m, d, k_y, k_x)
    s_x0, s_y0 = _meet(m, d, k_x), _meet(m, d, k_y)
    xx, xy, yx, yy = x0[:, 0].copy(), x0[:, 1].copy(), y0[:, 0].copy(), y0[:, 1].copy()
    co = np.zeros(n, bool)
    dt = 1e-6
    worst = np.zeros(n)
    moved = np.zeros(n)
    for k in range(20):
        z = kernels.normals4(7, np.arange(n), k, 0) * math.sqrt(dt)
        xx, xy, yx, yy, co, *_ = kernels.mirror_step(xx, xy, yx, yy, z[:, 0], z[:, 1], co, wedge.index, 1e-9)
        m, d = _mirrors(np.column_stack([xx, xy]), np.column_stack([yx, yy]))
        ax = (_meet(m, d, k_x) - s_x0) * dir_x
        ay = (_meet(m, d, k_y) - s_y0) * dir_y
        worst = np.minimum(worst, np.minimum(ax, ay))
        moved = np.maximum(moved, np.maximum(ax, ay))
    assert not co.any()
    ok = worst >= -10 * wedge.tol_geom
    assert ok.mean() >= 0.99
    assert (moved > 1e-6).mean() > 0.5


# -- skew product ------------------------------------------------------------------


def test_skew_equal_angles_identical():
    p = cp.mirror_halfplane_skew(1.0, 0.7, 0.7, 0.1, 1e-3, seed=1, n_paths=20)
    np.testing.assert_array_equal(p.theta_x, p.theta_y)
    assert (p.tau_theta == 0).all()


def test_skew_rejects_bad_angles():
    with pytest.raises(ValueError):
        cp.mirror_halfplane_skew(1.0, 2.0, 1.0, 0.1, 1e-3, 0)
    with pytest.raises(ValueError):
        cp.mirror_halfplane_skew(0.0, 0.1, 1.0, 0.1, 1e-3, 0)


def test_skew_symmetric_angles_meet_near_half_pi():
    p = cp.mirror_halfplane_skew(1.0, 0.5, math.pi - 0.5, 2.0, 1e-3, seed=2, n_paths=2000)
    # mirrored angles stay symmetric about pi/2 until they meet
    live = p.t[:, None] < p.tau_theta[None, :]
    np.testing.assert_allclose((p.theta_x + p.theta_y)[live], math.pi, atol=1e-12)
    met = np.isfinite(p.tau_theta)
    assert met.mean() > 0.5
    k = np.rint(p.tau_theta[met] / 1e-3).astype(int)
    ang = p.theta_x[k, np.nonzero(met)[0]]
    assert abs(ang.mean() - math.pi / 2) < 0.01
    np.testing.assert_allclose(p.x()[:, 1], p.radius[-1] * np.sin(p.theta_x[-1]))


def test_skew_marginal_matches_cartesian_small():
    # dt = 1e-3 leaves a visible projection bias in the Cartesian scheme
    r0, th_x, th_y, T, n, dt = 1.0, math.pi / 3, 2 * math.pi / 3, 0.5, 2000, 1e-4
    sk = cp.mirror_halfplane_skew(r0, th_x, th_y, T, dt, seed=5, n_paths=n, keep_path=False)
    x0 = (r0 * math.cos(th_x), r0 * math.sin(th_x))
    y0 = (r0 * math.cos(th_y), r0 * math.sin(th_y))
    cx, cy, _ = cp.run_mirror_pairs(HALF, x0, y0, SimConfig(dt=dt, rng_seed=6), n, round(T / dt), 1e-9)
    for a, b in ((sk.x()[:, 0], cx[:, 0]), (sk.x()[:, 1], cx[:, 1]), (sk.y()[:, 0], cy[:, 0])):
        assert ks_2samp(a, b)[1] > 0.01


# -- coupling time ----------------------------------------------------------------------


def test_coupling_time_examples():
    tr = np.random.default_rng(0).standard_normal((10, 2))
    assert cp.coupling_time(tr, tr, 1e-9) == 0.0
    assert math.isinf(cp.coupling_time(tr, tr + [0.5, 0.0], 1e-9))
    t = np.arange(10) * 0.1
    shifted = tr.copy()
    shifted[:4] += 1.0
    assert cp.coupling_time(tr, shifted, 1e-9, t) == pytest.approx(0.4)


def test_mirror_pairs_in_box_couple():
    box = g.rectangle(0, 0, 1, 1)
    _, _, cstep = cp.run_mirror_pairs(box, (0.2, 0.5), (0.8, 0.5), SimConfig(dt=1e-4, rng_seed=9), 1000,
                                      30000, 1e-5)
    assert (cstep > 0).mean() > 0.99


# -- staged protocol -----------------------------------------------------------------------


def test_stage_schedule():
    s = StageSchedule.build(0.1, 0.05)
    assert s.j0 == 0 and "S0" in s.stop_markers and "S12" in s.stop_markers
    s2 = StageSchedule.build(0.01, 0.05)
    assert s2.j0 == 5 and "S1^6" in s2.stop_markers
    x0, x1, y0, y1 = s2.regions["cA5_3"].bounds
    assert (x0, x1) == pytest.approx((0.03, 0.05)) and (y0, y1) == pytest.approx((0.006, 0.009))
    with pytest.raises(ValueError):
        StageSchedule.build(0.1, 1.5)


@pytest.fixture(scope="module")
def staged(gamma_setup, params):
    dom, mesh, pair_, a, curve, gam = gamma_setup
    sched = StageSchedule.build(params.epsilon, 0.05)
    cfg = SimConfig(dt=1e-4, rng_seed=17, max_time=20.0)
    return dom, gam, curve, sched, cfg, cp.staged_runs(dom, gam, sched, cfg, 40)


def test_staged_runs_are_deterministic(staged):
    dom, gam, _, sched, cfg, recs = staged
    again = cp.staged_runs(dom, gam, sched, cfg, 40)
    assert cp.records_csv(again) == cp.records_csv(recs)
    single = cp.staged_run(dom, gam, sched, cfg, run_id=7)
    assert cp.records_csv([single]) == cp.records_csv([recs[7]])


def test_staged_record_invariants(staged):
    *_, recs = staged
    for r in recs:
        assert r.T_X_Gamma >= 0 and r.T_Y_Gamma >= 0
        assert len(r.F) == 1
        if r.F_star:
            assert r.G0
        if r.U < min(r.T_X_Gamma, r.T_Y_Gamma):
            assert r.T_X_Gamma == r.T_Y_Gamma
    assert sum(not (r.censored_x or r.censored_y) for r in recs) >= 35


def test_staged_y_on_gamma(staged):
    dom, gam, curve, sched, cfg, _ = staged
    y0 = curve.chains[0][len(curve.chains[0]) // 2]
    r = cp.staged_run(dom, gam, sched, cfg, y0=tuple(y0))
    assert r.T_Y_Gamma == 0.0 <= r.T_X_Gamma


def test_records_csv_header(staged):
    *_, recs = staged
    lines = cp.records_csv(recs).splitlines()
    assert lines[0].split(",") == list(cp.RECORD_FIELDS)
    assert len(lines) == len(recs) + 1


def test_box_exit_with_per_run_limits():
    # several runs at once, each with its own left side (minus infinity disables it)
    p = np.full(3, 0.5)
    exited, side, qx, qy, s = cp._box_exit(p, p, np.array([1.5, -0.5, -0.5]), p,
                                           (np.array([0.0, -np.inf, 0.0]), 1.0, 0.0, 1.0))
    np.testing.assert_array_equal(exited, [True, False, True])
    np.testing.assert_array_equal(side, [1, -1, 0])
    np.testing.assert_allclose(qx[[0, 2]], [1.0, 0.0])
    np.testing.assert_allclose(s[[0, 2]], [0.5, 0.5])
