import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hotspots import geometry as g
from hotspots import mesh as msh
from hotspots import spectral as sp
from oracles import DISK_LAMBDA2, FROZEN_LAMBDA2_D, FROZEN_MU_D1, RECTANGLE_LAMBDA2


@pytest.fixture(scope="module")
def rect_mesh():
    return msh.triangulate(g.rectangle(0, 0, 2, 1), 0.05)


@pytest.fixture(scope="module")
def rect_pairs(rect_mesh):
    return sp.eigenpairs(rect_mesh, "neumann_full", k=4)


# -- assembly -------------------------------------------------------------------


def test_unit_right_triangle_element_matrices():
    ke, me = sp.element_matrices(np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]]))
    np.testing.assert_allclose(ke[0], 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-15)
    np.testing.assert_allclose(me[0], np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0, atol=1e-15)


def test_stiffness_kills_constants_and_mass_sums_to_area(quarter, quarter_mesh):
    K, M, dof = sp.assemble(quarter_mesh, "neumann_full")
    assert np.abs(K @ np.ones(K.shape[0])).max() <= 1e-12
    assert M.sum() == pytest.approx(quarter.area(), rel=1e-10)
    assert abs(K - K.T).max() == 0.0 and abs(M - M.T).max() == 0.0
    assert len(dof) == quarter_mesh.n_nodes


def test_mixed_assembly_eliminates_dirichlet_nodes(quarter_mesh, mixed):
    K, M, dof = sp.assemble(quarter_mesh, "mixed_2_3")
    fixed = sp.dirichlet_nodes(quarter_mesh)
    assert len(fixed) > 0
    assert len(dof) == quarter_mesh.n_nodes - len(fixed)
    assert not np.isin(fixed, dof).any()
    assert (mixed.vector[fixed] == 0.0).all()
    with pytest.raises(ValueError):
        sp.assemble(msh.triangulate(g.rectangle(0, 0, 1, 1), 0.3), "mixed_2_3")
    with pytest.raises(ValueError):
        sp.assemble(quarter_mesh, "robin")


# -- eigensolver ------------------------------------------------------------------


def test_rectangle_closed_form(rect_mesh, rect_pairs):
    lam1, lam2 = rect_pairs[0].value, rect_pairs[1].value
    assert lam2 == pytest.approx(RECTANGLE_LAMBDA2, rel=0.01)
    assert abs(lam1) <= 1e-8 * lam2
    v1 = rect_pairs[0].vector
    assert np.ptp(v1) <= 1e-8 * np.abs(v1).max()
    mode = np.cos(math.pi * rect_mesh.nodes[:, 0] / 2)
    c = np.corrcoef(mode, rect_pairs[1].vector)[0, 1]
    assert abs(c) > 0.9999


def test_disk_second_eigenvalue_double():
    disk = g.regular_polygon(256, 1.0)
    pairs = sp.eigenpairs(msh.triangulate(disk, 0.06), "neumann_full", k=4)
    assert pairs[1].value == pytest.approx(DISK_LAMBDA2, rel=0.015)
    assert pairs[2].value == pytest.approx(pairs[1].value, rel=1e-3)
    assert pairs[3].value > 1.5 * pairs[2].value


def _check_pairs(mesh, pairs, bc):
    K, M, dof = sp.assemble(mesh, bc)
    V = np.column_stack([p.vector[dof] for p in pairs])
    lam = np.array([p.value for p in pairs])
    assert (np.diff(lam) >= 0).all()
    R = K @ V - (M @ V) * lam
    res = np.linalg.norm(R, axis=0) / np.linalg.norm(M @ V, axis=0)
    assert (res <= sp.TOL_EIG).all()
    G = V.T @ (M @ V)
    assert np.abs(G - np.eye(len(pairs))).max() <= 1e-8


def test_residuals_and_mass_orthonormality(rect_mesh, rect_pairs, quarter_mesh):
    _check_pairs(rect_mesh, rect_pairs, "neumann_full")
    _check_pairs(quarter_mesh, sp.eigenpairs(quarter_mesh, "mixed_2_3", k=3), "mixed_2_3")


def test_sign_convention(quarter_mesh, mixed, neumann):
    assert mixed.vector[quarter_mesh.nearest_node((0, 0))] >= 0
    assert neumann.pair.vector[neumann.mesh.nearest_node((0, 0))] >= 0
    assert (mixed.vector >= -1e-12).all()


def test_eigensolve_requires_positive_k(rect_mesh):
    K, M, _ = sp.assemble(rect_mesh)
    with pytest.raises(ValueError):
        sp.eigensolve(K, M, 0)


def test_galerkin_monotonicity_under_nested_refinement(rect_mesh, rect_pairs):
    fine = sp.eigenpairs(msh.refine_uniform(rect_mesh), "neumann_full", k=4)
    for c, f in zip(rect_pairs[1:], fine[1:]):
        assert f.value <= c.value * (1 + 1e-9)


def test_mixed_eigenvalue_refinement(quarter, mixed):
    fine, _ = sp.first_mixed(quarter, 0.01)
    assert abs(fine.value - mixed.value) / fine.value < 0.02
    assert fine.value == pytest.approx(FROZEN_MU_D1, rel=0.01)


def test_second_neumann_gap_and_frozen_value(neumann):
    assert neumann.value == pytest.approx(FROZEN_LAMBDA2_D, rel=0.01)
    assert neumann.gap > 0.05


def test_mirrored_mesh_is_isospectral(quarter_mesh, mixed):
    nodes = quarter_mesh.nodes * np.array([-1.0, 1.0])
    m = msh.Mesh(nodes, quarter_mesh.triangles[:, [0, 2, 1]], quarter_mesh.boundary_edges[:, [1, 0]],
                 quarter_mesh.boundary_tags, quarter_mesh.h)
    pair, _ = sp.first_mixed(None, mesh=m)
    assert pair.value == pytest.approx(mixed.value, rel=1e-9)


def test_mirrored_domain_remeshed(quarter, mixed):
    v = quarter.vertices * np.array([-1.0, 1.0])
    # reversing the vertex order keeps the domain on the left of every edge
    m = len(v)
    dom = g.DomainSpec(v[::-1].copy(), np.column_stack([np.arange(m), (np.arange(m) + 1) % m]),
                       tuple(quarter.tags[(m - 2 - i) % m] for i in range(m)), params=quarter.params)
    assert dom.signed_area() > 0
    pair, _ = sp.first_mixed(dom, 0.02)
    assert pair.value == pytest.approx(mixed.value, rel=0.005)


# -- level curves ----------------------------------------------------------------


def test_linear_level_curve_is_exact(quarter_mesh):
    f = quarter_mesh.nodes[:, 0]
    c = sp.level_curve(quarter_mesh, f, 0.5)
    assert not c.empty
    np.testing.assert_allclose(c.points[:, 0], 0.5, atol=1e-14)


def test_level_above_range_is_empty(quarter_mesh, mixed):
    c = sp.level_curve(quarter_mesh, mixed.vector, mixed.vector.max() + 1)
    assert c.empty and math.isnan(c.r_min)


def test_level_curve_invariants(quarter_mesh, mixed):
    a = sp.section_max(quarter_mesh, mixed.vector, 1.0)
    c = sp.level_curve(quarter_mesh, mixed.vector, a)
    vals = quarter_mesh.locator.interpolate(mixed.vector, c.points)
    np.testing.assert_allclose(vals, a, atol=1e-10 * abs(a))
    bnd = quarter_mesh.nodes[quarter_mesh.boundary_edges]
    for chain, closed in zip(c.chains, c.closed):
        if closed:
            np.testing.assert_array_equal(chain[0], chain[-1])
            continue
        for end in (chain[0], chain[-1]):
            d = g._point_segment_distance(np.broadcast_to(end, (len(bnd), 2)), bnd[:, 0], bnd[:, 1]).min()
            assert d <= 1e-12


def test_nodal_line_of_full_domain(neumann):
    c = sp.level_curve(neumann.mesh, neumann.pair.vector, 0.0)
    assert np.abs(c.points[:, 1] + 1.0).max() <= neumann.mesh.h


# -- extrema and gradients -----------------------------------------------------------


def test_extrema_of_constant(quarter_mesh):
    r = sp.extrema_report(quarter_mesh, np.full(quarter_mesh.n_nodes, 2.5))
    assert r.max_value == r.boundary_max_value == r.min_value == r.boundary_min_value == 2.5
    assert r.margin_max == 0.0 and r.margin_min == 0.0


def test_rectangle_extrema_on_boundary(rect_mesh, rect_pairs):
    r = sp.extrema_report(rect_mesh, rect_pairs[1].vector)
    assert r.margin_max <= 1e-12 and r.margin_min <= 1e-12


def test_full_domain_extrema_near_tube_centres(neumann):
    r = sp.extrema_report(neumann.mesh, neumann.pair.vector)
    h = neumann.mesh.h
    assert np.linalg.norm(neumann.mesh.nodes[r.max_node] - (0, 0)) <= 2 * h
    assert np.linalg.norm(neumann.mesh.nodes[r.min_node] - (0, -2)) <= 2 * h


def test_gradient_of_coordinates(quarter_mesh):
    gx = sp.gradient_field(quarter_mesh, quarter_mesh.nodes[:, 0])
    gy = sp.gradient_field(quarter_mesh, quarter_mesh.nodes[:, 1])
    np.testing.assert_allclose(gx, np.tile([1.0, 0.0], (len(gx), 1)), atol=1e-9)
    np.testing.assert_allclose(gy, np.tile([0.0, 1.0], (len(gy), 1)), atol=1e-9)


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_gradient_matches_direct_solve(quarter_mesh, seed):
    v = np.random.default_rng(seed).standard_normal(quarter_mesh.n_nodes)
    grad = sp.gradient_field(quarter_mesh, v)
    sel = np.random.default_rng(seed + 1).choice(len(grad), 50, replace=False)
    for t in sel:
        p = quarter_mesh.nodes[quarter_mesh.triangles[t]]
        A = np.column_stack([np.ones(3), p])
        coef = np.linalg.solve(A, v[quarter_mesh.triangles[t]])
        np.testing.assert_allclose(grad[t], coef[1:], rtol=1e-8, atol=1e-8 * np.abs(coef).max())


def test_reflection_permutation_requires_symmetry(quarter_mesh, neumann):
    perm = sp.reflection_permutation(neumann.mesh, "y", -1.0)
    np.testing.assert_array_equal(perm[perm], np.arange(len(perm)))
    with pytest.raises(ValueError):
        sp.reflection_permutation(quarter_mesh, "y", -0.5)


def test_csv_exports(quarter_mesh, mixed):
    text = sp.eigen_csv(quarter_mesh, mixed.vector)
    lines = text.splitlines()
    assert lines[0] == "node_id,x,y,value" and len(lines) == quarter_mesh.n_nodes + 1
    c = sp.level_curve(quarter_mesh, quarter_mesh.nodes[:, 0], 0.5)
    assert sp.level_curve_csv(c).splitlines()[0] == "chain,index,x,y"
