import os
import subprocess
import sys

import numpy as np
import pytest

from hotspots import kernels
from hotspots import _pykernels
from hotspots.coupling import GammaTube
from hotspots.spectral import level_curve, section_max
from oracles import PHILOX_KAT


@pytest.mark.parametrize("ctr,key,expect", PHILOX_KAT)
def test_philox_known_answers(ctr, key, expect):
    out = _pykernels.philox4x64(*[np.array([c], dtype=np.uint64) for c in ctr], key[0], key[1])
    assert tuple(int(o[0]) for o in out) == expect


def test_normals_are_standard():
    z = kernels.normals4(1, np.arange(50_000), 3, 0)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01
    u = kernels.uniforms4(1, np.arange(1000), 0, 0)
    assert (u > 0).all() and (u < 1).all()


def test_streams_are_keyed():
    base = kernels.normals4(5, np.arange(8), 0, 0)
    np.testing.assert_array_equal(base, kernels.normals4(5, np.arange(8), 0, 0))
    for other in (kernels.normals4(6, np.arange(8), 0, 0), kernels.normals4(5, np.arange(8), 1, 0),
                  kernels.normals4(5, np.arange(8), 0, 1), kernels.normals4(5, np.arange(1, 9), 0, 0)):
        assert not np.array_equal(base, other)
    # a path's stream does not depend on which other paths are in the batch
    np.testing.assert_array_equal(kernels.normals4(5, [3], 0, 0)[0], base[3])


def test_backend_selection_fallback():
    env = dict(os.environ, HOTSPOTS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from hotspots import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    with pytest.raises(ValueError):
        kernels.backend_module("fortran")


@pytest.fixture(scope="module")
def backends():
    if not kernels.HAVE_COMPILED:
        pytest.skip("compiled kernels not built")
    return kernels.backend_module("numpy"), kernels.backend_module("cython")


@pytest.fixture(scope="module")
def workload(quarter, quarter_mesh, mixed):
    rng = np.random.default_rng(0)
    n = 4000
    lo, hi = quarter.vertices.min(0), quarter.vertices.max(0)
    a = section_max(quarter_mesh, mixed.vector, 1.0)
    gam = GammaTube.from_curve(quarter_mesh, mixed.vector, level_curve(quarter_mesh, mixed.vector, a))
    return dict(px=rng.uniform(lo[0], hi[0], n), py=rng.uniform(lo[1], hi[1], n),
                ang=rng.uniform(0, 2 * np.pi, n), gam=gam, bi=quarter.index, loc=quarter_mesh.locator,
                vals=np.array(mixed.vector), dw=3e-3 * rng.standard_normal((2, 500)))


def _same(a, b, atol=1e-12):
    if isinstance(a, dict):
        assert a.keys() == b.keys()
        for k in a:
            _same(a[k], b[k], atol)
        return
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            _same(x, y, atol)
        return
    np.testing.assert_allclose(np.asarray(a, float), np.asarray(b, float), atol=atol, rtol=0)


def test_random_streams_agree(backends):
    py, cy = backends
    ids = np.arange(1000, dtype=np.int64)
    np.testing.assert_array_equal(py.uniforms4(9, ids, 4, 1), cy.uniforms4(9, ids, 4, 1))
    _same(py.normals4(9, ids, 4, 1), cy.normals4(9, ids, 4, 1), atol=1e-14)


def test_geometry_kernels_agree(backends, workload):
    py, cy = backends
    w = workload
    _same(py.project(w["px"], w["py"], w["bi"]), cy.project(w["px"], w["py"], w["bi"]))
    n = len(w["px"])
    args = (np.full(n, 0.5), np.zeros(n), np.cos(w["ang"]), np.sin(w["ang"]), w["bi"], 0.0)
    _same(py.ray_first_hit(*args), cy.ray_first_hit(*args))
    _same(py.nearest_boundary(w["px"], w["py"], w["bi"]), cy.nearest_boundary(w["px"], w["py"], w["bi"]))


def test_mesh_kernels_agree(backends, workload):
    py, cy = backends
    w = workload
    _same(py.locate(w["px"], w["py"], w["loc"]), cy.locate(w["px"], w["py"], w["loc"]))
    a = py.interpolate(w["px"], w["py"], w["vals"], w["loc"])
    b = cy.interpolate(w["px"], w["py"], w["vals"], w["loc"])
    np.testing.assert_array_equal(np.isnan(a), np.isnan(b))
    _same(np.nan_to_num(a), np.nan_to_num(b))
    np.testing.assert_array_equal(py.gamma_hit(w["px"], w["py"], w["gam"]), cy.gamma_hit(w["px"], w["py"], w["gam"]))


def test_coupling_kernels_agree(backends, workload):
    py, cy = backends
    w = workload
    m = w["dw"].shape[1]
    args = (np.zeros(m), np.zeros(m), np.zeros(m), np.full(m, 0.1), w["dw"][0], w["dw"][1],
            np.zeros(m, bool), w["bi"], 1e-5)
    _same(py.mirror_step(*args), cy.mirror_step(*args))
    k = 100
    adv = (np.zeros(k), np.zeros(k), np.zeros(k), np.full(k, 0.1), np.zeros(k, bool), np.arange(k),
           np.zeros(k, np.int64), 0, 0, 1e-4, 400, w["bi"], w["gam"], 1e-5, True, 1e-9, False)
    _same(py.mirror_advance(*adv), cy.mirror_advance(*adv), atol=1e-10)
