import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hotspots.geometry import DomainParams, build_domain, build_quarter

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return DomainParams(0.1, 0.01)


@pytest.fixture(scope="session")
def quarter(params):
    return build_quarter(params)


@pytest.fixture(scope="session")
def full(params):
    return build_domain(params)


@pytest.fixture(scope="session")
def quarter_mesh(quarter):
    from hotspots.mesh import mesh_domain

    return mesh_domain(quarter, 0.02)


@pytest.fixture(scope="session")
def mixed(quarter, quarter_mesh):
    """First mixed eigenpair on the quarter domain at h = 0.02."""
    from hotspots.spectral import first_mixed

    pair, _ = first_mixed(quarter, mesh=quarter_mesh)
    return pair


@pytest.fixture(scope="session")
def neumann(full):
    """Second Neumann eigenpair of the full domain at h = 0.02."""
    from hotspots.spectral import second_neumann

    return second_neumann(full, 0.02)


@pytest.fixture(scope="session")
def gamma_setup(params):
    from hotspots.experiments import gamma_for

    return gamma_for(params, 0.02)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        if n in mod.RESULTS:
            ok, detail = mod.RESULTS[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: FAIL  (not run to completion)")
