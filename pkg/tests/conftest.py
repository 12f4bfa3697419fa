import numpy as np
import pytest

from winfty.meshkit import field_jacobians, generate_square_in_square
from winfty.directionsolve import spectral_norms


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid8():
    return generate_square_in_square(8)


def random_admissible_field(mesh, phi, rng, scale=1.0):
    """Random nodal field, zero on the boundary of D, with max |DV| = scale."""
    V = rng.normal(size=(mesh.n_vertices, 2))
    V[mesh.boundary_vertices] = 0.0
    worst = spectral_norms(field_jacobians(mesh, phi, V)).max()
    return V * (scale / worst)


def random_admissible_map(mesh, rng, amplitude=0.3):
    phi = mesh.identity()
    return phi + random_admissible_field(mesh, phi, rng, amplitude)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
