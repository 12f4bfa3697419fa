import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from winfty.meshkit import AdmissibilityError, generate_square_in_square
from winfty.metrics import ConvergenceTable, complement_distance, deformation_norms, discrete_hcd, eoc
from winfty.problemdefs import TargetShape

from conftest import random_admissible_map

PUBLISHED_ENERGIES = [0.105327, 0.0268579, 0.00712922, 0.00179752]
HS = [0.5, 0.25, 0.125, 0.0625]


def test_eoc_examples():
    assert eoc([1.0, 0.25], [1.0, 0.5]) == [pytest.approx(2.0)]
    assert eoc([1.0, 0.5, 0.25], [0.4, 0.2, 0.1]) == [pytest.approx(1.0), pytest.approx(1.0)]
    assert eoc(PUBLISHED_ENERGIES[:2], HS[:2])[0] == pytest.approx(1.97146, abs=1e-4)


def test_eoc_rejects_bad_input():
    with pytest.raises(ValueError):
        eoc([1.0, 0.0], [1.0, 0.5])
    with pytest.raises(ValueError):
        eoc([1.0, 0.5], [0.5, 0.5])
    with pytest.raises(ValueError):
        eoc([1.0], [0.5, 0.25])


def test_convergence_table():
    table = ConvergenceTable()
    for h, e in zip(HS, PUBLISHED_ENERGIES):
        table.add(h, e, 0.1 * h, mu=(8 * h) ** -0.5)
    assert table.rows[0].eoc_energy is None
    assert table.rows[1].eoc_energy == pytest.approx(1.97146, abs=1e-4)
    assert table.rows[2].eoc_hcd == pytest.approx(1.0)
    lines = table.to_csv().splitlines()
    assert lines[0] == "h,mu,energy,eoc_energy,hcd,eoc_hcd"
    assert len(lines) == 5
    assert lines[1].split(",")[3] == ""
    with pytest.raises(ValueError):
        table.add(0.05, 1e-3, 1e-3)


def test_self_distance_is_zero(grid8):
    # the target equal to the shape's vertex-sampled geometry: a square sampled at its own vertices
    d = complement_distance(grid8, grid8.identity())
    assert np.all(d[grid8.shape_boundary_vertices()] == 0)
    outside = np.setdiff1d(np.arange(grid8.n_vertices), np.unique(grid8.triangles[grid8.omega_cells]))
    assert np.all(d[outside] == 0)


def test_complement_distance_matches_kdtree(rng, grid8):
    phi = random_admissible_map(grid8, rng)
    tree = cKDTree(phi[grid8.shape_boundary_vertices()])
    inner = grid8.shape_interior_vertices()
    expected, _ = tree.query(phi[inner])
    np.testing.assert_allclose(complement_distance(grid8, phi)[inner], expected, atol=1e-14)


def test_hcd_of_square_against_ball():
    mesh = generate_square_in_square(8)
    target = TargetShape(2 / np.sqrt(np.pi))
    # centre: ball gives 2/sqrt(pi), square vertex sampling gives 1
    hcd = discrete_hcd(mesh, mesh.identity(), target)
    assert hcd >= abs(2 / np.sqrt(np.pi) - 1) - 1e-14
    # corners of the square lie outside the ball: zero on both sides there
    assert hcd < 1.0


def test_hcd_rotation_invariant(rng, grid8):
    phi = random_admissible_map(grid8, rng)
    target = TargetShape(1.1)
    a = 0.37
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    assert discrete_hcd(grid8, phi @ rot.T, target) == pytest.approx(discrete_hcd(grid8, phi, target), abs=1e-13)


def test_deformation_norms(grid8):
    assert deformation_norms(grid8, grid8.identity()) == pytest.approx((1.0, 1.0))
    phi = grid8.identity() * np.array([2.0, 0.5])
    assert deformation_norms(grid8, phi) == pytest.approx((2.0, 2.0))
    flipped = grid8.identity() * np.array([-1.0, 1.0])
    with pytest.raises(AdmissibilityError):
        deformation_norms(grid8, flipped)
