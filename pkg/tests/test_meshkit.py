import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from winfty.meshkit import (
    AdmissibilityError,
    GeometryError,
    MeshError,
    MeshParseError,
    ReferenceMesh,
    cell_geometry,
    check_admissible,
    generate_annulus_in_square,
    generate_disk_in_square,
    generate_square_in_square,
    radius_ratio,
    radius_ratios,
    read_mesh,
    refine_congruent,
    signed_areas,
    write_mesh,
)

from conftest import random_admissible_field, random_admissible_map

CRISS_CROSS_RATIO = 0.5 + 1 / np.sqrt(2)


def test_square_counts():
    mesh = generate_square_in_square(4)
    n = 4
    assert mesh.n_vertices == (n + 1) ** 2 + n**2 == 41
    assert mesh.n_triangles == 4 * n**2 == 64
    assert mesh.omega_cells.sum() == 16
    mesh.validate()


@pytest.mark.parametrize("n", [4, 8, 16])
def test_square_radius_ratio_and_area(n):
    mesh = generate_square_in_square(n)
    np.testing.assert_allclose(radius_ratios(mesh.vertices, mesh.triangles), CRISS_CROSS_RATIO, rtol=1e-12)
    area = signed_areas(mesh.vertices, mesh.triangles)
    assert np.all(area > 0)
    assert abs(area[mesh.omega_cells].sum() - 4.0) < 1e-12
    assert mesh.h == pytest.approx(4.0 / n)


def test_square_alignment_error():
    with pytest.raises(MeshError):
        generate_square_in_square(6)


def test_annulus_counts_and_validity():
    mesh = generate_annulus_in_square(8, 1, 0.7, 1.4)
    assert mesh.omega_cells.sum() == 16
    mesh.validate()


def test_annulus_area_converges():
    exact = np.pi * (1.4**2 - 0.7**2)
    errs = []
    for n in (16, 32, 64, 128):
        mesh = generate_annulus_in_square(n, 2, 0.7, 1.4)
        mesh.validate()
        area = signed_areas(mesh.vertices, mesh.triangles)[mesh.omega_cells].sum()
        # inscribed polygon areas: exact formula n/2 r^2 sin(2 pi / n)
        poly = n / 2 * np.sin(2 * np.pi / n) * (1.4**2 - 0.7**2)
        assert area == pytest.approx(poly, rel=1e-12)
        errs.append(exact - area)
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-2


def test_annulus_preconditions():
    with pytest.raises(MeshError):
        generate_annulus_in_square(16, 1, 1.4, 0.7)
    with pytest.raises(MeshError):
        generate_annulus_in_square(4, 1, 0.7, 1.4)


def test_disk_generator():
    mesh = generate_disk_in_square(4, 1.0)
    mesh.validate()
    area = signed_areas(mesh.vertices, mesh.triangles)[mesh.omega_cells].sum()
    assert area == pytest.approx(24 / 2 * np.sin(2 * np.pi / 24))


def test_refine_counts():
    mesh = generate_square_in_square(4)
    edges, _ = mesh.edges()
    fine, phi = refine_congruent(mesh, mesh.identity())
    assert fine.n_triangles == 256
    assert fine.n_vertices == mesh.n_vertices + len(edges)
    assert fine.h == mesh.h / 2
    np.testing.assert_array_equal(phi, fine.vertices)
    fine.validate()


def test_refine_quarters_areas(rng):
    mesh = generate_annulus_in_square(16, 2, 0.7, 1.4)
    phi = random_admissible_map(mesh, rng)
    fine, fphi = refine_congruent(mesh, phi)
    parent = signed_areas(phi, mesh.triangles)
    child = signed_areas(fphi, fine.triangles).reshape(-1, 4)
    np.testing.assert_allclose(child, np.broadcast_to(parent[:, None] / 4, child.shape), rtol=1e-12)
    np.testing.assert_array_equal(fine.omega_cells.reshape(-1, 4).all(axis=1), mesh.omega_cells)


def test_refine_keeps_deformed_geometry(rng, grid8):
    phi = random_admissible_map(grid8, rng)
    fine, fphi = refine_congruent(grid8, phi)
    edges, _ = grid8.edges()
    mids = fphi[grid8.n_vertices:]
    a, b = phi[edges[:, 0]], phi[edges[:, 1]]
    # each new vertex lies on its parent deformed edge, halfway
    cross = (b - a)[:, 0] * (mids - a)[:, 1] - (b - a)[:, 1] * (mids - a)[:, 0]
    assert np.abs(cross).max() < 1e-12
    np.testing.assert_allclose(np.linalg.norm(mids - a, axis=1), np.linalg.norm(b - mids, axis=1), atol=1e-12)
    assert check_admissible(fine, fphi).ok


def test_radius_ratio_examples():
    assert radius_ratio((0, 0), (1, 0), (0.5, np.sqrt(3) / 2)) == pytest.approx(1.0, abs=1e-12)
    assert radius_ratio((0, 0), (1, 0), (0, 1)) == pytest.approx(1.207107, abs=1e-6)
    with pytest.raises(GeometryError):
        radius_ratio((0, 0), (1, 1), (2, 2))


@settings(max_examples=60, deadline=None)
@given(
    pts=st.lists(st.floats(-5, 5), min_size=6, max_size=6),
    angle=st.floats(0, 2 * np.pi),
    scale=st.floats(0.01, 100),
    shift=st.tuples(st.floats(-10, 10), st.floats(-10, 10)),
)
def test_radius_ratio_similarity_invariant(pts, angle, scale, shift):
    p = np.array(pts).reshape(3, 2)
    e1, e2 = p[1] - p[0], p[2] - p[0]
    area = abs(e1[0] * e2[1] - e1[1] * e2[0])
    longest = max(np.linalg.norm(e1), np.linalg.norm(e2), np.linalg.norm(p[2] - p[1]))
    if longest < 1e-3 or area < 0.05 * longest**2:
        return
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    q = scale * p @ rot.T + np.array(shift)
    assert radius_ratio(*q) == pytest.approx(radius_ratio(*p), rel=1e-10)
    assert radius_ratio(*p) >= 1 - 1e-12


def test_admissible_identity_for_generators():
    for mesh in (generate_square_in_square(8), generate_annulus_in_square(16, 2, 0.7, 1.4),
                 generate_disk_in_square(3, 1.0)):
        assert check_admissible(mesh, mesh.identity()).ok


def test_admissible_detects_reflection(grid8):
    phi = grid8.identity()
    tri = grid8.triangles[grid8.omega_cells][0]
    phi[[tri[0], tri[1]]] = phi[[tri[1], tri[0]]]
    report = check_admissible(grid8, phi)
    assert not report.ok
    assert report.bad_cells.size > 0


def test_admissible_detects_boundary_motion(grid8):
    phi = grid8.identity()
    phi[grid8.boundary_vertices[0]] += 0.01
    assert not check_admissible(grid8, phi).ok


def test_half_step_of_unit_field_is_admissible(rng, grid8):
    for _ in range(5):
        V = random_admissible_field(grid8, grid8.identity(), rng, 1.0)
        assert check_admissible(grid8, grid8.identity() + 0.5 * V).ok


def test_cell_geometry_reference_element():
    mesh = ReferenceMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]), np.array([False]))
    geo = cell_geometry(mesh, mesh.identity(), 0)
    assert geo.area == pytest.approx(0.5)
    np.testing.assert_allclose(geo.basis_gradients, [[-1, -1], [1, 0], [0, 1]])
    np.testing.assert_allclose(geo.jacobian, np.eye(2))
    geo2 = cell_geometry(mesh, 2 * mesh.identity(), 0)
    assert geo2.area == pytest.approx(2.0)
    np.testing.assert_allclose(geo2.basis_gradients, 0.5 * geo.basis_gradients)
    np.testing.assert_allclose(geo2.jacobian, 2 * np.eye(2))
    flipped = mesh.identity()[[0, 2, 1]]
    with pytest.raises(AdmissibilityError):
        cell_geometry(mesh, flipped, 0)


def test_cell_geometry_partition_of_unity(rng, grid8):
    phi = random_admissible_map(grid8, rng)
    for c in rng.choice(grid8.n_triangles, 20, replace=False):
        geo = cell_geometry(grid8, phi, int(c))
        np.testing.assert_allclose(geo.basis_gradients.sum(axis=0), 0.0, atol=1e-12)
        assert geo.area > 0


def test_mesh_roundtrip(tmp_path):
    mesh = generate_annulus_in_square(16, 2, 0.7, 1.4)
    path = tmp_path / "a.mesh"
    write_mesh(mesh, path)
    back = read_mesh(path)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)
    np.testing.assert_array_equal(back.omega_cells, mesh.omega_cells)


def test_read_mesh_comments(tmp_path):
    path = tmp_path / "c.mesh"
    path.write_text("# tiny\nvertices 3\n0 0\n1 0  # right\n0 1\n\ntriangles 1\n0 1 2 1\n")
    mesh = read_mesh(path)
    assert mesh.n_triangles == 1 and mesh.omega_cells[0]


def test_read_mesh_index_out_of_range(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("vertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 1 3 0\n")
    with pytest.raises(MeshParseError) as info:
        read_mesh(path)
    assert info.value.line == 6


def test_read_mesh_negative_area(tmp_path):
    path = tmp_path / "neg.mesh"
    path.write_text("vertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 2 1 0\n")
    with pytest.raises(MeshError, match="non-positive area"):
        read_mesh(path)
