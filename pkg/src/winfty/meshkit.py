"""Triangulations of the hold-all square D = (-2, 2)^2 with an embedded reference shape.

A mesh is stored as flat numpy arrays (vertex coordinates, triangle connectivity
and a per-cell flag marking the reference domain).  A deformation is a plain
``(N, 2)`` array holding the image of every reference vertex.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HALF_WIDTH = 2.0
DET_TOL = 1e-10


class MeshError(ValueError):
    """Invalid mesh construction or input."""


class GeometryError(ValueError):
    """Degenerate geometric input."""


class AdmissibilityError(ValueError):
    """A deformation folds or collapses a cell."""


class MeshParseError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class ReferenceMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    omega_cells: np.ndarray
    h: float = field(default=float("nan"))

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        w = np.ascontiguousarray(self.omega_cells, dtype=bool)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MeshError("vertices must have shape (N, 2)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must have shape (M, 3)")
        if w.shape != (t.shape[0],):
            raise MeshError("omega_cells needs one flag per triangle")
        if t.size and (t.min() < 0 or t.max() >= v.shape[0]):
            raise MeshError("triangle index out of range")
        for arr in (v, t, w):
            arr.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "omega_cells", w)
        if np.isnan(self.h):
            object.__setattr__(self, "h", _longest_omega_edge(v, t, w))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges and, per triangle, the index of its three edges.

        Local edge ``k`` of a triangle joins local vertices ``k`` and ``(k+1) % 3``.
        """
        cached = self.__dict__.get("_edges")
        if cached is None:
            t = self.triangles
            pairs = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
            pairs = np.sort(pairs, axis=1)
            uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
            cached = (uniq, inverse.reshape(-1, 3))
            object.__setattr__(self, "_edges", cached)
        return cached

    @property
    def boundary_vertices(self) -> np.ndarray:
        """Vertices on boundary edges (edges belonging to a single triangle)."""
        cached = self.__dict__.get("_bnd")
        if cached is None:
            edges, tri_edges = self.edges()
            counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
            cached = np.unique(edges[counts == 1].ravel())
            cached.flags.writeable = False
            object.__setattr__(self, "_bnd", cached)
        return cached

    @property
    def free_vertices(self) -> np.ndarray:
        """Vertices not on the boundary of D."""
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = False
        return np.flatnonzero(mask)

    def omega_vertex_flags(self) -> tuple[np.ndarray, np.ndarray]:
        """Per vertex: touches an omega cell, touches a non-omega cell."""
        n = self.n_vertices
        in_omega = np.zeros(n, dtype=bool)
        in_outer = np.zeros(n, dtype=bool)
        in_omega[self.triangles[self.omega_cells].ravel()] = True
        in_outer[self.triangles[~self.omega_cells].ravel()] = True
        return in_omega, in_outer

    def shape_boundary_vertices(self) -> np.ndarray:
        """Vertices on the boundary of the embedded shape (topological test)."""
        in_omega, in_outer = self.omega_vertex_flags()
        return np.flatnonzero(in_omega & in_outer)

    def shape_interior_vertices(self) -> np.ndarray:
        """Vertices strictly inside the embedded shape."""
        in_omega, in_outer = self.omega_vertex_flags()
        mask = in_omega & ~in_outer
        mask[self.boundary_vertices] = False
        return np.flatnonzero(mask)

    def identity(self) -> np.ndarray:
        return self.vertices.copy()

    def validate(self) -> None:
        area = signed_areas(self.vertices, self.triangles)
        if np.any(area <= 0.0):
            bad = int(np.flatnonzero(area <= 0.0)[0])
            raise MeshError(f"triangle {bad} has non-positive area")
        edges, tri_edges = self.edges()
        counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
        if np.any(counts > 2):
            raise MeshError("edge shared by more than two triangles")
        bnd = self.vertices[self.boundary_vertices]
        on_square = np.isclose(np.abs(bnd).max(axis=1), HALF_WIDTH, rtol=0, atol=1e-12)
        if not np.all(on_square):
            raise MeshError("boundary vertex not on the boundary of D")
        in_omega, _ = self.omega_vertex_flags()
        if np.any(in_omega[self.boundary_vertices]):
            raise MeshError("reference shape touches the boundary of D")


def _longest_omega_edge(v, t, w) -> float:
    cells = t[w] if w.any() else t
    if len(cells) == 0:
        return 0.0
    p = v[cells]
    lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    return float(lengths.max())


def signed_areas(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = points[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


# ---------------------------------------------------------------- generators


def generate_square_in_square(n: int) -> ReferenceMesh:
    """Criss-cross grid of D with ``n`` squares per side; omega = (-1, 1)^2.

    Every square is split into four triangles through its centre.  The mesh
    size is the square side ``4 / n`` (the longest edge of every triangle).
    """
    if n < 4 or n % 4:
        raise MeshError(f"n={n}: squares must align with (-1, 1)^2, need n >= 4 and n % 4 == 0")
    s = 2 * HALF_WIDTH / n
    ax = -HALF_WIDTH + s * np.arange(n + 1)
    gx, gy = np.meshgrid(ax, ax, indexing="ij")
    corners = np.column_stack([gx.ravel(), gy.ravel()])
    cx = -HALF_WIDTH + s * (np.arange(n) + 0.5)
    mx, my = np.meshgrid(cx, cx, indexing="ij")
    centres = np.column_stack([mx.ravel(), my.ravel()])
    vertices = np.vstack([corners, centres])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a = i * (n + 1) + j  # (x_i, y_j)
    b = (i + 1) * (n + 1) + j  # (x_{i+1}, y_j)
    c = (i + 1) * (n + 1) + j + 1
    d = i * (n + 1) + j + 1
    m = (n + 1) ** 2 + i * n + j
    tris = np.stack(
        [np.column_stack([a, b, m]), np.column_stack([b, c, m]),
         np.column_stack([c, d, m]), np.column_stack([d, a, m])],
        axis=1,
    ).reshape(-1, 3)
    centroid = vertices[tris].mean(axis=1)
    omega = np.all(np.abs(centroid) < 1.0, axis=1)
    return ReferenceMesh(vertices, tris, omega, h=s)


def _ring(radius: float, count: int, offset: float = 0.0) -> np.ndarray:
    theta = offset + 2 * np.pi * np.arange(count) / count
    return radius * np.column_stack([np.cos(theta), np.sin(theta)])


def _square_boundary(angles: np.ndarray) -> np.ndarray:
    """Points on the boundary of D hit by rays at ``angles`` plus the four corners."""
    corner_angles = np.pi / 4 + np.pi / 2 * np.arange(4)
    all_angles = np.concatenate([np.mod(angles, 2 * np.pi), corner_angles])
    all_angles = np.unique(np.round(all_angles, 14))
    d = np.column_stack([np.cos(all_angles), np.sin(all_angles)])
    pts = HALF_WIDTH * d / np.abs(d).max(axis=1, keepdims=True)
    # snap to the square exactly
    big = np.abs(pts) >= HALF_WIDTH * (1 - 1e-12)
    pts[big] = np.sign(pts[big]) * HALF_WIDTH
    return pts


def _zip_rings(inner: list[int], inner_pts: np.ndarray, outer: list[int], outer_pts: np.ndarray):
    """Triangulate the band between two closed polylines sorted by angle."""
    ai = np.mod(np.arctan2(inner_pts[:, 1], inner_pts[:, 0]), 2 * np.pi)
    ao = np.mod(np.arctan2(outer_pts[:, 1], outer_pts[:, 0]), 2 * np.pi)
    oi, oo = np.argsort(ai, kind="stable"), np.argsort(ao, kind="stable")
    ai, ao = ai[oi], ao[oo]
    inner = [inner[k] for k in oi]
    outer = [outer[k] for k in oo]
    ni, no = len(inner), len(outer)
    # unwrap angles so the sweep runs once round the circle
    ai_ext = np.concatenate([ai, ai[:1] + 2 * np.pi])
    ao_ext = np.concatenate([ao, ao[:1] + 2 * np.pi])
    tris = []
    i = j = 0
    while i < ni or j < no:
        next_i = ai_ext[i + 1] if i < ni else np.inf
        next_j = ao_ext[j + 1] if j < no else np.inf
        if next_i <= next_j:
            tris.append((inner[i % ni], outer[j % no], inner[(i + 1) % ni]))
            i += 1
        else:
            tris.append((inner[i % ni], outer[j % no], outer[(j + 1) % no]))
            j += 1
    return tris


def _ring_mesh(rings: list[tuple[float, int, float]], omega_bands: list[bool], fan_omega: bool) -> ReferenceMesh:
    """Origin fan, bands between consecutive rings, then a band to the boundary of D."""
    pts = [np.zeros((1, 2))]
    ids = []
    start = 1
    for radius, count, offset in rings:
        ring = _ring(radius, count, offset)
        pts.append(ring)
        ids.append(list(range(start, start + count)))
        start += count
    first = ids[0]
    tris = [(0, first[k], first[(k + 1) % len(first)]) for k in range(len(first))]
    flags = [fan_omega] * len(tris)
    coords = np.vstack(pts)
    for band, (lo, hi) in enumerate(zip(ids[:-1], ids[1:])):
        new = _zip_rings(lo, coords[lo], hi, coords[hi])
        tris += new
        flags += [omega_bands[band]] * len(new)
    last = ids[-1]
    square = _square_boundary(np.arctan2(coords[last, 1], coords[last, 0]))
    sq_ids = list(range(start, start + len(square)))
    coords = np.vstack([coords, square])
    new = _zip_rings(last, coords[last], sq_ids, square)
    tris += new
    flags += [False] * len(new)
    tris = np.array(tris, dtype=np.int64)
    if np.any(signed_areas(coords, tris) <= 1e-14):
        raise MeshError("transition band to the boundary of D self-intersects; use more angular segments")
    return ReferenceMesh(coords, tris, np.array(flags))


def generate_annulus_in_square(n_angular: int, n_radial: int, r_inner: float, r_outer: float) -> ReferenceMesh:
    """Polygonal annulus between regular ``n_angular``-gons, embedded in D."""
    if not 0 < r_inner < r_outer < HALF_WIDTH:
        raise MeshError("need 0 < r_inner < r_outer < 2")
    if n_angular < 8 or n_radial < 1:
        raise MeshError("need n_angular >= 8 and n_radial >= 1")
    radii = np.linspace(r_inner, r_outer, n_radial + 1)
    rings = [(float(r), n_angular, 0.0) for r in radii]
    return _ring_mesh(rings, [True] * n_radial, fan_omega=False)


def generate_disk_in_square(n_rings: int, radius: float, base: int = 6) -> ReferenceMesh:
    """Polygonal disk made of concentric rings; ring ``k`` carries ``base * k`` points."""
    if not 0 < radius < HALF_WIDTH:
        raise MeshError("need 0 < radius < 2")
    if n_rings < 1:
        raise MeshError("need n_rings >= 1")
    rings = [(radius * k / n_rings, base * k, 0.0) for k in range(1, n_rings + 1)]
    return _ring_mesh(rings, [True] * (n_rings - 1), fan_omega=True)


# ---------------------------------------------------------------- refinement


def refine_congruent(mesh: ReferenceMesh, phi: np.ndarray) -> tuple[ReferenceMesh, np.ndarray]:
    """Red refinement: split every triangle into four via its edge midpoints.

    The deformation is carried over as its P1 interpolant, so the deformed
    geometry is unchanged.
    """
    phi = np.asarray(phi, dtype=float)
    edges, tri_edges = mesh.edges()
    n = mesh.n_vertices
    mid_ref = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    mid_phi = 0.5 * (phi[edges[:, 0]] + phi[edges[:, 1]])
    v0, v1, v2 = mesh.triangles.T
    m01, m12, m20 = (tri_edges + n).T
    children = np.stack(
        [np.column_stack([v0, m01, m20]), np.column_stack([m01, v1, m12]),
         np.column_stack([m20, m12, v2]), np.column_stack([m01, m12, m20])],
        axis=1,
    ).reshape(-1, 3)
    omega = np.repeat(mesh.omega_cells, 4)
    new_mesh = ReferenceMesh(np.vstack([mesh.vertices, mid_ref]), children, omega, h=mesh.h / 2)
    return new_mesh, np.vstack([phi, mid_phi])


# ---------------------------------------------------------------- geometry


def radius_ratio(p0, p1, p2) -> float:
    """Circumradius over twice the inradius; 1 for an equilateral triangle."""
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    a = np.linalg.norm(p1 - p2)
    b = np.linalg.norm(p2 - p0)
    c = np.linalg.norm(p0 - p1)
    e1, e2 = p1 - p0, p2 - p0
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    if area <= 1e-14 * max(a, b, c) ** 2:
        raise GeometryError("degenerate triangle")
    circum = a * b * c / (4 * area)
    inr = 2 * area / (a + b + c)
    return float(circum / (2 * inr))


def radius_ratios(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = points[triangles]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    area = np.abs(signed_areas(points, triangles))
    return a * b * c * (a + b + c) / (16 * area**2)


@dataclass(frozen=True)
class CellGeometry:
    area: float
    basis_gradients: np.ndarray
    jacobian: np.ndarray


def p1_gradients(points: np.ndarray, triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed areas ``(M,)`` and P1 basis gradients ``(M, 3, 2)``."""
    p = points[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # degenerate cells yield inf/nan gradients; callers check the areas
    with np.errstate(divide="ignore", invalid="ignore"):
        g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
        grads = np.stack([-g1 - g2, g1, g2], axis=1)
    return 0.5 * det, grads


def jacobians(mesh: ReferenceMesh, phi: np.ndarray) -> np.ndarray:
    """Cell-wise constant Jacobian of the deformation, shape ``(M, 2, 2)``."""
    _, ref_grads = p1_gradients(mesh.vertices, mesh.triangles)
    return np.einsum("mka,mkb->mab", np.asarray(phi)[mesh.triangles], ref_grads)


def field_jacobians(mesh: ReferenceMesh, phi: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Cell-wise Jacobian of a nodal vector field with respect to deformed coordinates."""
    _, grads = p1_gradients(np.asarray(phi, dtype=float), mesh.triangles)
    return np.einsum("mka,mkb->mab", np.asarray(V, dtype=float)[mesh.triangles], grads)


def cell_geometry(mesh: ReferenceMesh, phi: np.ndarray, cell_index: int) -> CellGeometry:
    if not 0 <= cell_index < mesh.n_triangles:
        raise IndexError(f"cell {cell_index} out of range")
    tri = mesh.triangles[cell_index : cell_index + 1]
    area, grads = p1_gradients(np.asarray(phi, dtype=float), tri)
    ref_area, ref_grads = p1_gradients(mesh.vertices, tri)
    if area[0] <= DET_TOL * ref_area[0]:
        raise AdmissibilityError(f"cell {cell_index} has non-positive deformed area")
    jac = np.asarray(phi, dtype=float)[tri[0]].T @ ref_grads[0]
    return CellGeometry(float(area[0]), grads[0], jac)


@dataclass
class AdmissibilityReport:
    ok: bool
    determinants: np.ndarray
    bad_cells: np.ndarray
    moved_boundary_vertices: np.ndarray

    def __bool__(self) -> bool:
        return self.ok


def check_admissible(mesh: ReferenceMesh, phi: np.ndarray) -> AdmissibilityReport:
    """Positive Jacobian determinant on every cell and identity on the boundary of D."""
    phi = np.asarray(phi, dtype=float)
    ref_area = signed_areas(mesh.vertices, mesh.triangles)
    det = signed_areas(phi, mesh.triangles) / ref_area
    bad = np.flatnonzero(~(det > DET_TOL))
    bnd = mesh.boundary_vertices
    moved = bnd[np.any(phi[bnd] != mesh.vertices[bnd], axis=1)]
    return AdmissibilityReport(len(bad) == 0 and len(moved) == 0, det, bad, moved)


def is_admissible(mesh: ReferenceMesh, phi: np.ndarray) -> bool:
    return check_admissible(mesh, phi).ok


def require_admissible(mesh: ReferenceMesh, phi: np.ndarray) -> None:
    report = check_admissible(mesh, phi)
    if report.bad_cells.size:
        raise AdmissibilityError(f"{report.bad_cells.size} cells with non-positive Jacobian determinant")
    if report.moved_boundary_vertices.size:
        raise AdmissibilityError("deformation moves the boundary of D")


# ---------------------------------------------------------------- file io


def write_mesh(mesh: ReferenceMesh, path, points: np.ndarray | None = None) -> None:
    """Write the text mesh format; ``points`` overrides the vertex coordinates."""
    pts = mesh.vertices if points is None else np.asarray(points, dtype=float)
    lines = [f"vertices {len(pts)}"]
    lines += [f"{x!r} {y!r}" for x, y in pts.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k} {int(f)}" for (i, j, k), f in zip(mesh.triangles.tolist(), mesh.omega_cells.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> ReferenceMesh:
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].split()
        if text:
            rows.append((lineno, text))
    it = iter(rows)

    def header(word):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise MeshParseError(f"missing '{word}' header") from None
        if len(tok) != 2 or tok[0] != word:
            raise MeshParseError(f"expected '{word} <count>'", lineno)
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshParseError(f"bad count {tok[1]!r}", lineno) from None
        if count < 0:
            raise MeshParseError("negative count", lineno)
        return count

    n = header("vertices")
    verts = np.empty((n, 2))
    for k in range(n):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise MeshParseError("file ends inside vertex block") from None
        if len(tok) != 2:
            raise MeshParseError("vertex line needs 2 coordinates", lineno)
        try:
            verts[k] = [float(tok[0]), float(tok[1])]
        except ValueError:
            raise MeshParseError("bad coordinate", lineno) from None
    m = header("triangles")
    tris = np.empty((m, 3), dtype=np.int64)
    flags = np.empty(m, dtype=bool)
    for k in range(m):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise MeshParseError("file ends inside triangle block") from None
        if len(tok) != 4:
            raise MeshParseError("triangle line needs 'i j k flag'", lineno)
        try:
            idx = [int(s) for s in tok]
        except ValueError:
            raise MeshParseError("bad integer", lineno) from None
        if min(idx[:3]) < 0 or max(idx[:3]) >= n:
            raise MeshParseError("triangle index out of range", lineno)
        if idx[3] not in (0, 1):
            raise MeshParseError("flag must be 0 or 1", lineno)
        tris[k] = idx[:3]
        flags[k] = bool(idx[3])
    extra = next(it, None)
    if extra is not None:
        raise MeshParseError("trailing content", extra[0])
    mesh = ReferenceMesh(verts, tris, flags)
    area = signed_areas(verts, tris)
    if np.any(area <= 0):
        raise MeshError(f"triangle {int(np.flatnonzero(area <= 0)[0])} has non-positive area")
    return mesh
