"""P1 finite elements for the Poisson state and adjoint equations on the deformed shape."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .meshkit import DET_TOL, AdmissibilityError, ReferenceMesh, p1_gradients
from .problemdefs import CostIntegrand, PenaltyConfig, penalty_value_and_derivative

SOLVER_TOL = 1e-10

# Edge-midpoint rule: node k sits on the edge (k, k+1); values of the three
# barycentric basis functions there.  Exact for quadratics, weights |T|/3.
MIDPOINT_BASIS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass
class SparseSystem:
    matrix: sp.spmatrix
    rhs: np.ndarray


def cg_solve(system: SparseSystem, tol: float = SOLVER_TOL, max_iter: int | None = None, x0=None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients until ``|Ax - b| <= tol |b|``."""
    A = sp.csr_matrix(system.matrix)
    b = np.asarray(system.rhs, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * max(n, 1)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix is not positive definite", float("nan"), 0)
    inv_diag = 1.0 / diag
    r = b - A @ x
    z = inv_diag * r
    d = z.copy()
    rz = r @ z
    for it in range(max_iter + 1):
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x
        if it == max_iter:
            break
        Ad = A @ d
        dAd = d @ Ad
        if dAd <= 0:
            raise SolverError("matrix is not positive definite", res, it)
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        z = inv_diag * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise SolverError("conjugate gradients did not converge", res, max_iter)


def stiffness(points: np.ndarray, triangles: np.ndarray, n: int | None = None) -> sp.csr_matrix:
    area, grads = p1_gradients(points, triangles)
    local = area[:, None, None] * np.einsum("mia,mja->mij", grads, grads)
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    n = points.shape[0] if n is None else n
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


@dataclass
class OmegaQuadrature:
    """Geometry and quadrature data on the deformed omega cells."""

    cells: np.ndarray  # indices of omega cells
    triangles: np.ndarray  # (Mo, 3)
    area: np.ndarray  # (Mo,)
    grads: np.ndarray  # (Mo, 3, 2)
    points: np.ndarray  # (Mo, 3, 2) quadrature nodes

    @classmethod
    def build(cls, mesh: ReferenceMesh, phi: np.ndarray) -> "OmegaQuadrature":
        phi = np.asarray(phi, dtype=float)
        cells = np.flatnonzero(mesh.omega_cells)
        tris = mesh.triangles[cells]
        area, grads = p1_gradients(phi, tris)
        ref_area, _ = p1_gradients(mesh.vertices, tris)
        if np.any(area <= DET_TOL * ref_area):
            raise AdmissibilityError("deformed shape has a folded or collapsed cell")
        points = np.einsum("qk,mka->mqa", MIDPOINT_BASIS, phi[tris])
        return cls(cells, tris, area, grads, points)

    @property
    def weights(self) -> np.ndarray:
        return np.repeat(self.area[:, None] / 3.0, 3, axis=1)

    def values(self, nodal: np.ndarray) -> np.ndarray:
        """Nodal P1 field at the quadrature nodes, ``(Mo, 3)``."""
        return nodal[self.triangles] @ MIDPOINT_BASIS.T

    def gradient(self, nodal: np.ndarray) -> np.ndarray:
        """Cell-wise gradient of a nodal P1 field, ``(Mo, 2)``."""
        return np.einsum("mk,mka->ma", nodal[self.triangles], self.grads)

    def integrand_args(self, u: np.ndarray):
        """Flattened ``(x, u, z)`` at all quadrature nodes."""
        x = self.points.reshape(-1, 2)
        uq = self.values(u).ravel()
        z = np.repeat(self.gradient(u), 3, axis=0)
        return x, uq, z

    def scatter(self, local: np.ndarray, n: int) -> np.ndarray:
        """Sum cell-local vertex contributions ``(Mo, 3[, d])`` into a nodal array."""
        if local.ndim == 2:
            return np.bincount(self.triangles.ravel(), weights=local.ravel(), minlength=n)
        out = np.zeros((n, local.shape[2]))
        for a in range(local.shape[2]):
            out[:, a] = np.bincount(self.triangles.ravel(), weights=local[:, :, a].ravel(), minlength=n)
        return out


def _solve_dirichlet(mesh: ReferenceMesh, quad: OmegaQuadrature, load: np.ndarray, tol, max_iter) -> np.ndarray:
    n = mesh.n_vertices
    dofs = mesh.shape_interior_vertices()
    out = np.zeros(n)
    if dofs.size == 0:
        return out
    K = stiffness_on(quad, n)
    system = SparseSystem(K[dofs][:, dofs], load[dofs])
    out[dofs] = cg_solve(system, tol, max_iter)
    return out


def stiffness_on(quad: OmegaQuadrature, n: int) -> sp.csr_matrix:
    local = quad.area[:, None, None] * np.einsum("mia,mja->mij", quad.grads, quad.grads)
    rows = np.repeat(quad.triangles, 3, axis=1).ravel()
    cols = np.tile(quad.triangles, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def load_vector(quad: OmegaQuadrature, n: int, problem: CostIntegrand) -> np.ndarray:
    fq = problem.f(quad.points.reshape(-1, 2)).reshape(-1, 3)
    local = (quad.weights * fq) @ MIDPOINT_BASIS
    return quad.scatter(local, n)


def solve_state(mesh: ReferenceMesh, phi: np.ndarray, problem: CostIntegrand,
                tol: float = SOLVER_TOL, max_iter: int | None = None) -> np.ndarray:
    """Nodal values of the discrete Poisson solution on the deformed shape (zero elsewhere)."""
    quad = OmegaQuadrature.build(mesh, phi)
    return _solve_dirichlet(mesh, quad, load_vector(quad, mesh.n_vertices, problem), tol, max_iter)


def adjoint_load(quad: OmegaQuadrature, n: int, u: np.ndarray, problem: CostIntegrand) -> np.ndarray:
    x, uq, z = quad.integrand_args(u)
    ju = problem.j_u(x, uq, z).reshape(-1, 3)
    jz = problem.j_z(x, uq, z).reshape(-1, 3, 2)
    w = quad.weights
    local = (w * ju) @ MIDPOINT_BASIS
    local += np.einsum("mq,mqa,mka->mk", w, jz, quad.grads)
    return quad.scatter(local, n)


def solve_adjoint(mesh: ReferenceMesh, phi: np.ndarray, u: np.ndarray, problem: CostIntegrand,
                  tol: float = SOLVER_TOL, max_iter: int | None = None) -> np.ndarray:
    quad = OmegaQuadrature.build(mesh, phi)
    load = adjoint_load(quad, mesh.n_vertices, u, problem)
    return _solve_dirichlet(mesh, quad, load, tol, max_iter)


def volume_of(quad: OmegaQuadrature) -> float:
    return float(quad.area.sum())


def evaluate_cost(mesh: ReferenceMesh, phi: np.ndarray, u: np.ndarray, problem: CostIntegrand,
                  penalty: PenaltyConfig | None = None) -> float:
    quad = OmegaQuadrature.build(mesh, phi)
    x, uq, z = quad.integrand_args(u)
    value = float(np.sum(quad.weights.ravel() * problem.j(x, uq, z)))
    if penalty is not None:
        value += penalty_value_and_derivative(volume_of(quad), penalty)[0]
    return value


def energy(mesh: ReferenceMesh, phi: np.ndarray, problem: CostIntegrand,
           penalty: PenaltyConfig | None = None, tol: float = SOLVER_TOL) -> float:
    """State solve followed by cost evaluation."""
    u = solve_state(mesh, phi, problem, tol)
    return evaluate_cost(mesh, phi, u, problem, penalty)
