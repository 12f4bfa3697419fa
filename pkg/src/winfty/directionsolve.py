"""Steepest-descent direction under the pointwise constraint |DV| <= 1 (spectral norm).

The direction minimises the shape-derivative pairing over P1 fields on the
deformed hold-all mesh.  It is computed with ADMM on the splitting ``DV = q``:
``q`` is projected cell-wise onto the spectral unit ball, ``V`` solves a vector
Laplace problem, and the multiplier takes a dual ascent step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .femcore import stiffness
from .meshkit import ReferenceMesh, p1_gradients, require_admissible
from .shapegrad import ShapeGradient, evaluate_pairing

logger = logging.getLogger(__name__)

ZERO_GRADIENT = 1e-14


def spectral_norms(A: np.ndarray) -> np.ndarray:
    """Largest singular value of each 2x2 matrix in ``A[..., 2, 2]`` (closed form)."""
    a, b, c, d = A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1]
    q = np.hypot(0.5 * (a + d), 0.5 * (c - b))
    r = np.hypot(0.5 * (a - d), 0.5 * (c + b))
    return q + r


def project_spectral_ball(A: np.ndarray) -> np.ndarray:
    """Nearest matrix (Frobenius) with spectral norm <= 1, for one or many 2x2 matrices.

    Splits ``A`` into a scaled rotation (norm ``Q``) plus a scaled reflection
    (norm ``R``); the singular values are ``Q + R`` and ``|Q - R|``, so clipping
    them at one amounts to rescaling the two parts with their angles kept.
    """
    A = np.asarray(A, dtype=float)
    a, b, c, d = A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1]
    E, F = 0.5 * (a + d), 0.5 * (a - d)
    G, H = 0.5 * (c + b), 0.5 * (c - b)
    Q, R = np.hypot(E, H), np.hypot(F, G)
    if np.all(Q + R <= 1.0):
        return A.copy()
    s1 = np.minimum(Q + R, 1.0)
    s2 = np.clip(Q - R, -1.0, 1.0)
    Qs = np.divide(0.5 * (s1 + s2), Q, out=np.ones_like(Q), where=Q > 0)
    Rs = np.divide(0.5 * (s1 - s2), R, out=np.ones_like(R), where=R > 0)
    out = np.empty_like(A)
    out[..., 0, 0] = Qs * E + Rs * F
    out[..., 0, 1] = Rs * G - Qs * H
    out[..., 1, 0] = Rs * G + Qs * H
    out[..., 1, 1] = Qs * E - Rs * F
    return out


@dataclass
class AdmmParams:
    tau0: float = 1.0
    tol: float | None = None  # None: 1e-6 * (1 + max |dual vector|)
    max_iter: int = 2000
    balance: float = 10.0
    kappa: float = 2.0
    adapt: bool = True

    def __post_init__(self):
        if self.tol is not None and self.tol <= 0:
            raise ValueError("admm tol must be positive")
        if self.kappa <= 1:
            raise ValueError("kappa must exceed 1")
        if self.tau0 <= 0:
            raise ValueError("tau0 must be positive")


@dataclass
class AdmmState:
    V: np.ndarray
    q: np.ndarray
    lam: np.ndarray
    tau: float
    R: float = float("inf")
    iterations: int = 0
    converged: bool = False
    history: list = field(default_factory=list, repr=False)


class DirectionProblem:
    """Mesh-dependent operators of the direction subproblem, built once per shape.

    Fields are handled as nodal ``(N, 2)`` arrays; internally the free values
    are stacked component-wise and ``D`` maps them to the flattened cell
    Jacobians ``(M, 2, 2)``.
    """

    def __init__(self, mesh: ReferenceMesh, phi: np.ndarray):
        require_admissible(mesh, phi)
        self.mesh = mesh
        self.n = mesh.n_vertices
        self.m = mesh.n_triangles
        self.area, grads = p1_gradients(np.asarray(phi, dtype=float), mesh.triangles)
        self.free = mesh.free_vertices
        nf = len(self.free)
        col_of = -np.ones(self.n, dtype=np.int64)
        col_of[self.free] = np.arange(nf)
        cols_v = col_of[mesh.triangles]  # (M, 3)
        rows, cols, vals = [], [], []
        cell = np.arange(self.m)
        for a in range(2):
            for b in range(2):
                for k in range(3):
                    keep = cols_v[:, k] >= 0
                    rows.append(4 * cell[keep] + 2 * a + b)
                    cols.append(a * nf + cols_v[keep, k])
                    vals.append(grads[keep, k, b])
        self.D = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(4 * self.m, 2 * nf)
        )
        self.DT = self.D.T.tocsr()
        self.weights = np.repeat(self.area, 4)
        K = stiffness(np.asarray(phi, dtype=float), mesh.triangles)
        lu = spla.splu(K[self.free][:, self.free].tocsc(), permc_spec="MMD_AT_PLUS_A",
                       diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        self._solve = lu.solve
        self.nf = nf

    def pack(self, V: np.ndarray) -> np.ndarray:
        return V[self.free].T.ravel()

    def unpack(self, x: np.ndarray) -> np.ndarray:
        V = np.zeros((self.n, 2))
        V[self.free] = x.reshape(2, self.nf).T
        return V

    def jacobian(self, V: np.ndarray) -> np.ndarray:
        return (self.D @ self.pack(V)).reshape(self.m, 2, 2)

    def divergence_adjoint(self, Q: np.ndarray) -> np.ndarray:
        """Nodal vector of ``int Q : D(phi_k e_a)`` over all cells (zero on the boundary of D)."""
        return self.unpack(self.DT @ (self.weights * Q.reshape(-1)))

    def l2(self, Q: np.ndarray) -> float:
        return float(np.sqrt(np.dot(self.weights, Q.reshape(-1) ** 2)))

    def solve_packed(self, rhs: np.ndarray) -> np.ndarray:
        """Vector Laplace solve on stacked free values."""
        x = self._solve(np.ascontiguousarray(rhs.reshape(2, self.nf).T))
        return x.T.ravel()

    def solve_vector_laplace(self, rhs: np.ndarray) -> np.ndarray:
        return self.unpack(self.solve_packed(self.pack(rhs)))


def admm_direction(mesh: ReferenceMesh, phi: np.ndarray, grad: ShapeGradient,
                   params: AdmmParams | None = None, warm_start: AdmmState | None = None,
                   operators: DirectionProblem | None = None) -> tuple[np.ndarray, AdmmState]:
    """Approximate minimiser of ``grad[V]`` subject to ``|DV| <= 1`` cell-wise.

    The returned field is rescaled to satisfy the constraint exactly and is
    replaced by zero if its pairing with ``grad`` is positive.
    """
    params = params or AdmmParams()
    ops = operators or DirectionProblem(mesh, phi)
    g = grad.dual_vector
    M = mesh.n_triangles
    gmax = grad.max_norm()
    tol = params.tol if params.tol is not None else 1e-6 * (1.0 + gmax)

    if warm_start is not None and warm_start.V.shape == (ops.n, 2) and warm_start.lam.shape == (M, 2, 2):
        x = ops.pack(warm_start.V)
        lam = warm_start.lam.reshape(-1).copy()
        tau = warm_start.tau
    else:
        x = np.zeros(2 * ops.nf)
        lam = np.zeros(4 * M)
        tau = params.tau0
    q = np.zeros(4 * M)

    if gmax < ZERO_GRADIENT:
        V = np.zeros((ops.n, 2))
        return V, AdmmState(V, q.reshape(M, 2, 2), np.zeros((M, 2, 2)), tau, R=0.0, converged=True)

    gx = ops.pack(g)
    w = ops.weights
    DV = ops.D @ x
    R = np.inf
    k = 0
    history = []
    while k < params.max_iter:
        if R < tol:
            break
        q = project_spectral_ball((DV + lam / tau).reshape(M, 2, 2)).reshape(-1)
        x = ops.solve_packed(ops.DT @ (w * (q - lam / tau)) - gx / tau)
        DV_new = ops.D @ x
        gap = DV_new - q
        lam = lam + tau * gap
        primal = np.sqrt(np.dot(w, gap * gap))
        change = np.sqrt(np.dot(w, (DV_new - DV) ** 2))
        R = np.hypot(tau * primal, change)
        DV = DV_new
        k += 1
        history.append(R)
        if params.adapt:
            dual = tau * change
            if primal > params.balance * dual:
                tau *= params.kappa
            elif dual > params.balance * primal:
                tau /= params.kappa
    converged = bool(R < tol)
    if not converged:
        logger.debug("ADMM stopped at max_iter=%d with R=%.3e (tol %.3e)", params.max_iter, R, tol)

    V = ops.unpack(x)
    state = AdmmState(V.copy(), q.reshape(M, 2, 2), lam.reshape(M, 2, 2), tau,
                      R=float(R), iterations=k, converged=converged, history=history)
    worst = float(spectral_norms(DV.reshape(M, 2, 2)).max(initial=0.0))
    if worst > 1.0:
        V = V / worst
    if evaluate_pairing(grad, V) > 0.0:
        V = np.zeros_like(V)
    return V, state


def dual_norm(grad: ShapeGradient, mesh: ReferenceMesh, phi: np.ndarray, params: AdmmParams | None = None) -> float:
    """``-grad[V*]``: approximate norm of the shape derivative over the constraint set."""
    V, _ = admm_direction(mesh, phi, grad, params)
    return -evaluate_pairing(grad, V)
