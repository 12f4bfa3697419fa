"""Discrete shape derivative as a nodal dual vector.

For a P1 perturbation field ``V`` (zero on the boundary of D) the derivative of
the discrete energy is the volume integral over the deformed shape of

    j div V + j_x . V - j_z . DV^T grad u
      + (DV + DV^T - div V I) grad u . grad p + div(f V) p

evaluated with the same edge-midpoint rule as the cost.  Writing
``V = sum_k V_k phi_k`` turns every term into a covector per vertex.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .femcore import MIDPOINT_BASIS, OmegaQuadrature
from .meshkit import ReferenceMesh, signed_areas
from .problemdefs import CostIntegrand, PenaltyConfig, penalty_value_and_derivative


@dataclass(frozen=True)
class ShapeGradient:
    dual_vector: np.ndarray  # (N, 2)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.dual_vector != 0.0, axis=1))

    def __mul__(self, factor: float) -> "ShapeGradient":
        return ShapeGradient(self.dual_vector * factor)

    __rmul__ = __mul__

    def max_norm(self) -> float:
        return float(np.abs(self.dual_vector).max(initial=0.0))


def evaluate_pairing(grad: ShapeGradient, V: np.ndarray) -> float:
    return float(np.sum(grad.dual_vector * np.asarray(V, dtype=float)))


def volume(mesh: ReferenceMesh, phi: np.ndarray) -> float:
    """Deformed area of the embedded shape."""
    cells = mesh.triangles[mesh.omega_cells]
    return float(signed_areas(np.asarray(phi, dtype=float), cells).sum())


def assemble_shape_gradient(mesh: ReferenceMesh, phi: np.ndarray, u: np.ndarray, p: np.ndarray,
                            problem: CostIntegrand, penalty: PenaltyConfig | None = None) -> ShapeGradient:
    quad = OmegaQuadrature.build(mesh, phi)
    n = mesh.n_vertices
    w = quad.weights  # (Mo, 3)
    G = quad.grads  # (Mo, 3, 2)
    area = quad.area

    x, uq, z = quad.integrand_args(u)
    jq = problem.j(x, uq, z).reshape(-1, 3)
    jx = problem.j_x(x, uq, z).reshape(-1, 3, 2)
    jz = problem.j_z(x, uq, z).reshape(-1, 3, 2)
    fq = problem.f(x).reshape(-1, 3)
    gfq = problem.grad_f(x).reshape(-1, 3, 2)
    pq = quad.values(p)
    gu = quad.gradient(u)
    gp = quad.gradient(p)

    # coefficients of div V (scalar per cell) and of V at quadrature nodes
    div_coeff = (w * jq).sum(axis=1) - area * np.einsum("ma,ma->m", gu, gp) + (w * fq * pq).sum(axis=1)
    if penalty is not None:
        _, coeff = penalty_value_and_derivative(float(area.sum()), penalty)
        div_coeff = div_coeff + coeff * area
    local = div_coeff[:, None, None] * G

    point_coeff = w[:, :, None] * (jx + pq[:, :, None] * gfq)  # (Mo, q, 2)
    local += np.einsum("qk,mqa->mka", MIDPOINT_BASIS, point_coeff)

    # -j_z . DV^T grad u = -(int j_z . grad phi_k) (V_k . grad u)
    jz_int = np.einsum("mq,mqa->ma", w, jz)
    local -= np.einsum("mka,ma->mk", G, jz_int)[:, :, None] * gu[:, None, :]

    # (DV + DV^T) grad u . grad p
    local += area[:, None, None] * (
        np.einsum("mka,ma->mk", G, gu)[:, :, None] * gp[:, None, :]
        + np.einsum("mka,ma->mk", G, gp)[:, :, None] * gu[:, None, :]
    )

    dual = quad.scatter(local, n)
    dual[mesh.boundary_vertices] = 0.0
    return ShapeGradient(dual)
