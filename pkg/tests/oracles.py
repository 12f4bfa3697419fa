"""Independent reference computations shared by the unit and acceptance tests."""
import numpy as np

from winfty.femcore import solve_state
from winfty.meshkit import generate_disk_in_square, p1_gradients, signed_areas
from winfty.problemdefs import ConstantSource

# degree-4 symmetric rule on triangles (barycentric nodes, weights summing to 1)
_A1, _B1, _W1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_A2, _B2, _W2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
QUAD4_NODES = np.array([[_A1, _A1, _B1], [_A1, _B1, _A1], [_B1, _A1, _A1],
                        [_A2, _A2, _B2], [_A2, _B2, _A2], [_B2, _A2, _A2]])
QUAD4_WEIGHTS = np.array([_W1] * 3 + [_W2] * 3)


def disk_l2_error(n_rings, radius=1.0, source=1.0):
    mesh = generate_disk_in_square(n_rings, radius)
    u = solve_state(mesh, mesh.identity(), ConstantSource(source))
    tris = mesh.triangles[mesh.omega_cells]
    area = signed_areas(mesh.vertices, tris)
    x = np.einsum("qk,mka->mqa", QUAD4_NODES, mesh.vertices[tris])
    exact = source * (radius**2 - np.einsum("mqa,mqa->mq", x, x)) / 4
    uh = u[tris] @ QUAD4_NODES.T
    return np.sqrt(np.sum(area[:, None] * QUAD4_WEIGHTS * (uh - exact) ** 2))


def svd_clip(A):
    U, s, Vt = np.linalg.svd(A)
    return U @ np.diag(np.minimum(s, 1.0)) @ Vt


def conic_oracle(mesh, phi, g):
    """Minimum of the pairing over |DV| <= 1 as a second-order cone program."""
    import cvxpy as cp

    _, grads = p1_gradients(phi, mesh.triangles)
    free = mesh.free_vertices
    X = cp.Variable((len(free), 2))
    col = -np.ones(mesh.n_vertices, dtype=int)
    col[free] = np.arange(len(free))
    cons = []
    for m, tri in enumerate(mesh.triangles):
        ent = [[0, 0], [0, 0]]
        for k, v in enumerate(tri):
            if col[v] < 0:
                continue
            for a in range(2):
                for b in range(2):
                    ent[a][b] = ent[a][b] + X[col[v], a] * grads[m, k, b]
        a, b, c, d = ent[0][0], ent[0][1], ent[1][0], ent[1][1]
        # largest singular value of a 2x2 matrix as a sum of two Euclidean norms
        cons.append(cp.norm(cp.hstack([(a + d) / 2, (c - b) / 2])) + cp.norm(cp.hstack([(a - d) / 2, (c + b) / 2])) <= 1)
    prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(g[free], X))), cons)
    prob.solve(solver="CLARABEL")
    return prob.value


