"""Shape-quality and convergence diagnostics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .directionsolve import spectral_norms
from .meshkit import AdmissibilityError, ReferenceMesh, jacobians
from .problemdefs import TargetShape


def complement_distance(mesh: ReferenceMesh, phi: np.ndarray) -> np.ndarray:
    """Vertex-sampled distance to the complement of the deformed shape.

    Interior vertices get the distance to the nearest deformed shape-boundary
    vertex; every other vertex gets zero.
    """
    phi = np.asarray(phi, dtype=float)
    d = np.zeros(mesh.n_vertices)
    inner = mesh.shape_interior_vertices()
    ring = mesh.shape_boundary_vertices()
    if inner.size and ring.size:
        y = phi[ring]
        # chunked brute force keeps memory bounded
        for start in range(0, inner.size, 2048):
            idx = inner[start : start + 2048]
            diff = phi[idx][:, None, :] - y[None, :, :]
            d[idx] = np.sqrt(np.min(np.einsum("ija,ija->ij", diff, diff), axis=1))
    return d


def discrete_hcd(mesh: ReferenceMesh, phi: np.ndarray, target: TargetShape) -> float:
    phi = np.asarray(phi, dtype=float)
    return float(np.max(np.abs(target.distance(phi) - complement_distance(mesh, phi))))


def deformation_norms(mesh: ReferenceMesh, phi: np.ndarray) -> tuple[float, float]:
    """Max cell spectral norms of ``DPhi`` and of its inverse."""
    J = jacobians(mesh, phi)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0):
        raise AdmissibilityError("singular or orientation-reversing cell Jacobian")
    smax = spectral_norms(J)
    # smallest singular value = det / largest
    return float(smax.max()), float(np.max(smax / det))


def eoc(values, hs) -> list[float]:
    """Pairwise experimental orders of convergence between consecutive rows."""
    values = [float(v) for v in values]
    hs = [float(h) for h in hs]
    if len(values) != len(hs):
        raise ValueError("values and mesh sizes differ in length")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("mesh sizes must be strictly decreasing")
    out = []
    for (e1, e2), (h1, h2) in zip(zip(values, values[1:]), zip(hs, hs[1:])):
        if e1 <= 0 or e2 <= 0:
            raise ValueError(f"EOC undefined for non-positive values ({e1}, {e2})")
        out.append((math.log(e1) - math.log(e2)) / (math.log(h1) - math.log(h2)))
    return out


@dataclass
class ConvergenceRow:
    h: float
    energy: float
    hcd: float
    mu: float | None = None
    eoc_energy: float | None = None
    eoc_hcd: float | None = None


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow] = field(default_factory=list)

    COLUMNS = ("h", "mu", "energy", "eoc_energy", "hcd", "eoc_hcd")

    def add(self, h: float, energy: float, hcd: float, mu: float | None = None) -> None:
        if self.rows and not math.isclose(h, self.rows[-1].h / 2, rel_tol=1e-9):
            raise ValueError("mesh size must halve between rows")
        row = ConvergenceRow(h, energy, hcd, mu)
        if self.rows:
            prev = self.rows[-1]
            row.eoc_energy = _safe_eoc(prev.energy, energy, prev.h, h)
            row.eoc_hcd = _safe_eoc(prev.hcd, hcd, prev.h, h)
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(r.h), _fmt(r.mu), _fmt(r.energy), _fmt(r.eoc_energy), _fmt(r.hcd), _fmt(r.eoc_hcd)])
        return buf.getvalue()


def _safe_eoc(e1, e2, h1, h2):
    try:
        return eoc([e1, e2], [h1, h2])[0]
    except ValueError:
        return None


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))
