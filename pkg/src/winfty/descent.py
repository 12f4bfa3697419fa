"""Steepest descent with Armijo steps in the W^{1,inf} geometry, and the multi-level cascade."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .directionsolve import AdmmParams, AdmmState, DirectionProblem, admm_direction
from .femcore import SOLVER_TOL, SolverError, evaluate_cost, solve_adjoint, solve_state
from .meshkit import AdmissibilityError, ReferenceMesh, check_admissible, refine_congruent
from .metrics import ConvergenceTable, deformation_norms, discrete_hcd
from .problemdefs import CostIntegrand, PenaltyConfig, TargetShape
from .shapegrad import assemble_shape_gradient, evaluate_pairing, volume

logger = logging.getLogger(__name__)


@dataclass
class DescentConfig:
    gamma: float = 1e-4
    t_min_exp: int = 11
    max_steps: int = 15
    levels: int = 4
    mode: str = "cascade"
    stationarity_tol: float | None = None  # None: 1e-8 * (1 + |J|)
    max_converge_steps: int = 1000
    solver_tol: float = SOLVER_TOL
    admm: AdmmParams = field(default_factory=AdmmParams)

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if int(self.t_min_exp) != self.t_min_exp or self.t_min_exp < 1:
            raise ValueError("t_min_exp must be a positive integer")
        if self.max_steps < 0 or self.levels < 1:
            raise ValueError("max_steps must be >= 0 and levels >= 1")
        if self.mode not in ("cascade", "converge"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def t_min(self) -> float:
        return 2.0 ** (-self.t_min_exp)


@dataclass
class StepRecord:
    level: int
    step: int
    h: float
    t_k: float
    energy: float
    energy_before: float
    pairing: float
    dual_norm: float
    hcd: float
    dphi_norm: float
    dphi_inv_norm: float
    volume: float
    admm_iterations: int = 0
    admm_converged: bool = True
    min_det: float = 1.0


@dataclass
class LevelRecord:
    """Snapshot of a level's starting or final shape."""

    level: int
    h: float
    mu: float | None
    energy: float
    hcd: float
    dphi_norm: float
    dphi_inv_norm: float
    volume: float
    steps: int = 0
    k_star: int = 0
    stop_reason: str = ""


@dataclass
class DescentHistory:
    steps: list[StepRecord] = field(default_factory=list)
    level_starts: list[LevelRecord] = field(default_factory=list)
    level_ends: list[LevelRecord] = field(default_factory=list)
    table: ConvergenceTable = field(default_factory=ConvergenceTable)

    CSV_COLUMNS = ("level", "step", "h", "t_k", "energy", "pairing", "dual_norm", "hcd",
                   "dphi_norm", "dphi_inv_norm", "volume")

    def for_level(self, level: int) -> list[StepRecord]:
        return [s for s in self.steps if s.level == level]

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_COLUMNS)]
        for s in self.steps:
            row = [str(s.level), str(s.step)] + [repr(float(getattr(s, c))) for c in self.CSV_COLUMNS[2:]]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


@dataclass
class ArmijoResult:
    t: float
    phi: np.ndarray
    energy: float
    u: np.ndarray


class Rejected(Exception):
    """No dyadic step down to t_min passes the Armijo test."""


class Objective:
    """Energy of a shape: state solve plus cost (and volume penalty)."""

    def __init__(self, mesh: ReferenceMesh, problem: CostIntegrand, penalty: PenaltyConfig | None = None,
                 solver_tol: float = SOLVER_TOL):
        self.mesh = mesh
        self.problem = problem
        self.penalty = penalty
        self.solver_tol = solver_tol

    def state(self, phi):
        return solve_state(self.mesh, phi, self.problem, self.solver_tol)

    def energy(self, phi, u=None) -> tuple[float, np.ndarray]:
        if u is None:
            u = self.state(phi)
        return evaluate_cost(self.mesh, phi, u, self.problem, self.penalty), u


def armijo_search(mesh: ReferenceMesh, phi: np.ndarray, V: np.ndarray, energy0: float, pairing: float,
                  config: DescentConfig, objective: Callable | Objective) -> ArmijoResult:
    """Largest ``t`` in {1/2, 1/4, ..., t_min} with sufficient decrease and an admissible trial map.

    ``objective`` is either an :class:`Objective` or a callable ``phi -> energy``.
    """
    if not pairing < 0:
        raise ValueError(f"Armijo search needs a descent direction, got pairing {pairing}")
    for k in range(1, config.t_min_exp + 1):
        t = 2.0**-k
        trial = phi + t * V
        if not check_admissible(mesh, trial).ok:
            continue
        try:
            if isinstance(objective, Objective):
                e, u = objective.energy(trial)
            else:
                e, u = float(objective(trial)), None
        except (SolverError, AdmissibilityError) as exc:
            logger.debug("trial t=%g failed: %s", t, exc)
            continue
        if e - energy0 <= config.gamma * t * pairing:
            return ArmijoResult(t, trial, e, u)
    raise Rejected(f"no step >= {config.t_min} satisfies the Armijo condition")


@dataclass
class LevelResult:
    phi_kstar: np.ndarray
    phi_final: np.ndarray
    k_star: int
    steps: int
    stop_reason: str
    final_energy: float


def _snapshot(mesh, phi, energy, target, level, mu) -> LevelRecord:
    dn, dni = deformation_norms(mesh, phi)
    hcd = discrete_hcd(mesh, phi, target) if target is not None else float("nan")
    return LevelRecord(level, mesh.h, mu, energy, hcd, dn, dni, volume(mesh, phi))


def optimize_level(mesh: ReferenceMesh, phi0: np.ndarray, config: DescentConfig, problem: CostIntegrand,
                   penalty: PenaltyConfig | None = None, target: TargetShape | None = None,
                   history: DescentHistory | None = None, level: int = 0,
                   converge: bool | None = None) -> tuple[np.ndarray, DescentHistory, int]:
    """Run the descent on one mesh; returns the shape at ``k*``, the history and ``k*``.

    ``k* = min(max_steps, first index whose step was <= t_min)``.  In converge
    mode the iteration continues past ``k*`` until a step ``<= t_min`` is taken;
    :func:`run_level` exposes that final shape as well.
    """
    result, history = run_level(mesh, phi0, config, problem, penalty, target, history, level, converge)
    return result.phi_kstar, history, result.k_star


def run_level(mesh: ReferenceMesh, phi0: np.ndarray, config: DescentConfig, problem: CostIntegrand,
              penalty: PenaltyConfig | None = None, target: TargetShape | None = None,
              history: DescentHistory | None = None, level: int = 0,
              converge: bool | None = None) -> tuple[LevelResult, DescentHistory]:
    history = history if history is not None else DescentHistory()
    converge = (config.mode == "converge") if converge is None else converge
    phi = np.array(phi0, dtype=float)
    report = check_admissible(mesh, phi)
    if not report.ok:
        raise AdmissibilityError("initial deformation is not admissible")

    obj = Objective(mesh, problem, penalty, config.solver_tol)
    energy, u = obj.energy(phi)
    mu = penalty.mu if penalty is not None else None
    start = _snapshot(mesh, phi, energy, target, level, mu)
    history.level_starts.append(start)
    logger.info("level %d h=%.5g start energy=%.6e", level, mesh.h, energy)

    phi_kstar = None
    k_star = 0
    warm: AdmmState | None = None
    step = 0
    reason = "step cap"
    cap = config.max_converge_steps if converge else config.max_steps
    while step < cap:
        p = solve_adjoint(mesh, phi, u, problem, config.solver_tol)
        grad = assemble_shape_gradient(mesh, phi, u, p, problem, penalty)
        ops = DirectionProblem(mesh, phi)
        V, warm = admm_direction(mesh, phi, grad, config.admm, warm_start=warm, operators=ops)
        pairing = evaluate_pairing(grad, V)
        dnorm = -pairing
        stol = config.stationarity_tol if config.stationarity_tol is not None else 1e-8 * (1 + abs(energy))
        if dnorm < stol or pairing >= 0:
            reason = "stationary"
            break
        try:
            res = armijo_search(mesh, phi, V, energy, pairing, config, obj)
        except Rejected:
            reason = "armijo rejected"
            break
        # ADMM state was computed for the old shape; its fields remain a good start
        phi, u = res.phi, res.u
        step += 1
        dn, dni = deformation_norms(mesh, phi)
        det_min = float(check_admissible(mesh, phi).determinants.min())
        rec = StepRecord(
            level=level, step=step, h=mesh.h, t_k=res.t, energy=res.energy, energy_before=energy,
            pairing=pairing, dual_norm=dnorm, hcd=discrete_hcd(mesh, phi, target) if target else float("nan"),
            dphi_norm=dn, dphi_inv_norm=dni, volume=volume(mesh, phi),
            admm_iterations=warm.iterations, admm_converged=warm.converged, min_det=det_min,
        )
        history.steps.append(rec)
        logger.info("level %d step %d t=%g energy=%.6e dual=%.3e admm=%d", level, step, res.t, res.energy,
                    dnorm, warm.iterations)
        energy = res.energy
        if phi_kstar is None and step == config.max_steps:
            phi_kstar, k_star = phi.copy(), step
        if res.t <= config.t_min:
            reason = "converged"
            break
    if phi_kstar is None:
        phi_kstar, k_star = phi.copy(), step

    end = _snapshot(mesh, phi, energy, target, level, mu)
    end.steps, end.k_star, end.stop_reason = step, k_star, reason
    history.level_ends.append(end)
    return LevelResult(phi_kstar, phi, k_star, step, reason, energy), history


@dataclass
class CascadeResult:
    history: DescentHistory
    meshes: list[ReferenceMesh]
    final_phis: list[np.ndarray]
    kstar_phis: list[np.ndarray]


def cascade(config: DescentConfig, problem: CostIntegrand, mesh: ReferenceMesh | Callable[[], ReferenceMesh],
            target: TargetShape | None = None, m0: float | None = None,
            mu_schedule: Callable[[float], float] | None = None,
            phi0: np.ndarray | None = None) -> CascadeResult:
    """Multi-level descent: optimise, refine congruently carrying the map at ``k*``, repeat."""
    mesh = mesh() if callable(mesh) else mesh
    phi = mesh.identity() if phi0 is None else np.array(phi0, dtype=float)
    history = DescentHistory()
    meshes, finals, kstars = [], [], []
    for level in range(config.levels):
        penalty = PenaltyConfig(m0, mu_schedule(mesh.h)) if m0 is not None else None
        result, _ = run_level(mesh, phi, config, problem, penalty, target, history, level)
        end = history.level_ends[-1]
        history.table.add(mesh.h, end.energy, end.hcd, penalty.mu if penalty else None)
        meshes.append(mesh)
        finals.append(result.phi_final)
        kstars.append(result.phi_kstar)
        if level + 1 < config.levels:
            mesh, phi = refine_congruent(mesh, result.phi_kstar)
    return CascadeResult(history, meshes, finals, kstars)

