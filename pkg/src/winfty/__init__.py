"""Shape optimisation by steepest descent in W^{1,inf} on 2D triangular meshes."""
from .descent import DescentConfig, DescentHistory, armijo_search, cascade, optimize_level, run_level
from .directionsolve import AdmmParams, AdmmState, admm_direction, dual_norm, project_spectral_ball
from .femcore import cg_solve, evaluate_cost, solve_adjoint, solve_state
from .meshkit import (
    ReferenceMesh,
    cell_geometry,
    check_admissible,
    generate_annulus_in_square,
    generate_disk_in_square,
    generate_square_in_square,
    radius_ratio,
    read_mesh,
    refine_congruent,
    write_mesh,
)
from .metrics import ConvergenceTable, deformation_norms, discrete_hcd, eoc
from .problemdefs import EXPERIMENTS, PenaltyConfig, TargetShape, experiment1, experiment2, experiment3
from .shapegrad import ShapeGradient, assemble_shape_gradient, evaluate_pairing, volume

__version__ = "0.1.0"

__all__ = [
    "AdmmParams", "AdmmState", "ConvergenceTable", "DescentConfig", "DescentHistory", "EXPERIMENTS",
    "PenaltyConfig", "ReferenceMesh", "ShapeGradient", "TargetShape", "admm_direction", "armijo_search",
    "assemble_shape_gradient", "cascade", "cell_geometry", "cg_solve", "check_admissible", "deformation_norms",
    "discrete_hcd", "dual_norm", "eoc", "evaluate_cost", "evaluate_pairing", "experiment1", "experiment2",
    "experiment3", "generate_annulus_in_square", "generate_disk_in_square", "generate_square_in_square",
    "optimize_level", "project_spectral_ball", "radius_ratio", "read_mesh", "refine_congruent", "run_level",
    "solve_adjoint", "solve_state", "volume", "write_mesh",
]
