"""Weighted null control of the heat equation with Robin boundary control."""

from heatnull._kernels import BACKEND
from heatnull.carleman import CarlemanReport, carleman_sweep, eval_carleman_neumann, eval_carleman_thm1
from heatnull.geometry import Domain, GeometryError, SpaceTimeGrid, build_grid
from heatnull.heat_ops import (
    Field,
    Nonlinearity,
    ProblemSpec,
    TraceField,
    apply_Lstar,
    op_G,
    op_G_star,
    op_H0,
    op_H0_star,
    solve_adjoint,
    solve_forward,
)
from heatnull.nullcontrol import (
    ControlSolution,
    VariationalSystem,
    assemble_B,
    check_norm_bound,
    check_optimality_residual,
    solve_null_control,
)
from heatnull.semilinear import IterationTrace, Linearization, linearize, solve_semilinear
from heatnull.weights import EtaFunction, WeightSystem, audit_weight_bounds, build_eta, check_weight_bounds

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CarlemanReport",
    "ControlSolution",
    "Domain",
    "EtaFunction",
    "Field",
    "GeometryError",
    "IterationTrace",
    "Linearization",
    "Nonlinearity",
    "ProblemSpec",
    "SpaceTimeGrid",
    "TraceField",
    "VariationalSystem",
    "WeightSystem",
    "apply_Lstar",
    "assemble_B",
    "audit_weight_bounds",
    "build_eta",
    "build_grid",
    "carleman_sweep",
    "check_norm_bound",
    "check_optimality_residual",
    "check_weight_bounds",
    "eval_carleman_neumann",
    "eval_carleman_thm1",
    "linearize",
    "op_G",
    "op_G_star",
    "op_H0",
    "op_H0_star",
    "solve_adjoint",
    "solve_forward",
    "solve_null_control",
    "solve_semilinear",
]
