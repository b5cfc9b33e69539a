"""Optimal control of quasilinear parabolic equations with gradient state constraints."""
from .geometry import Mesh, build_mesh
from .model import ProblemSpec, apply_B, apply_B_adjoint
from .state_solver import SolveOutcome, Trajectory, solve_state
from .linearized import reduced_gradient, solve_adjoint, solve_sensitivity
from .constraints import ConstraintSpec, eval_constraints, recover_multipliers
from .optimizer import optimize
from .kkt import check_kkt, check_slater

__all__ = [
    "Mesh", "build_mesh", "ProblemSpec", "apply_B", "apply_B_adjoint",
    "SolveOutcome", "Trajectory", "solve_state",
    "reduced_gradient", "solve_adjoint", "solve_sensitivity",
    "ConstraintSpec", "eval_constraints", "recover_multipliers",
    "optimize", "check_kkt", "check_slater",
]
