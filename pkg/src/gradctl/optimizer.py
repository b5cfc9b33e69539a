"""
Projected gradient with Armijo backtracking and penalty continuation.

Steps are measured in the discrete L2(Lambda) metric; trial steps start from
a Barzilai-Borwein estimate.  A trial control whose state blows up is
rejected like a failed Armijo test, so iterates never leave the set of
controls with global-in-time states.
"""
from dataclasses import dataclass, field
import logging

import numpy as np

from .constraints import eval_constraints, penalty_value_and_duals, recover_multipliers
from .linearized import reduced_gradient, tikhonov_value, tracking_value
from .state_solver import solve_state

log = logging.getLogger(__name__)


class InitializationError(RuntimeError):
    pass


def project_box(u, lower, upper):
    return np.minimum(np.maximum(u, lower), upper)


def default_control(spec):
    """Box midpoint, or zero when zero is admissible."""
    lo, up = spec.lower, spec.upper
    if np.all((lo <= 0) & (up >= 0)):
        return spec.zero_control()
    mid = np.where(np.isfinite(lo) & np.isfinite(up), 0.5 * (lo + up), 0.0)
    return project_box(mid, lo, up)


@dataclass(eq=False)
class Evaluation:
    u: np.ndarray
    outcome: object
    value: float
    tracking: float = np.nan
    tikhonov: float = np.nan
    penalty: float = np.nan
    max_violation: float = np.nan
    running: np.ndarray = None
    terminal: np.ndarray = None

    @property
    def feasible_global(self):
        return self.outcome.is_global


class ReducedObjective:
    """u -> tracking + Tikhonov + penalty(c), with blow-up mapped to +inf."""

    def __init__(self, spec, c=None):
        self.spec = spec
        cs = spec.constraints
        self.c = (cs.penalty if cs is not None else 0.0) if c is None else c

    def evaluate(self, u):
        spec = self.spec
        outcome = solve_state(spec, u)
        if not outcome.is_global:
            return Evaluation(u, outcome, np.inf)
        traj = outcome.trajectory
        tr = tracking_value(spec, traj)
        tk = tikhonov_value(spec, u)
        pen, running, terminal = penalty_value_and_duals(spec, traj, self.c)
        viol = eval_constraints(spec, traj).max_violation
        return Evaluation(u, outcome, tr + tk + pen, tr, tk, pen, viol, running, terminal)

    def gradient(self, ev):
        g, _ = reduced_gradient(self.spec, ev.u, ev.outcome.trajectory, ev.running, ev.terminal)
        return g


@dataclass(eq=False)
class LineSearchResult:
    step: float
    evaluation: Evaluation
    stagnated: bool
    trials: int


def line_search(objective, current, grad, step=1.0, options=None):
    """Backtracking along the projection arc u(s) = P(u - s grad).

    Accepts the first ``s`` with
    ``f(u(s)) <= f(u) - armijo * <grad, u - u(s)>``; blown-up trials count as
    ``+inf`` and are halved away.
    """
    spec = objective.spec
    opts = spec.optimizer if options is None else options
    u = current.u
    if not np.any(grad):
        return LineSearchResult(0.0, current, True, 0)
    s = step
    for trial in range(opts.max_halvings + 1):
        new_u = project_box(u - s * grad, spec.lower, spec.upper)
        decrease = spec.control_inner(grad, u - new_u)
        if decrease <= 0:
            return LineSearchResult(0.0, current, True, trial)
        ev = objective.evaluate(new_u)
        if np.isfinite(ev.value) and ev.value <= current.value - opts.armijo * decrease:
            return LineSearchResult(s, ev, False, trial + 1)
        s *= opts.backtrack
    return LineSearchResult(0.0, current, True, opts.max_halvings + 1)


@dataclass(eq=False)
class OptimizeResult:
    u: np.ndarray
    trajectory: object
    multipliers: object
    penalty: float
    history: list = field(default_factory=list)
    reason: str = ""
    max_violation: float = 0.0
    pg_residual: float = np.nan

    @property
    def value(self):
        return self.history[-1]["obj"] if self.history else np.nan


def pg_residual(spec, u, grad):
    return float(np.max(np.abs(u - project_box(u - grad, spec.lower, spec.upper)), initial=0.0))


def _minimize(objective, ev, history, options, c):
    spec = objective.spec
    grad = objective.gradient(ev)
    step = 1.0
    reason = "max_iter"
    for it in range(options.max_iter + 1):
        res = pg_residual(spec, ev.u, grad)
        history.append({"iter": len(history), "obj": ev.value, "penalty": ev.penalty,
                        "viol": ev.max_violation, "pg_residual": res,
                        "step": step if it else 0.0, "c": c})
        if res <= options.tol:
            reason = "converged"
            break
        if it == options.max_iter:
            break
        ls = line_search(objective, ev, grad, step, options)
        if ls.stagnated:
            reason = "stagnation"
            break
        new_grad = objective.gradient(ls.evaluation)
        s = ls.evaluation.u - ev.u
        yv = new_grad - grad
        sy = spec.control_inner(s, yv)
        step = spec.control_inner(s, s) / sy if sy > 0 else 2.0 * ls.step
        step = float(np.clip(step, 1e-12, 1e12))
        ev, grad = ls.evaluation, new_grad
        history[-1]["step"] = ls.step
    return ev, grad, reason


def optimize(spec, u_init=None, c0=None):
    """Penalized projected-gradient minimization with continuation in ``c``."""
    opts = spec.optimizer
    cs = spec.constraints
    u = default_control(spec) if u_init is None else spec.check_control(u_init)
    u = project_box(u, spec.lower, spec.upper)
    c = (cs.penalty if c0 is None else c0) if cs is not None else 0.0

    objective = ReducedObjective(spec, c)
    ev = objective.evaluate(u)
    if not ev.feasible_global:
        raise InitializationError(
            "initial control has no global-in-time state (T_estimate="
            f"{ev.outcome.T_estimate}); a feasible control-state pair is required")
    history = []
    while True:
        ev, grad, reason = _minimize(objective, ev, history, opts, c)
        log.info("c=%.3g obj=%.6e viol=%.3e reason=%s", c, ev.value, ev.max_violation, reason)
        if cs is None or ev.max_violation <= cs.target_violation or c * cs.factor > cs.penalty_max:
            break
        c *= cs.factor
        objective = ReducedObjective(spec, c)
        ev = objective.evaluate(ev.u)
    traj = ev.outcome.trajectory
    mult = recover_multipliers(spec, traj, c) if cs is not None else None
    return OptimizeResult(ev.u, traj, mult, c, history, reason, ev.max_violation,
                          pg_residual(spec, ev.u, grad))
