"""
Implicit Euler / Newton solver for

    dy/dt - div(xi(y) mu grad y) = Bu + F(y),   y(0) = y0,

with homogeneous Dirichlet data.  A step that cannot be completed is
reported as blow-up; the last accepted time is a certified lower bound for
the maximal existence time of the discrete trajectory.
"""
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from .geometry import assemble_matrix, assemble_vector, mass_local, nodal_gradient, stiffness_local
from .model import EvaluationError, F_jacobian_local, apply_B, eval_F, eval_xi

GLOBAL = "global"
BLOWUP = "blowup"
NEWTON_DIVERGED = "newton_diverged"
NORM_EXCEEDED = "norm_exceeded"


class StepFailure(RuntimeError):
    def __init__(self, reason, message=""):
        super().__init__(f"{reason}: {message}" if message else reason)
        self.reason = reason


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray     # (K,)
    states: np.ndarray    # (K, n_nodes)

    def __len__(self):
        return len(self.times)

    @property
    def final(self):
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class SolveOutcome:
    status: str
    trajectory: Trajectory
    k_star: int = None
    T_estimate: float = None
    reason: str = None
    newton_iterations: tuple = ()

    @property
    def is_global(self):
        return self.status == GLOBAL


@dataclass(frozen=True, eq=False)
class StepResult:
    y: np.ndarray
    iterations: int
    residual: float


# ---------------------------------------------------------------- operators

def _diffusion_local(spec, y):
    xi, _ = eval_xi(spec.xi, spec.mesh, y)
    return stiffness_local(spec.mesh, xi[:, None, None] * spec.mu_elements)


def _quasilinear_local(spec, y):
    mesh = spec.mesh
    _, dxi = eval_xi(spec.xi, mesh, y)
    flux = np.einsum("ekl,el->ek", spec.mu_elements, nodal_gradient(mesh, y))
    row = np.einsum("eik,ek->ei", mesh.basis_grads, flux) * (mesh.measures * dxi / (mesh.dimension + 1))[:, None]
    return row[:, :, None]


def diffusion_matrix(spec, y, free_only=True):
    """K(xi(y)): stiffness with coefficient xi(mean y) mu per element."""
    return assemble_matrix(spec.mesh, _diffusion_local(spec, y), free_only=free_only)


def quasilinear_matrix(spec, y, free_only=True):
    """Assembled phi -> -div(xi'(y) phi mu grad y) (mean-value quadrature)."""
    k = spec.mesh.dimension + 1
    local = np.broadcast_to(_quasilinear_local(spec, y), (spec.mesh.n_elements, k, k))
    return assemble_matrix(spec.mesh, local, free_only=free_only)


def step_residual(spec, y, y_prev, load, tau=None):
    """Free-node residual M(y - y_prev)/tau + K(xi(y)) y - load - F(y)."""
    tau = spec.tau if tau is None else tau
    mesh = spec.mesh
    y = np.asarray(y, dtype=float)
    Ky = assemble_vector(mesh, np.einsum("eij,ej->ei", _diffusion_local(spec, y), y[mesh.elements]))
    full = (spec.mass @ (y - y_prev)) / tau + Ky - load - eval_F(spec.nonlinearity, mesh, y)
    return full[mesh.free]


def step_jacobian(spec, y, tau=None):
    """Linearized step operator M/tau + K(xi(y)) + B(y) - F'(y) on free nodes."""
    tau = spec.tau if tau is None else tau
    mesh = spec.mesh
    local = (mass_local(mesh) / tau + _diffusion_local(spec, y) + _quasilinear_local(spec, y)
             - F_jacobian_local(spec.nonlinearity, mesh, y))
    return assemble_matrix(mesh, local, free_only=True).tocsc()


def _norm(r):
    with np.errstate(over="ignore", invalid="ignore"):
        n = float(np.linalg.norm(r))
    return n if np.isfinite(n) else np.inf


def symmetric_part_is_pd(A):
    """Whether (A + A^T)/2 is positive definite.

    Sparse LU with a symmetric ordering and diagonal pivots is an LDL^T
    factorization, so by Sylvester's law the pivot signs give the inertia.
    """
    S = (0.5 * (A + A.T)).tocsc()
    try:
        lu = splu(S, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
    except RuntimeError:
        return False
    if not np.array_equal(lu.perm_r, lu.perm_c):
        # off-diagonal pivoting happened; fall back to a dense check
        return bool(np.linalg.eigvalsh(S.toarray())[0] > 0)
    d = lu.U.diagonal()
    return bool(np.all(np.isfinite(d)) and np.all(d > 0))


def _safe_residual(spec, y, y_prev, load, tau):
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return _norm(step_residual(spec, y, y_prev, load, tau))
    except EvaluationError:
        return np.inf


# ---------------------------------------------------------------- stepping

def step(spec, y_prev, load, tau=None, options=None):
    """One implicit Euler step solved by damped Newton.

    Raises :class:`StepFailure` with reason ``newton_diverged`` or
    ``norm_exceeded``.  A root at which the symmetric part of the step
    operator is not positive definite is rejected as ``newton_diverged``.
    As tau -> 0 the operator tends to M/tau, so such a root is not on the
    branch continued from ``y_prev``; near a finite-time blow-up Newton
    otherwise lands on spurious oscillating roots.
    """
    tau = spec.tau if tau is None else tau
    opts = spec.solver if options is None else options
    mesh = spec.mesh
    y = np.array(y_prev, dtype=float)
    load = np.asarray(load, dtype=float)
    scale = _norm((spec.mass @ y_prev)[mesh.free] / tau) + _norm(load[mesh.free])

    res = _safe_residual(spec, y, y_prev, load, tau)
    if not np.isfinite(res):
        raise StepFailure(NEWTON_DIVERGED, "residual not finite at the initial guess")
    scale = max(scale, res)
    for it in range(opts.newton_max_iter + 1):
        if res <= opts.newton_tol * scale:
            if np.max(np.abs(y)) > opts.blowup_threshold:
                raise StepFailure(NORM_EXCEEDED, f"|y|_inf = {np.max(np.abs(y)):.3e}")
            if not symmetric_part_is_pd(step_jacobian(spec, y, tau)):
                raise StepFailure(NEWTON_DIVERGED, "converged root is off the continued branch")
            return StepResult(y, it, res)
        if it == opts.newton_max_iter:
            break
        r = step_residual(spec, y, y_prev, load, tau)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                delta = splu(step_jacobian(spec, y, tau)).solve(-r)
        except (RuntimeError, EvaluationError) as exc:
            raise StepFailure(NEWTON_DIVERGED, f"singular Newton system ({exc})")
        if not np.all(np.isfinite(delta)):
            raise StepFailure(NEWTON_DIVERGED, "non-finite Newton update")
        alpha = 1.0
        for _ in range(opts.max_halvings + 1):
            trial = y.copy()
            trial[mesh.free] += alpha * delta
            trial_res = _safe_residual(spec, trial, y_prev, load, tau)
            if trial_res <= (1.0 - 1e-4 * alpha) * res:
                break
            alpha *= 0.5
        else:
            raise StepFailure(NEWTON_DIVERGED, f"line search failed at iteration {it}")
        y, res = trial, trial_res
        if np.max(np.abs(y)) > opts.blowup_threshold:
            raise StepFailure(NORM_EXCEEDED, f"|y|_inf = {np.max(np.abs(y)):.3e}")
    raise StepFailure(NEWTON_DIVERGED, f"no convergence in {opts.newton_max_iter} iterations")


def solve_state(spec, u):
    """March the state equation; failures become a ``blowup`` outcome."""
    loads = apply_B(spec, u)
    states = [np.array(spec.y0, dtype=float)]
    iterations = []
    for k in range(1, spec.N + 1):
        try:
            result = step(spec, states[-1], loads[k - 1])
        except StepFailure as exc:
            traj = Trajectory(spec.times[:k].copy(), np.array(states))
            return SolveOutcome(BLOWUP, traj, k_star=k, T_estimate=float(spec.times[k - 1]),
                                reason=exc.reason, newton_iterations=tuple(iterations))
        states.append(result.y)
        iterations.append(result.iterations)
    traj = Trajectory(spec.times.copy(), np.array(states))
    return SolveOutcome(GLOBAL, traj, T_estimate=float(spec.T),
                        newton_iterations=tuple(iterations))


def step_residuals(spec, u, traj):
    """Relative nonlinear residual of every step of ``traj`` under control ``u``."""
    loads = apply_B(spec, u)
    out = []
    for k in range(1, len(traj)):
        y, y_prev = traj.states[k], traj.states[k - 1]
        scale = _norm((spec.mass @ y_prev)[spec.mesh.free] / spec.tau) + _norm(loads[k - 1][spec.mesh.free])
        out.append(_norm(step_residual(spec, y, y_prev, loads[k - 1])) / max(scale, 1e-300))
    return np.array(out)


def global_existence_diagnostic(spec, traj, q=2.0):
    """Realized bounds of a global trajectory.

    ``C`` is ``sup_k ||grad y_k||_{L^q}`` over all time nodes, ``M`` the
    discrete L2-in-time norm of the F load (l1 over nodes, i.e. the L1 norm
    of F for sign-definite F) over the steps 1..N.
    """
    from .constraints import gradient_q_norm

    qn = np.array([gradient_q_norm(spec.mesh, y, q) ** (1.0 / q) for y in traj.states])
    loads = np.array([np.sum(np.abs(eval_F(spec.nonlinearity, spec.mesh, y)))
                      for y in traj.states[1:]])
    M = float(np.sqrt(spec.tau * np.sum(loads ** 2)))
    return {
        "q": float(q),
        "sup_grad_q_norm": float(qn.max()),
        "argmax_time": float(traj.times[int(qn.argmax())]),
        "F_load_l2_time": M,
        "max_abs_state": float(np.max(np.abs(traj.states))),
    }
