"""
Sensitivities and discrete adjoints along a converged trajectory.

The stacked linearization is block lower-bidiagonal in time with diagonal
blocks ``L_k = M/tau + K(xi(y_k)) + B(y_k) - F'(y_k)`` and sub-diagonal
``-M/tau``.  The adjoint solve is its exact transpose, so the reduced
gradient is the exact derivative of the discrete objective.

Dual data (running and terminal) are full-length nodal vectors; Dirichlet
entries are ignored.  Running duals are densities in time: the objective
derivative with respect to ``y_k`` is ``tau * running_k`` (plus ``terminal``
at ``k = N``).
"""
import numpy as np
from scipy.sparse.linalg import splu

from .model import apply_B, apply_B_adjoint
from .state_solver import step_jacobian


class LinearizationError(RuntimeError):
    pass


class LinearizedSystem:
    """Per-step operators of the linearization at ``traj`` (factorized lazily)."""

    def __init__(self, spec, traj):
        if len(traj) != spec.N + 1:
            raise ValueError("linearization needs a global trajectory")
        self.spec = spec
        self.traj = traj
        self._ops = {}
        self._lus = {}

    def operator(self, k):
        if k not in self._ops:
            self._ops[k] = step_jacobian(self.spec, self.traj.states[k])
        return self._ops[k]

    def lu(self, k):
        if k not in self._lus:
            try:
                self._lus[k] = splu(self.operator(k))
            except RuntimeError as exc:
                raise LinearizationError(f"linearized operator singular at step {k}: {exc}")
        return self._lus[k]

    def forward(self, loads):
        """Solve L_k z_k = (M/tau) z_{k-1} + loads_k, z_0 = 0; loads (N, n_nodes)."""
        spec, mesh = self.spec, self.spec.mesh
        z = np.zeros((spec.N + 1, mesh.n_nodes))
        prev = np.zeros(len(mesh.free))
        for k in range(1, spec.N + 1):
            rhs = spec.mass_free @ prev / spec.tau + np.asarray(loads[k - 1])[mesh.free]
            prev = self.lu(k).solve(rhs)
            z[k, mesh.free] = prev
        return z

    def backward(self, running, terminal=None):
        """Transposed solve; returns w for steps 1..N as (N, n_nodes)."""
        spec, mesh = self.spec, self.spec.mesh
        running = np.asarray(running, dtype=float)
        if running.shape != (spec.N, mesh.n_nodes):
            raise ValueError(f"running duals must have shape {(spec.N, mesh.n_nodes)}")
        w = np.zeros((spec.N, mesh.n_nodes))
        nxt = np.zeros(len(mesh.free))
        for k in range(spec.N, 0, -1):
            rhs = running[k - 1][mesh.free] + spec.mass_free.T @ nxt / spec.tau
            if k == spec.N and terminal is not None:
                rhs = rhs + np.asarray(terminal)[mesh.free] / spec.tau
            nxt = self.lu(k).solve(rhs, trans="T")
            w[k - 1, mesh.free] = nxt
        return w

    def apply(self, z):
        """Stacked forward operator applied to a trajectory-shaped z with z_0 = 0."""
        spec, mesh = self.spec, self.spec.mesh
        out = np.zeros((spec.N, mesh.n_nodes))
        for k in range(1, spec.N + 1):
            out[k - 1, mesh.free] = (self.operator(k) @ z[k, mesh.free]
                                     - spec.mass_free @ z[k - 1, mesh.free] / spec.tau)
        return out


def _system(spec, traj, system):
    return system if system is not None else LinearizedSystem(spec, traj)


def solve_sensitivity(spec, traj, v, system=None):
    """Directional derivative S'(u)v as a trajectory-shaped array (z_0 = 0)."""
    return _system(spec, traj, system).forward(apply_B(spec, v))


def solve_adjoint(spec, traj, running, terminal=None, system=None):
    return _system(spec, traj, system).backward(running, terminal)


def tracking_duals(spec, traj):
    """Running duals M(y_k - yd_k) of the tracking term, k = 1..N."""
    diff = traj.states[1:] - spec.targets[1:]
    return (spec.mass @ diff.T).T


def tracking_value(spec, traj):
    diff = traj.states[1:] - spec.targets[1:]
    return 0.5 * spec.tau * float(np.sum(diff * (spec.mass @ diff.T).T))


def tikhonov_value(spec, u):
    return 0.5 * spec.gamma * spec.control_inner(u, u)


def reduced_gradient(spec, u, traj, running=None, terminal=None, system=None):
    """gamma u + B* w, the L2(Lambda)-gradient of the discrete objective.

    ``running``/``terminal`` are extra dual data (e.g. constraint penalty
    derivatives) added to the tracking duals.
    """
    u = spec.check_control(u)
    duals = tracking_duals(spec, traj)
    if running is not None:
        duals = duals + running
    w = solve_adjoint(spec, traj, duals, terminal, system=system)
    return spec.gamma * u + apply_B_adjoint(spec, w), w
