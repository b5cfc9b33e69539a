"""
Gradient state constraints, Moreau-Yosida penalties and multipliers.

Every constraint block maps a state ``y_k`` to an array of residuals ``h``
(feasible iff ``h <= 0``) carrying spatial weights ``w`` (1 for the spatial
average, element measures for per-element bounds, lumped nodal mass for
zero-order bounds).  Time weighting convention, shared by penalty and
multipliers:

* node 0 is not penalized (y_0 does not depend on the control),
* nodes 1..N carry weight tau,
* node N additionally carries a unit-weight atom.

With penalty weight ``c`` the multipliers are ``lam_k = c tau w max(0,h_k)``
and ``atom = c w max(0,h_N)``; they coincide with the penalty derivative.
"""
from dataclasses import dataclass, field

import numpy as np

from .geometry import assemble_vector, lumped_mass, nodal_gradient


def gradient_q_norm(mesh, y, q):
    """sum_e |e| |grad y|_2^q, the q-th power of the L^q norm of grad y."""
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    g = np.linalg.norm(nodal_gradient(mesh, y), axis=-1)
    return float(np.sum(mesh.measures * g ** q))


def q_laplacian(mesh, y, q):
    """Dual vector of -Delta_q y:  q sum_e |e| |grad y|^(q-2) grad y . grad phi_i."""
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    g = nodal_gradient(mesh, y)
    norm = np.linalg.norm(g, axis=-1)
    coef = q * mesh.measures * (norm ** (q - 2) if q != 2 else 1.0)
    local = np.einsum("eik,ek->ei", mesh.basis_grads, coef[:, None] * g)
    return assemble_vector(mesh, local)


def q_laplacian_pairing(mesh, y, z, q):
    return float(q_laplacian(mesh, y, q) @ np.asarray(z, dtype=float))


def _per_time(arr, N, tail, name):
    a = np.asarray(arr, dtype=float)
    try:
        return np.array(np.broadcast_to(a, (N + 1,) + tail))
    except ValueError:
        raise ValueError(f"{name} of shape {a.shape} cannot be broadcast to {(N + 1,) + tail}")


# ------------------------------------------------------------- blocks

@dataclass(frozen=True, eq=False)
class AvgInSpace:
    """||grad y(t)||_{L^q}^q <= g_avg(t) at every time node."""
    q: float
    bound: object
    name = "avg_in_space"

    def setup(self, spec):
        if self.q < 2:
            raise ValueError(f"q must be >= 2, got {self.q}")
        b = _per_time(self.bound, spec.N, (), "g_avg")
        if np.any(b <= 0):
            raise ValueError("g_avg must be strictly positive")
        return b

    def weights(self, mesh):
        return np.ones(())

    def residual(self, mesh, y, bound_k):
        return np.asarray(gradient_q_norm(mesh, y, self.q) - bound_k)

    def dual(self, mesh, y, coef):
        return float(coef) * q_laplacian(mesh, y, self.q)

    def linearized(self, mesh, y, z):
        return np.asarray(q_laplacian_pairing(mesh, y, z, self.q))


@dataclass(frozen=True, eq=False)
class PointwiseQ:
    """|grad y|_2^2 <= g per element and time node."""
    bound: object
    name = "pointwise"

    def setup(self, spec):
        b = _per_time(self.bound, spec.N, (spec.mesh.n_elements,), "g")
        if np.any(b <= 0):
            raise ValueError("g must be strictly positive")
        return b

    def weights(self, mesh):
        return mesh.measures

    def residual(self, mesh, y, bound_k):
        g = nodal_gradient(mesh, y)
        return np.sum(g * g, axis=-1) - bound_k

    def dual(self, mesh, y, coef):
        g = nodal_gradient(mesh, y)
        local = np.einsum("eik,ek->ei", mesh.basis_grads, 2.0 * np.asarray(coef)[:, None] * g)
        return assemble_vector(mesh, local)

    def linearized(self, mesh, y, z):
        return 2.0 * np.sum(nodal_gradient(mesh, y) * nodal_gradient(mesh, z), axis=-1)


@dataclass(frozen=True, eq=False)
class Componentwise:
    """g_low <= d_i y <= g_up per element, time node and component.

    Residual layout ``(2, n_elements, d)``: index 0 is the upper bound, 1 the
    lower bound, so multipliers form the Jordan pair (nu+, nu-).
    """
    lower: object
    upper: object
    name = "componentwise"

    def setup(self, spec):
        tail = (spec.mesh.n_elements, spec.mesh.dimension)
        lo = _per_time(self.lower, spec.N, tail, "g_low")
        up = _per_time(self.upper, spec.N, tail, "g_up")
        if np.any(lo > up):
            raise ValueError("componentwise bounds need g_low <= g_up")
        return np.stack([up, lo], axis=1)

    def weights(self, mesh):
        return np.broadcast_to(mesh.measures[None, :, None], (2, mesh.n_elements, mesh.dimension))

    def residual(self, mesh, y, bound_k):
        g = nodal_gradient(mesh, y)
        return np.stack([g - bound_k[0], bound_k[1] - g])

    def dual(self, mesh, y, coef):
        coef = np.asarray(coef)
        signed = coef[0] - coef[1]
        return assemble_vector(mesh, np.einsum("eik,ek->ei", mesh.basis_grads, signed))

    def linearized(self, mesh, y, z):
        gz = nodal_gradient(mesh, z)
        return np.stack([gz, -gz])


@dataclass(frozen=True, eq=False)
class ZeroOrderBox:
    """y_low <= y <= y_up per node and time node; layout ``(2, n_nodes)``."""
    lower: object
    upper: object
    name = "zero_order"

    def setup(self, spec):
        tail = (spec.mesh.n_nodes,)
        lo = _per_time(self.lower, spec.N, tail, "y_low")
        up = _per_time(self.upper, spec.N, tail, "y_up")
        if np.any(lo > up):
            raise ValueError("zero-order bounds need y_low <= y_up")
        return np.stack([up, lo], axis=1)

    def weights(self, mesh):
        return np.broadcast_to(lumped_mass(mesh)[None, :], (2, mesh.n_nodes))

    def residual(self, mesh, y, bound_k):
        y = np.asarray(y)
        return np.stack([y - bound_k[0], bound_k[1] - y])

    def dual(self, mesh, y, coef):
        coef = np.asarray(coef)
        return coef[0] - coef[1]

    def linearized(self, mesh, y, z):
        z = np.asarray(z)
        return np.stack([z, -z])


BLOCKS = {cls.name: cls for cls in (AvgInSpace, PointwiseQ, Componentwise, ZeroOrderBox)}


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Constraint blocks plus the penalty continuation schedule."""
    blocks: tuple
    penalty: float = 10.0
    factor: float = 10.0
    penalty_max: float = 1e8
    target_violation: float = 1e-4
    feas_tol: float = 1e-8

    def validate(self, spec):
        if not self.blocks:
            raise ValueError("constraint spec needs at least one block")
        if not self.penalty > 0:
            raise ValueError("penalty weight must be positive")
        if not self.factor > 1:
            raise ValueError("continuation factor must exceed 1")
        for b in self.blocks:
            b.setup(spec)

    def bounds(self, spec):
        return [b.setup(spec) for b in self.blocks]


@dataclass(frozen=True, eq=False)
class ConstraintValues:
    residuals: list          # per block: (K, *shape)
    max_violation: float
    feasible: bool


@dataclass(frozen=True, eq=False)
class MultiplierSet:
    """Per block: ``interior`` (N+1, *shape) with row 0 zero, ``atom`` (*shape)."""
    names: tuple
    interior: list
    atom: list
    penalty: float = None

    def min_value(self):
        vals = [np.min(a) for a in self.interior] + [np.min(a) for a in self.atom]
        return float(min(vals)) if vals else 0.0


def eval_constraints(spec, traj, cs=None):
    cs = spec.constraints if cs is None else cs
    if cs is None:
        return ConstraintValues([], 0.0, True)
    out, viol = [], 0.0
    for block, bound in zip(cs.blocks, cs.bounds(spec)):
        h = np.array([block.residual(spec.mesh, y, bound[k]) for k, y in enumerate(traj.states)])
        out.append(h)
        if h.size:
            viol = max(viol, float(np.max(h)))
    viol = max(viol, 0.0)
    return ConstraintValues(out, viol, viol <= cs.feas_tol)


def _time_weights(spec, K):
    t = np.full(K, spec.tau)
    t[0] = 0.0
    return t


def penalty_value_and_duals(spec, traj, c=None, cs=None):
    """Moreau-Yosida penalty, its running duals (N, n_nodes) and terminal dual.

    d(value)/d(y_k) = tau * running[k-1] + [k == N] * terminal.
    """
    cs = spec.constraints if cs is None else cs
    n = spec.mesh.n_nodes
    running = np.zeros((spec.N, n))
    terminal = np.zeros(n)
    if cs is None:
        return 0.0, running, terminal
    c = cs.penalty if c is None else c
    vals = eval_constraints(spec, traj, cs)
    value = 0.0
    for block, h in zip(cs.blocks, vals.residuals):
        w = block.weights(spec.mesh)
        pos = np.maximum(h, 0.0)
        tw = _time_weights(spec, len(h)).reshape((-1,) + (1,) * (h.ndim - 1))
        value += 0.5 * c * float(np.sum(tw * w * pos ** 2) + np.sum(w * pos[-1] ** 2))
        for k in range(1, spec.N + 1):
            if np.any(pos[k] > 0):
                running[k - 1] += block.dual(spec.mesh, traj.states[k], c * w * pos[k])
        if np.any(pos[-1] > 0):
            terminal += block.dual(spec.mesh, traj.states[-1], c * w * pos[-1])
    return value, running, terminal


def recover_multipliers(spec, traj, c=None, cs=None):
    cs = spec.constraints if cs is None else cs
    if cs is None:
        return MultiplierSet((), [], [], c)
    c = cs.penalty if c is None else c
    vals = eval_constraints(spec, traj, cs)
    names, interior, atom = [], [], []
    for block, h in zip(cs.blocks, vals.residuals):
        w = block.weights(spec.mesh)
        pos = np.maximum(h, 0.0)
        tw = _time_weights(spec, len(h)).reshape((-1,) + (1,) * (h.ndim - 1))
        names.append(block.name)
        interior.append(c * tw * w * pos)
        atom.append(c * w * pos[-1])
    return MultiplierSet(tuple(names), interior, atom, c)


def multiplier_duals(spec, traj, mult, cs=None):
    """Adjoint dual data generated by a multiplier set (same convention as the penalty)."""
    cs = spec.constraints if cs is None else cs
    n = spec.mesh.n_nodes
    running = np.zeros((spec.N, n))
    terminal = np.zeros(n)
    if cs is None:
        return running, terminal
    for block, lam, atom in zip(cs.blocks, mult.interior, mult.atom):
        for k in range(1, spec.N + 1):
            if np.any(lam[k] != 0):
                running[k - 1] += block.dual(spec.mesh, traj.states[k], lam[k]) / spec.tau
        if np.any(atom != 0):
            terminal += block.dual(spec.mesh, traj.states[-1], atom)
    return running, terminal


@dataclass(frozen=True, eq=False)
class SlaterResult:
    margin: float
    block: str
    index: tuple
    initial_slack: float
    slacks: list = field(repr=False, default_factory=list)


def linearized_slacks(spec, traj, z, cs=None):
    """Per block: g - (constraint(y) + linearized term(z)) for all time nodes."""
    cs = spec.constraints if cs is None else cs
    vals = eval_constraints(spec, traj, cs)
    out = []
    for block, h in zip(cs.blocks, vals.residuals):
        lin = np.array([block.linearized(spec.mesh, traj.states[k], z[k]) for k in range(len(h))])
        out.append(-(h + lin))
    return out, vals


def slater_margin(spec, u_bar, u_hat, cs=None):
    """Linearized Slater margin at ``u_bar`` in the direction of ``u_hat``."""
    from .linearized import solve_sensitivity
    from .state_solver import solve_state

    cs = spec.constraints if cs is None else cs
    if cs is None:
        raise ValueError("no state constraints configured")
    outcome = solve_state(spec, u_bar)
    if not outcome.is_global:
        raise RuntimeError(f"state blows up at the reference control (T_estimate={outcome.T_estimate})")
    z = solve_sensitivity(spec, outcome.trajectory, np.asarray(u_hat) - np.asarray(u_bar))
    slacks, vals = linearized_slacks(spec, outcome.trajectory, z, cs)
    return _summarize(cs, slacks, vals)


def _summarize(cs, slacks, vals):
    best = (np.inf, None, None)
    init = np.inf
    for block, s, h in zip(cs.blocks, slacks, vals.residuals):
        idx = np.unravel_index(int(np.argmin(s)), s.shape)
        if s[idx] < best[0]:
            best = (float(s[idx]), block.name, tuple(int(i) for i in idx))
        init = min(init, float(np.min(-h[0])))
    return SlaterResult(best[0], best[1], best[2], init, slacks)
