"""
Problem ingredients: diffusion law, first-order nonlinearity, control map
and the assembled problem description.

All nonlinear terms use one-point quadrature: the state enters through its
element mean, the gradient through the (constant) P1 element gradient.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import geometry
from .geometry import assemble_matrix, assemble_vector, element_mean, nodal_gradient


class EvaluationError(ValueError):
    """A catalog formula was evaluated outside its domain."""


# ------------------------------------------------------------ diffusion law

@dataclass(frozen=True)
class ConstantDiffusion:
    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"constant diffusion must be positive, got {self.c}")

    @property
    def bounds(self):
        return (self.c, self.c)

    def value(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.c)

    def derivative(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))


@dataclass(frozen=True)
class RationalBoundedDiffusion:
    """xi(s) = a + b / (1 + s^2)."""
    a: float
    b: float

    def __post_init__(self):
        if not min(self.a, self.a + self.b) > 0:
            raise ValueError("need a > 0 and a + b > 0 for a positive lower bound")

    @property
    def bounds(self):
        return (min(self.a, self.a + self.b), max(self.a, self.a + self.b))

    def value(self, s):
        s = np.asarray(s, dtype=float)
        return self.a + self.b / (1.0 + s * s)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        return -2.0 * self.b * s / (1.0 + s * s) ** 2


def eval_xi(law, mesh, y):
    """Per-element xi and xi' at the element mean of ``y``."""
    s = element_mean(mesh, y)
    return law.value(s), law.derivative(s)


# ------------------------------------------------------------ nonlinearity

def _power(s, r):
    """s**r and its derivative; non-integer powers need s >= 0."""
    s = np.asarray(s, dtype=float)
    if float(r).is_integer():
        r = int(r)
        return s ** r, r * s ** (r - 1)
    if np.any(s < 0):
        raise EvaluationError(f"negative state with non-integer power {r}")
    return s ** r, r * s ** (r - 1)


def _norm_power(g, alpha):
    """|g|^alpha and its gradient with respect to g (zero where g = 0)."""
    norm = np.linalg.norm(g, axis=-1)
    val = norm ** alpha
    safe = np.where(norm > 0, norm, 1.0)
    dval = np.where(norm > 0, alpha * safe ** (alpha - 2), 0.0)[..., None] * g
    return val, dval


@dataclass(frozen=True)
class Zero:
    def local(self, s, g):
        return np.zeros_like(s), np.zeros_like(s), np.zeros_like(g)


@dataclass(frozen=True)
class QuadGrad:
    """F(y) = |grad y|^2."""

    def local(self, s, g):
        return np.sum(g * g, axis=-1), np.zeros_like(s), 2.0 * g


@dataclass(frozen=True)
class Advect:
    """F(y) = y beta . grad y with a constant vector beta."""
    beta: tuple

    def local(self, s, g):
        beta = np.asarray(self.beta, dtype=float)
        if beta.shape != g.shape[-1:]:
            raise ValueError(f"beta has shape {beta.shape}, gradient dimension is {g.shape[-1]}")
        bg = g @ beta
        return s * bg, bg, s[..., None] * beta


@dataclass(frozen=True)
class Kawohl:
    """F(y) = lam y^r - |grad y|^2."""
    lam: float
    r: float

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("Kawohl exponent r must be >= 1")

    def local(self, s, g):
        p, dp = _power(s, self.r)
        return self.lam * p - np.sum(g * g, axis=-1), self.lam * dp, -2.0 * g


@dataclass(frozen=True)
class PowerSum:
    """F(y) = a |grad y|^alpha + b y^beta."""
    a: float
    b: float
    alpha: float
    beta: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("PowerSum needs a, b >= 0")
        if self.alpha < 1 or self.beta < 1:
            raise ValueError("PowerSum needs alpha, beta >= 1")

    def local(self, s, g):
        n, dn = _norm_power(g, self.alpha)
        p, dp = _power(s, self.beta)
        return self.a * n + self.b * p, self.b * dp, self.a * dn


NONLINEARITIES = {
    "zero": Zero,
    "quad_grad": QuadGrad,
    "advect": Advect,
    "kawohl": Kawohl,
    "power_sum": PowerSum,
}


def _F_local(nl, mesh, y):
    s = element_mean(mesh, y)
    g = nodal_gradient(mesh, y)
    with np.errstate(over="ignore", invalid="ignore"):
        return nl.local(s, g)


def eval_F(nl, mesh, y, grads=None):
    """Load vector ``sum_e |e| F_e / (d+1)`` over all nodes."""
    if grads is not None:
        s = element_mean(mesh, y)
        with np.errstate(over="ignore", invalid="ignore"):
            F = nl.local(s, np.asarray(grads))[0]
    else:
        F = _F_local(nl, mesh, y)[0]
    k = mesh.dimension + 1
    return assemble_vector(mesh, np.repeat((mesh.measures * F / k)[:, None], k, axis=1))


def F_jacobian_local(nl, mesh, y):
    _, dFs, dFg = _F_local(nl, mesh, y)
    k = mesh.dimension + 1
    # d F_e / d y_j = dFs / k + dFg . grad phi_j
    col = dFs[:, None] / k + np.einsum("ed,ejd->ej", dFg, mesh.basis_grads)
    return (mesh.measures / k)[:, None, None] * col[:, None, :]


def eval_F_jacobian(nl, mesh, y, free_only=False):
    """Exact derivative of :func:`eval_F` with respect to nodal values."""
    local = np.broadcast_to(F_jacobian_local(nl, mesh, y), (mesh.n_elements,) + (mesh.dimension + 1,) * 2)
    return assemble_matrix(mesh, local, free_only=free_only)


# ------------------------------------------------------------ control map

@dataclass(frozen=True, eq=False)
class DistributedControl:
    """Space-time control on every node, acting through a nodal indicator.

    The control space carries lumped-mass weights, which keeps the box
    projection and the adjoint B* nodewise.
    """
    indicator: np.ndarray

    def n_controls(self, mesh):
        return mesh.n_nodes

    def weights(self, mesh, mass):
        return np.asarray(mass.sum(axis=1)).ravel()

    def apply(self, u, mesh, mass):
        return u * (self.weights(mesh, mass) * self.indicator)

    def adjoint(self, w, mesh, mass):
        return np.asarray(w) * self.indicator


@dataclass(frozen=True, eq=False)
class TimeOnlyControl:
    """(Bu)(t) = u(t) * actuator with a fixed spatial actuator."""
    actuator: np.ndarray

    def n_controls(self, mesh):
        return 1

    def weights(self, mesh, mass):
        return np.ones(1)

    def apply(self, u, mesh, mass):
        return np.asarray(u)[:, :1] * (mass @ self.actuator)[None, :]

    def adjoint(self, w, mesh, mass):
        return (np.asarray(w) @ (mass @ self.actuator))[:, None]


# ------------------------------------------------------------ problem

@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    max_halvings: int = 12
    blowup_threshold: float = 1e6


@dataclass(frozen=True)
class OptimizerOptions:
    tol: float = 1e-6
    max_iter: int = 500
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_halvings: int = 30


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """One discrete control problem.

    Controls are arrays of shape ``(N, n_controls)``: row ``k-1`` acts on the
    implicit Euler step that produces ``y_k``.  Targets are ``(N+1, n_nodes)``
    or a single nodal field used at every time.
    """
    mesh: geometry.Mesh
    T: float
    N: int
    xi: object
    mu: object
    nonlinearity: object
    control_map: object
    y0: np.ndarray
    y_target: np.ndarray
    gamma: float
    u_low: object = -np.inf
    u_up: object = np.inf
    constraints: object = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        y0 = np.asarray(self.y0, dtype=float)
        if y0.shape != (self.mesh.n_nodes,):
            raise ValueError(f"y0 must have length {self.mesh.n_nodes}")
        if np.any(np.abs(y0[self.mesh.dirichlet]) > 1e-12 * max(1.0, np.max(np.abs(y0)))):
            raise ValueError("y0 must vanish on Dirichlet nodes")
        y0[self.mesh.dirichlet] = 0.0   # drop interpolation round-off
        object.__setattr__(self, "y0", y0)
        if np.any(self.lower > self.upper):
            raise ValueError("control bounds must satisfy u_low <= u_up")
        geometry.check_coefficient(self.mu_elements)
        if self.constraints is not None:
            self.constraints.validate(self)

    @property
    def tau(self):
        return self.T / self.N

    @cached_property
    def times(self):
        return np.linspace(0.0, self.T, self.N + 1)

    @cached_property
    def mu_elements(self):
        return geometry._as_coefficient(self.mesh, self.mu)

    @cached_property
    def mass(self):
        return geometry.assemble_mass(self.mesh)

    @cached_property
    def mass_free(self):
        m = self.mass
        return m[self.mesh.free][:, self.mesh.free].tocsc()

    @cached_property
    def targets(self):
        yd = np.asarray(self.y_target, dtype=float)
        if yd.ndim == 1:
            yd = np.broadcast_to(yd, (self.N + 1, self.mesh.n_nodes))
        if yd.shape != (self.N + 1, self.mesh.n_nodes):
            raise ValueError(f"target shape {yd.shape} incompatible with grid")
        return yd

    @property
    def control_shape(self):
        return (self.N, self.control_map.n_controls(self.mesh))

    @cached_property
    def control_weights(self):
        """Per-entry weights of the discrete L2(Lambda) inner product."""
        w = self.control_map.weights(self.mesh, self.mass)
        return self.tau * np.broadcast_to(w, self.control_shape)

    @cached_property
    def lower(self):
        return np.broadcast_to(np.asarray(self.u_low, dtype=float), self.control_shape)

    @cached_property
    def upper(self):
        return np.broadcast_to(np.asarray(self.u_up, dtype=float), self.control_shape)

    def zero_control(self):
        return np.zeros(self.control_shape)

    def check_control(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != self.control_shape:
            raise ValueError(f"control shape {u.shape} != expected {self.control_shape}")
        return u

    def control_inner(self, u, v):
        return float(np.sum(self.control_weights * u * v))

    def replace(self, **changes):
        import dataclasses
        return dataclasses.replace(self, **changes)


def apply_B(spec, u):
    """Per-step load vectors (N, n_nodes) produced by control ``u``."""
    u = spec.check_control(u)
    return spec.control_map.apply(u, spec.mesh, spec.mass)


def apply_B_adjoint(spec, w):
    """B* of a trajectory-shaped array ``w`` (N, n_nodes) of steps 1..N.

    Satisfies ``sum_k tau (Bu)_k . w_k == control_inner(u, B* w)``.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (spec.N, spec.mesh.n_nodes):
        raise ValueError(f"adjoint input shape {w.shape} != {(spec.N, spec.mesh.n_nodes)}")
    return spec.control_map.adjoint(w, spec.mesh, spec.mass)


def spacetime_pairing(spec, loads, w):
    """sum_k tau loads_k . w_k over the control-driven steps."""
    return spec.tau * float(np.sum(np.asarray(loads) * np.asarray(w)))
