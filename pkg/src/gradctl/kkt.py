"""
Certification of a candidate (u, trajectory, multipliers) against the
discrete first-order system.  Nothing is taken on trust: the adjoint is
recomputed from the multipliers and the trajectory is re-checked against
the state equation.

Multiplier magnitudes follow the tau-weighted discrete convention of
:mod:`gradctl.constraints`.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from .constraints import eval_constraints, linearized_slacks, multiplier_duals, _summarize
from .linearized import LinearizedSystem, solve_sensitivity, tracking_duals
from .model import apply_B_adjoint
from .optimizer import project_box
from .state_solver import solve_state, step_residuals


@dataclass(frozen=True)
class KKTTolerances:
    stationarity: float = 1e-4
    complementarity: float = 1e-4
    multiplier_slack: float = 1e-6
    feasibility: float = 1e-4
    active: float = 1e-3
    support_threshold: float = 1e-12
    duality_gap: float = 1e-10
    state_residual: float = 1e-8


@dataclass
class KKTReport:
    stationarity_residual: float
    complementarity_residual: float
    multiplier_min: float
    max_feasibility_violation: float
    active_set_support_ok: bool
    adjoint_duality_gap: float
    state_residual: float
    slater_margin: float = None
    tolerances: dict = field(default_factory=dict)
    verdict: dict = field(default_factory=dict)
    reason: str = ""
    multiplier_convention: str = "discrete: interior weights tau, terminal atom weight 1"

    @property
    def passed(self):
        return bool(self.verdict) and all(self.verdict.values())

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _duality_gap(spec, system, w, dual_data, terminal, rng, probes=3):
    """max relative |<L z, w> - <z, dual data>| over random z with z_0 = 0."""
    gaps = []
    for _ in range(probes):
        z = np.zeros((spec.N + 1, spec.mesh.n_nodes))
        z[1:, spec.mesh.free] = rng.standard_normal((spec.N, len(spec.mesh.free)))
        lhs = spec.tau * float(np.sum(system.apply(z) * w))
        rhs = spec.tau * float(np.sum(dual_data * z[1:])) + float(terminal @ z[-1])
        scale = max(abs(lhs), abs(rhs), 1e-300)
        gaps.append(abs(lhs - rhs) / scale)
    return float(max(gaps))


def check_kkt(spec, u, traj, multipliers=None, tolerances=None, slater_control=None, seed=0):
    tol = KKTTolerances() if tolerances is None else tolerances
    u = spec.check_control(u)
    cs = spec.constraints
    rng = np.random.default_rng(seed)

    if len(traj) != spec.N + 1:
        raise ValueError(f"trajectory has {len(traj)} time nodes, expected {spec.N + 1}")
    if traj.states.shape[1] != spec.mesh.n_nodes:
        raise ValueError("trajectory node count does not match the mesh")
    if cs is not None and multipliers is None:
        raise ValueError("multipliers required for a constrained problem")
    if cs is not None:
        if tuple(multipliers.names) != tuple(b.name for b in cs.blocks):
            raise ValueError(f"multiplier blocks {multipliers.names} do not match constraints")
        for block, bound, lam, atom in zip(cs.blocks, cs.bounds(spec), multipliers.interior, multipliers.atom):
            if lam.shape != (spec.N + 1,) + bound.shape[1:] or atom.shape != bound.shape[1:]:
                raise ValueError(f"multiplier shape mismatch for block {block.name}")

    mult_min = multipliers.min_value() if cs is not None else 0.0
    if mult_min < 0:
        return KKTReport(np.inf, np.inf, mult_min, np.inf, False, np.inf, np.inf,
                         tolerances=asdict(tol), verdict={"multipliers_nonnegative": False},
                         reason="negative multiplier")

    state_res = float(np.max(step_residuals(spec, u, traj), initial=0.0))

    system = LinearizedSystem(spec, traj)
    running = tracking_duals(spec, traj)
    terminal = np.zeros(spec.mesh.n_nodes)
    if cs is not None:
        r, t = multiplier_duals(spec, traj, multipliers)
        running, terminal = running + r, t
    w = system.backward(running, terminal)
    grad = spec.gamma * u + apply_B_adjoint(spec, w)
    stationarity = float(np.max(np.abs(u - project_box(u - grad, spec.lower, spec.upper)), initial=0.0))
    gap = _duality_gap(spec, system, w, running, terminal, rng)

    comp, viol, support_ok = 0.0, 0.0, True
    if cs is not None:
        vals = eval_constraints(spec, traj)
        viol = vals.max_violation
        for h, lam, atom in zip(vals.residuals, multipliers.interior, multipliers.atom):
            comp += float(np.sum(lam * np.abs(h)) + np.sum(atom * np.abs(h[-1])))
            on = lam > tol.support_threshold
            if np.any(np.abs(h[on]) > tol.active):
                support_ok = False
            if np.any(np.abs(h[-1][atom > tol.support_threshold]) > tol.active):
                support_ok = False

    margin = None
    if slater_control is not None and cs is not None:
        z = solve_sensitivity(spec, traj, np.asarray(slater_control) - u, system=system)
        slacks, vals = linearized_slacks(spec, traj, z)
        margin = _summarize(cs, slacks, vals).margin

    verdict = {
        "stationarity": stationarity <= tol.stationarity,
        "complementarity": comp <= tol.complementarity,
        "multipliers_nonnegative": mult_min >= 0,
        "feasibility": viol <= tol.feasibility,
        "support": support_ok,
        "duality_gap": gap <= tol.duality_gap,
        "state_equation": state_res <= tol.state_residual,
    }
    return KKTReport(stationarity, comp, mult_min, viol, support_ok, gap, state_res,
                     margin, asdict(tol), verdict)


@dataclass
class SlaterReport:
    margin: float
    block: str
    index: tuple
    initial_slack: float
    initial_ok: bool
    certified: bool
    rescaled: list = field(default_factory=list)
    best_rescaled_margin: float = None

    def to_dict(self):
        return asdict(self)


def check_slater(spec, u_bar, u_hat):
    """Linearized Slater check with convex-combination rescaling on failure."""
    cs = spec.constraints
    if cs is None:
        raise ValueError("no state constraints configured")
    outcome = solve_state(spec, u_bar)
    if not outcome.is_global:
        raise RuntimeError(f"state blows up at the reference control (T_estimate={outcome.T_estimate})")
    traj = outcome.trajectory
    z = solve_sensitivity(spec, traj, np.asarray(u_hat) - np.asarray(u_bar))
    slacks, vals = linearized_slacks(spec, traj, z)
    res = _summarize(cs, slacks, vals)
    report = SlaterReport(res.margin, res.block, res.index, res.initial_slack,
                          res.initial_slack > 0, res.margin > 0)
    if res.margin <= 0:
        # u_alpha - u_bar = alpha (u_hat - u_bar), hence z_alpha = alpha z
        for j in range(7):
            alpha = 0.5 ** j
            m = _summarize(cs, linearized_slacks(spec, traj, alpha * z)[0], vals).margin
            report.rescaled.append({"alpha": alpha, "margin": m})
        report.best_rescaled_margin = max(r["margin"] for r in report.rescaled)
    return report
