import numpy as np
import pytest

from gradctl.constraints import (AvgInSpace, ConstraintSpec, MultiplierSet, ZeroOrderBox,
                                 eval_constraints)
from gradctl.kkt import KKTTolerances, check_kkt, check_slater
from gradctl.model import QuadGrad
from gradctl.optimizer import optimize
from gradctl.state_solver import solve_state
from conftest import make_problem


@pytest.fixture(scope="module")
def solved():
    """Small problem with a binding gradient bound."""
    cs = ConstraintSpec((AvgInSpace(2.0, 0.05),), penalty=10.0)
    spec = make_problem(n=8, N=6, T=0.3, nl=QuadGrad(), y0_amp=0.0, target_amp=2.0,
                        gamma=0.05, control="time_only", constraints=cs)
    return spec, optimize(spec)


def test_optimizer_output_passes(solved):
    spec, res = solved
    assert res.max_violation <= 1e-4 and res.penalty > 10.0
    rep = check_kkt(spec, res.u, res.trajectory, res.multipliers)
    assert rep.passed, rep.verdict
    assert rep.adjoint_duality_gap <= 1e-10
    assert rep.multiplier_min >= 0 and np.max(res.multipliers.interior[0]) > 0


def test_unconstrained_stationarity():
    spec = make_problem(n=8, N=5, target_amp=1.0, gamma=0.2)
    res = optimize(spec)
    rep = check_kkt(spec, res.u, res.trajectory)
    assert rep.passed and rep.complementarity_residual == 0.0


def test_perturbed_control_fails_stationarity(solved):
    spec, res = solved
    u = res.u + 0.05
    traj = solve_state(spec, u).trajectory
    rep = check_kkt(spec, u, traj, res.multipliers)
    assert not rep.verdict["stationarity"] and not rep.passed


def test_stale_trajectory_fails_state_check(solved):
    spec, res = solved
    rep = check_kkt(spec, res.u * 1.01, res.trajectory, res.multipliers)
    assert not rep.verdict["state_equation"]


def test_negative_multiplier_fails_immediately(solved):
    spec, res = solved
    lam = [a.copy() for a in res.multipliers.interior]
    lam[0][2] = -1e-9
    bad = MultiplierSet(res.multipliers.names, lam, res.multipliers.atom)
    rep = check_kkt(spec, res.u, res.trajectory, bad)
    assert not rep.passed and rep.reason == "negative multiplier"


def test_support_violation_detected(solved):
    spec, res = solved
    lam = [a.copy() for a in res.multipliers.interior]
    h = eval_constraints(spec, res.trajectory).residuals[0]
    k = int(np.argmin(h[1:])) + 1
    assert h[k] < -1e-3
    lam[0][k] = 1e-6
    bad = MultiplierSet(res.multipliers.names, lam, res.multipliers.atom)
    rep = check_kkt(spec, res.u, res.trajectory, bad, tolerances=KKTTolerances(stationarity=1.0))
    assert not rep.active_set_support_ok


def test_shape_mismatch_raises(solved):
    spec, res = solved
    bad = MultiplierSet(res.multipliers.names, [a[:-1] for a in res.multipliers.interior],
                        res.multipliers.atom)
    with pytest.raises(ValueError):
        check_kkt(spec, res.u, res.trajectory, bad)
    with pytest.raises(ValueError):
        check_kkt(spec, res.u, res.trajectory, None)


def test_slater_margin_on_zero_state():
    cs = ConstraintSpec((AvgInSpace(2.0, 1.0),))
    spec = make_problem(nl=QuadGrad(), y0_amp=0.0, constraints=cs)
    rep = check_slater(spec, spec.zero_control(), np.full(spec.control_shape, 0.7))
    assert rep.margin == 1.0 and rep.certified and rep.initial_ok


def test_slater_rescaling_scan():
    # direction u_hat - u_bar pushes the state through an upper bound that u_bar satisfies
    cs = ConstraintSpec((ZeroOrderBox(-1.0, 0.2),))
    spec = make_problem(n=8, N=4, y0_amp=0.0, constraints=cs)
    rep = check_slater(spec, spec.zero_control(), np.full(spec.control_shape, 50.0))
    assert rep.margin < 0 and not rep.certified
    alphas = [r["alpha"] for r in rep.rescaled]
    assert alphas[0] == 1.0 and alphas[-1] == 1 / 64
    margins = [r["margin"] for r in rep.rescaled]
    assert all(b >= a for a, b in zip(margins, margins[1:]))
    assert rep.best_rescaled_margin > 0
