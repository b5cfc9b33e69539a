"""
Command line entry point.

Exit codes: 0 pass, 1 completed with a failing report, 2 configuration error.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import io
from .kkt import KKTTolerances, check_kkt, check_slater
from .optimizer import InitializationError, ReducedObjective, optimize
from .state_solver import global_existence_diagnostic, solve_state

log = logging.getLogger("gradctl")

PASS, FAIL, CONFIG_ERROR = 0, 1, 2


def control_from(spec, entry, base):
    if entry is None or entry["kind"] == "zero":
        return spec.zero_control()
    if entry["kind"] == "constant":
        return np.full(spec.control_shape, float(entry["value"]))
    path = Path(entry["path"])
    if not path.is_absolute():
        path = base / path
    try:
        return io.read_control(path, spec)
    except (OSError, ValueError) as exc:
        raise cfgmod.ConfigError([f"control file {path}: {exc}"])


def _summary(outcome, spec):
    s = {"status": outcome.status, "T_estimate": outcome.T_estimate, "T": spec.T,
         "k_star": outcome.k_star, "reason": outcome.reason,
         "newton_iterations_max": max(outcome.newton_iterations, default=0)}
    if outcome.is_global:
        s["diagnostics"] = global_existence_diagnostic(spec, outcome.trajectory)
    return s


# ------------------------------------------------------------ commands

def cmd_solve_state(cfg, out, seed, base):
    spec = cfgmod.build_spec(cfg)
    u = control_from(spec, cfg.get("control_input"), base)
    outcome = solve_state(spec, u)
    io.write_trajectory(out / "trajectory.csv", outcome.trajectory)
    io.write_json(out / "summary.json", _summary(outcome, spec))
    # a detected blow-up is a valid result of this command
    return PASS


def cmd_optimize(cfg, out, seed, base):
    spec = cfgmod.build_spec(cfg)
    u0 = control_from(spec, cfg["control_input"], base) if "control_input" in cfg else None
    try:
        res = optimize(spec, u0)
    except InitializationError as exc:
        io.write_json(out / "summary.json", {"status": "initialization_failed", "message": str(exc)})
        return FAIL
    io.write_control(out / "control.csv", spec, res.u)
    io.write_trajectory(out / "trajectory.csv", res.trajectory)
    io.write_history(out / "history.csv", res.history)
    if res.multipliers is not None:
        io.write_multipliers(out, spec, res.multipliers)
    ok = res.reason == "converged" and (spec.constraints is None
                                        or res.max_violation <= spec.constraints.target_violation)
    io.write_json(out / "summary.json", {
        "status": "converged" if ok else "not_converged", "reason": res.reason,
        "objective": res.value, "penalty": res.penalty, "max_violation": res.max_violation,
        "pg_residual": res.pg_residual, "iterations": len(res.history),
        "multiplier_blocks": list(res.multipliers.names) if res.multipliers is not None else []})
    return PASS if ok else FAIL


def cmd_check_kkt(cfg, out, seed, base, artifacts):
    spec = cfgmod.build_spec(cfg)
    try:
        u = io.read_control(artifacts / "control.csv", spec)
        traj = io.read_trajectory(artifacts / "trajectory.csv", spec)
        mult = io.read_multipliers(artifacts, spec) if spec.constraints is not None else None
    except (OSError, ValueError) as exc:
        print(f"cannot read artifacts: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    tol = KKTTolerances(**cfg.get("kkt", {}))
    try:
        report = check_kkt(spec, u, traj, mult, tolerances=tol, seed=seed)
    except ValueError as exc:
        io.write_json(out / "kkt_report.json", {"passed": False, "reason": str(exc)})
        return FAIL
    io.write_json(out / "kkt_report.json", report.to_dict())
    return PASS if report.passed else FAIL


def cmd_grad_check(cfg, out, seed, base):
    spec = cfgmod.build_spec(cfg)
    gc = cfg.get("grad_check", {})
    n_dir, eps, tol = gc.get("directions", 10), gc.get("eps", 1e-5), gc.get("tol", 1e-5)
    u = control_from(spec, cfg.get("control_input"), base)
    objective = ReducedObjective(spec)
    ev = objective.evaluate(u)
    if not ev.feasible_global:
        io.write_json(out / "grad_check.json", {"passed": False, "reason": "state blows up at the base control"})
        return FAIL
    grad = objective.gradient(ev)
    rng = np.random.default_rng(seed)
    rows = []
    for j in range(n_dir):
        v = rng.standard_normal(spec.control_shape)
        fp = objective.evaluate(u + eps * v).value
        fm = objective.evaluate(u - eps * v).value
        fd = (fp - fm) / (2 * eps)
        ad = spec.control_inner(grad, v)
        rel = abs(fd - ad) / max(abs(fd), abs(ad), 1e-300)
        rows.append({"direction": j, "fd": fd, "adjoint": ad, "rel_error": rel})
    worst = max(r["rel_error"] for r in rows)
    passed = bool(np.isfinite(worst) and worst <= tol)
    io.write_json(out / "grad_check.json", {"passed": passed, "max_rel_error": worst, "tol": tol,
                                            "eps": eps, "seed": seed, "penalty_value": ev.penalty,
                                            "directions": rows})
    return PASS if passed else FAIL


def cmd_blowup_scan(cfg, out, seed, base):
    if "blowup_scan" not in cfg:
        raise cfgmod.ConfigError(["<root>: missing required field 'blowup_scan' for blowup-scan"])
    scan = cfg["blowup_scan"]
    name, values = scan["parameter"], sorted(scan["values"])
    nl_cfg = cfg["nonlinearity"]
    if name not in nl_cfg or name == "kind":
        raise cfgmod.ConfigError([f"blowup_scan/parameter: '{name}' is not a parameter of {nl_cfg['kind']}"])
    rows = []
    for val in values:
        nl = cfgmod._nonlinearity(dict(nl_cfg, **{name: val}))
        spec = cfgmod.build_spec(cfg, nonlinearity=nl)
        outcome = solve_state(spec, control_from(spec, cfg.get("control_input"), base))
        rows.append((float(val), outcome.status, float(outcome.T_estimate),
                     -1 if outcome.k_star is None else outcome.k_star, outcome.reason or ""))
    io.write_csv(out / "blowup_scan.csv", [name, "status", "T_estimate", "k_star", "reason"], rows)
    T = [r[2] for r in rows]
    monotone = all(b <= a for a, b in zip(T, T[1:]))
    io.write_json(out / "blowup_scan.json", {"parameter": name, "non_increasing": monotone,
                                             "statuses": [r[1] for r in rows], "T_estimates": T})
    return PASS if monotone else FAIL


def cmd_slater_check(cfg, out, seed, base):
    if "slater" not in cfg:
        raise cfgmod.ConfigError(["<root>: missing required field 'slater' for slater-check"])
    spec = cfgmod.build_spec(cfg)
    if spec.constraints is None:
        raise cfgmod.ConfigError(["<root>: missing required field 'constraints' for slater-check"])
    u_bar = control_from(spec, cfg["slater"]["u_bar"], base)
    u_hat = control_from(spec, cfg["slater"]["u_hat"], base)
    try:
        report = check_slater(spec, u_bar, u_hat)
    except RuntimeError as exc:
        io.write_json(out / "slater.json", {"certified": False, "reason": str(exc)})
        return FAIL
    io.write_json(out / "slater.json", report.to_dict())
    return PASS if report.certified else FAIL


COMMANDS = {
    "solve-state": cmd_solve_state,
    "optimize": cmd_optimize,
    "check-kkt": cmd_check_kkt,
    "grad-check": cmd_grad_check,
    "blowup-scan": cmd_blowup_scan,
    "slater-check": cmd_slater_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="gradctl", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "check-kkt":
            p.add_argument("--artifacts", type=Path, default=None,
                           help="directory written by optimize (default: --out)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        args.out.mkdir(parents=True, exist_ok=True)
        base = args.config.resolve().parent
        fn = COMMANDS[args.command]
        if args.command == "check-kkt":
            return fn(cfg, args.out, seed, base, args.artifacts or args.out)
        return fn(cfg, args.out, seed, base)
    except cfgmod.ConfigError as exc:
        for msg in exc.messages:
            print(f"config error: {msg}", file=sys.stderr)
        return CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
