"""
JSON run configuration: schema, validation and translation into a
:class:`~gradctl.model.ProblemSpec`.
"""
import json

import jsonschema
import numpy as np

from .constraints import BLOCKS, ConstraintSpec
from .geometry import build_mesh
from .model import (NONLINEARITIES, ConstantDiffusion, DistributedControl, OptimizerOptions,
                    ProblemSpec, RationalBoundedDiffusion, SolverOptions, TimeOnlyControl)

SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_num_or_list = {"oneOf": [_num, {"type": "array"}]}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


def _kind(name, props=None, required=()):
    props = dict(props or {})
    props["kind"] = {"const": name}
    return _obj(props, ("kind",) + tuple(required))


FIELD = {"oneOf": [
    _kind("zero"),
    _kind("constant", {"value": _num}, ["value"]),
    _kind("sine", {"amplitude": _num}, ["amplitude"]),
    _kind("values", {"values": {"type": "array", "items": _num}}, ["values"]),
]}

CONTROL_INPUT = {"oneOf": [
    _kind("zero"),
    _kind("constant", {"value": _num}, ["value"]),
    _kind("file", {"path": {"type": "string"}}, ["path"]),
]}

BLOCK = {"oneOf": [
    _kind("avg_in_space", {"q": {"type": "number", "minimum": 2}, "bound": _num_or_list}, ["q", "bound"]),
    _kind("pointwise", {"bound": _num_or_list}, ["bound"]),
    _kind("componentwise", {"lower": _num_or_list, "upper": _num_or_list}, ["lower", "upper"]),
    _kind("zero_order", {"lower": _num_or_list, "upper": _num_or_list}, ["lower", "upper"]),
]}

SCHEMA = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "mesh": _obj({
        "dimension": {"enum": [1, 2]},
        "extents": {"type": "array", "items": _pos, "minItems": 1, "maxItems": 2},
        "nx": {"type": "integer", "minimum": 1},
        "ny": {"type": "integer", "minimum": 1},
        "dirichlet": {"type": "array", "items": {"enum": ["left", "right", "bottom", "top"]}},
    }, ["dimension", "extents", "nx"]),
    "time": _obj({"T": _pos, "N": {"type": "integer", "minimum": 1}}, ["T", "N"]),
    "diffusion": {"oneOf": [
        _kind("constant", {"c": _pos}, ["c"]),
        _kind("rational_bounded", {"a": _num, "b": _num}, ["a", "b"]),
    ]},
    "mu": _num_or_list,
    "nonlinearity": {"oneOf": [
        _kind("zero"),
        _kind("quad_grad"),
        _kind("advect", {"beta": {"type": "array", "items": _num}}, ["beta"]),
        _kind("kawohl", {"lam": _num, "r": _num}, ["lam", "r"]),
        _kind("power_sum", {"a": _num, "b": _num, "alpha": _num, "beta": _num},
              ["a", "b", "alpha", "beta"]),
    ]},
    "control": {"oneOf": [
        _kind("distributed", {"indicator": FIELD}),
        _kind("time_only", {"actuator": FIELD}, ["actuator"]),
    ]},
    "y0": FIELD,
    "target": FIELD,
    "gamma": _pos,
    "bounds": _obj({"lower": {"type": ["number", "null"]}, "upper": {"type": ["number", "null"]}}),
    "constraints": _obj({
        "blocks": {"type": "array", "items": BLOCK, "minItems": 1},
        "penalty": _pos, "factor": {"type": "number", "exclusiveMinimum": 1},
        "penalty_max": _pos, "target_violation": _pos, "feas_tol": _pos,
    }, ["blocks"]),
    "solver": _obj({"newton_tol": _pos, "newton_max_iter": {"type": "integer", "minimum": 1},
                    "max_halvings": {"type": "integer", "minimum": 0}, "blowup_threshold": _pos}),
    "optimizer": _obj({"tol": _pos, "max_iter": {"type": "integer", "minimum": 0},
                       "armijo": _pos, "backtrack": {"type": "number", "exclusiveMinimum": 0,
                                                     "exclusiveMaximum": 1},
                       "max_halvings": {"type": "integer", "minimum": 0}}),
    "seed": {"type": "integer", "minimum": 0},
    "control_input": CONTROL_INPUT,
    "grad_check": _obj({"directions": {"type": "integer", "minimum": 1}, "eps": _pos, "tol": _pos}),
    "blowup_scan": _obj({"parameter": {"type": "string"},
                         "values": {"type": "array", "items": _num, "minItems": 1}},
                        ["parameter", "values"]),
    "slater": _obj({"u_bar": CONTROL_INPUT, "u_hat": CONTROL_INPUT}, ["u_bar", "u_hat"]),
    "kkt": _obj({k: _pos for k in ("stationarity", "complementarity", "multiplier_slack",
                                   "feasibility", "active", "support_threshold",
                                   "duality_gap", "state_residual")}),
}, ["schema_version", "mesh", "time", "nonlinearity", "control", "y0", "target", "gamma"])


class ConfigError(ValueError):
    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


def _describe(err, prefix=()):
    path = list(prefix) + list(err.absolute_path)
    where = "/".join(map(str, path)) or "<root>"
    if err.validator == "required":
        missing = [f for f in err.validator_value if f not in err.instance]
        return [f"{where}: missing required field '{f}'" for f in missing]
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return [f"{where}: unknown key '{k}'" for k in extra]
    if err.validator == "oneOf" and isinstance(err.instance, dict):
        # describe the errors of the branch selected by "kind"
        kinds = [b.get("properties", {}).get("kind", {}).get("const") for b in err.validator_value]
        kind = err.instance.get("kind")
        if kind in kinds:
            branch = jsonschema.Draft202012Validator(err.validator_value[kinds.index(kind)])
            return [m for e in branch.iter_errors(err.instance) for m in _describe(e, path)]
        if None not in kinds:
            return [f"{where}: unknown kind {kind!r}; expected one of {kinds}"]
    return [f"{where}: {err.message}"]


def validate(cfg):
    v = jsonschema.Draft202012Validator(SCHEMA)
    messages = []
    for err in sorted(v.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path))):
        messages.extend(_describe(err))
    if messages:
        raise ConfigError(sorted(set(messages)))
    return cfg


def load(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"])
    return validate(cfg)


def make_field(mesh, spec):
    kind = spec["kind"]
    if kind == "zero":
        return np.zeros(mesh.n_nodes)
    if kind == "constant":
        return np.full(mesh.n_nodes, float(spec["value"]))
    if kind == "sine":
        # amplitude * prod_i sin(pi x_i / L_i): a positive bump vanishing on the boundary
        scaled = mesh.nodes / np.asarray(mesh.extents)
        return float(spec["amplitude"]) * np.prod(np.sin(np.pi * scaled), axis=1)
    values = np.asarray(spec["values"], dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise ConfigError([f"field has {values.size} values, mesh has {mesh.n_nodes} nodes"])
    return values


def _diffusion(d):
    if d is None or d["kind"] == "constant":
        return ConstantDiffusion(1.0 if d is None else d["c"])
    return RationalBoundedDiffusion(d["a"], d["b"])


def _nonlinearity(d):
    params = {k: v for k, v in d.items() if k != "kind"}
    if "beta" in params and d["kind"] == "advect":
        params["beta"] = tuple(params["beta"])
    return NONLINEARITIES[d["kind"]](**params)


def _constraints(d):
    if d is None:
        return None
    blocks = tuple(BLOCKS[b["kind"]](**{k: v for k, v in b.items() if k != "kind"})
                   for b in d["blocks"])
    extra = {k: d[k] for k in ("penalty", "factor", "penalty_max", "target_violation", "feas_tol") if k in d}
    return ConstraintSpec(blocks, **extra)


def build_spec(cfg, **overrides):
    """ProblemSpec described by a validated config; ``overrides`` replace
    catalog entries (e.g. ``nonlinearity=...``)."""
    m = cfg["mesh"]
    try:
        mesh = build_mesh(m["dimension"], m["extents"], m["nx"], m.get("ny"),
                          dirichlet_sides=m.get("dirichlet", ()))
        ctrl = cfg["control"]
        if ctrl["kind"] == "distributed":
            ind = make_field(mesh, ctrl.get("indicator", {"kind": "constant", "value": 1.0}))
            control_map = DistributedControl(ind)
        else:
            control_map = TimeOnlyControl(make_field(mesh, ctrl["actuator"]))
        bounds = cfg.get("bounds", {})
        lo, up = bounds.get("lower"), bounds.get("upper")
        kwargs = dict(
            mesh=mesh, T=cfg["time"]["T"], N=cfg["time"]["N"],
            xi=_diffusion(cfg.get("diffusion")),
            mu=np.asarray(cfg.get("mu", 1.0), dtype=float),
            nonlinearity=_nonlinearity(cfg["nonlinearity"]),
            control_map=control_map,
            y0=make_field(mesh, cfg["y0"]),
            y_target=make_field(mesh, cfg["target"]),
            gamma=cfg["gamma"],
            u_low=-np.inf if lo is None else lo,
            u_up=np.inf if up is None else up,
            constraints=_constraints(cfg.get("constraints")),
            solver=SolverOptions(**cfg.get("solver", {})),
            optimizer=OptimizerOptions(**cfg.get("optimizer", {})),
        )
        kwargs.update(overrides)
        return ProblemSpec(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError([f"invalid problem data: {exc}"])
