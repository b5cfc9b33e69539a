"""CSV and JSON artifacts.  Floats are written with repr(), which is the
shortest string that parses back to the same double."""
import csv
import json
import math
from pathlib import Path

import numpy as np

from .constraints import MultiplierSet
from .state_solver import Trajectory


def fmt(x):
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path, header):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        got = next(r, None)
        if got != list(header):
            raise ValueError(f"{path}: expected header {','.join(header)}, got {got}")
        return [row for row in r if row]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _time_index(spec, t, path):
    k = int(np.argmin(np.abs(spec.times - t)))
    if abs(spec.times[k] - t) > 1e-12 * max(1.0, spec.T):
        raise ValueError(f"{path}: time {t} is not on the time grid")
    return k


# ------------------------------------------------------------ trajectory

def write_trajectory(path, traj):
    rows = ((t, i, v) for t, y in zip(traj.times, traj.states) for i, v in enumerate(y))
    write_csv(path, ["t", "node_index", "value"], rows)


def read_trajectory(path, spec):
    rows = read_csv(path, ["t", "node_index", "value"])
    times = sorted({float(r[0]) for r in rows})
    states = np.full((len(times), spec.mesh.n_nodes), np.nan)
    pos = {t: k for k, t in enumerate(times)}
    for t, i, v in rows:
        states[pos[float(t)], int(i)] = float(v)
    if np.isnan(states).any():
        raise ValueError(f"{path}: incomplete trajectory")
    return Trajectory(np.array(times), states)


# ------------------------------------------------------------ control

def write_control(path, spec, u):
    """Row k of ``u`` acts on the step ending at t_{k+1}."""
    rows = ((spec.times[k + 1], i, v) for k, uk in enumerate(u) for i, v in enumerate(uk))
    write_csv(path, ["t", "index", "value"], rows)


def read_control(path, spec):
    u = np.full(spec.control_shape, np.nan)
    for t, i, v in read_csv(path, ["t", "index", "value"]):
        k = _time_index(spec, float(t), path)
        if k == 0:
            raise ValueError(f"{path}: controls start at the first step, not t=0")
        u[k - 1, int(i)] = float(v)
    if np.isnan(u).any():
        raise ValueError(f"{path}: incomplete control")
    return u


# ------------------------------------------------------------ multipliers

MULTIPLIER_COLUMNS = {
    "avg_in_space": ("index", "lambda"),
    "pointwise": ("element", "nu"),
    "componentwise": ("index", "nu"),
    "zero_order": ("index", "mu"),
}


def multiplier_path(directory, name):
    return Path(directory) / f"multipliers_{name}.csv"


def write_multipliers(directory, spec, mult):
    """One CSV per block.  Entries are flattened block positions; the
    terminal atom is a row at t = T with atom = 1."""
    for name, lam, atom in zip(mult.names, mult.interior, mult.atom):
        idx, val = MULTIPLIER_COLUMNS[name]
        rows = [(t, i, v, 0) for t, lk in zip(spec.times, lam) for i, v in enumerate(np.ravel(lk))]
        rows += [(spec.times[-1], i, v, 1) for i, v in enumerate(np.ravel(atom))]
        write_csv(multiplier_path(directory, name), ["t", idx, val, "atom"], rows)


def read_multipliers(directory, spec, penalty=None):
    cs = spec.constraints
    names, interior, atoms = [], [], []
    for block, bound in zip(cs.blocks, cs.bounds(spec)):
        path = multiplier_path(directory, block.name)
        idx, val = MULTIPLIER_COLUMNS[block.name]
        shape = bound.shape[1:]
        size = int(np.prod(shape))
        lam = np.full((spec.N + 1, size), np.nan)
        atom = np.full(size, np.nan)
        for t, i, v, a in read_csv(path, ["t", idx, val, "atom"]):
            if int(a):
                atom[int(i)] = float(v)
            else:
                lam[_time_index(spec, float(t), path), int(i)] = float(v)
        if np.isnan(lam).any() or np.isnan(atom).any():
            raise ValueError(f"{path}: incomplete multipliers")
        names.append(block.name)
        interior.append(lam.reshape((spec.N + 1,) + shape))
        atoms.append(atom.reshape(shape))
    return MultiplierSet(tuple(names), interior, atoms, penalty)


# ------------------------------------------------------------ history

HISTORY_COLUMNS = ("iter", "obj", "penalty", "viol", "pg_residual", "step")


def write_history(path, history):
    write_csv(path, HISTORY_COLUMNS, ([h[c] for c in HISTORY_COLUMNS] for h in history))
