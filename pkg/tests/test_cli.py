import csv
import json
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradctl import io
from gradctl.cli import main
from gradctl.config import SCHEMA, ConfigError, validate

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "schema_version": 1,
    "mesh": {"dimension": 1, "extents": [1.0], "nx": 8, "dirichlet": ["left", "right"]},
    "time": {"T": 0.3, "N": 6},
    "nonlinearity": {"kind": "quad_grad"},
    "control": {"kind": "time_only", "actuator": {"kind": "sine", "amplitude": 1.0}},
    "y0": {"kind": "zero"},
    "target": {"kind": "sine", "amplitude": 2.0},
    "gamma": 0.05,
    "constraints": {"blocks": [{"kind": "avg_in_space", "q": 2, "bound": 0.05}]},
    "seed": 3,
}


def write(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run(*args):
    return main([str(a) for a in args])


@pytest.mark.parametrize("field", SCHEMA["required"])
def test_missing_required_field_is_named(tmp_path, capsys, field):
    cfg = {k: v for k, v in SMALL.items() if k != field}
    assert run("solve-state", "--config", write(tmp_path, cfg), "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert f"missing required field '{field}'" in err


def test_each_missing_field_gets_its_own_diagnostic():
    cfg = {"mesh": {"dimension": 1, "extents": [1.0]}}
    with pytest.raises(ConfigError) as exc:
        validate(cfg)
    msgs = exc.value.messages
    assert len(msgs) == len(set(msgs))
    for field in set(SCHEMA["required"]) - {"mesh"}:
        assert any(f"'{field}'" in m for m in msgs)
    assert "mesh: missing required field 'nx'" in msgs


@pytest.mark.parametrize("patch, expected", [
    ({"colour": "red"}, "unknown key 'colour'"),
    ({"time": {"T": 1.0, "N": 4, "dt": 0.1}}, "time: unknown key 'dt'"),
    ({"nonlinearity": {"kind": "kawohl", "lam": 1.0}}, "nonlinearity: missing required field 'r'"),
    ({"nonlinearity": {"kind": "cubic"}}, "unknown kind 'cubic'"),
    ({"schema_version": 2}, "schema_version"),
    ({"gamma": -1.0}, "gamma"),
])
def test_invalid_configs_rejected(tmp_path, capsys, patch, expected):
    cfg = dict(SMALL, **patch)
    assert run("solve-state", "--config", write(tmp_path, cfg), "--out", tmp_path / "o") == 2
    assert expected in capsys.readouterr().err


def test_example_zero_state(tmp_path):
    assert run("solve-state", "--config", CONFIGS / "example52.json", "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "global" and summary["T_estimate"] == 1.0
    assert summary["diagnostics"]["max_abs_state"] == 0.0
    with open(tmp_path / "trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "node_index", "value"]
    assert all(float(r[2]) == 0.0 for r in rows[1:])


def test_kawohl_config_blows_up(tmp_path):
    assert run("solve-state", "--config", CONFIGS / "kawohl_blowup.json", "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "blowup" and summary["T_estimate"] < 1.0


def test_blowup_scan(tmp_path):
    assert run("blowup-scan", "--config", CONFIGS / "kawohl_blowup.json", "--out", tmp_path) == 0
    with open(tmp_path / "blowup_scan.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["status"] for r in rows] == ["global", "blowup", "blowup"]
    T = [float(r["T_estimate"]) for r in rows]
    assert T[0] == 1.0 and T[1] > T[2]


def test_optimize_then_check_kkt_round_trip(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "opt"
    assert run("optimize", "--config", cfg, "--out", out) == 0
    for name in ("control.csv", "trajectory.csv", "history.csv", "multipliers_avg_in_space.csv"):
        assert (out / name).exists()
    with open(out / "history.csv") as fh:
        assert next(csv.reader(fh)) == list(io.HISTORY_COLUMNS)
    assert run("check-kkt", "--config", cfg, "--out", tmp_path / "kkt", "--artifacts", out) == 0
    report = json.loads((tmp_path / "kkt" / "kkt_report.json").read_text())
    assert report["passed"] and all(report["verdict"].values())

    # a tampered multiplier file must fail the check
    path = out / "multipliers_avg_in_space.csv"
    lines = path.read_text().splitlines()
    t, i, lam, atom = lines[2].split(",")
    lines[2] = ",".join([t, i, "-1e-3", atom])
    path.write_text("\n".join(lines) + "\n")
    assert run("check-kkt", "--config", cfg, "--out", tmp_path / "kkt2", "--artifacts", out) == 1


def test_outputs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL)
    for sub in ("a", "b"):
        assert run("optimize", "--config", cfg, "--out", tmp_path / sub) == 0
    for name in ("control.csv", "trajectory.csv", "history.csv", "multipliers_avg_in_space.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_control_file_input_reproduces_trajectory(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert run("optimize", "--config", cfg, "--out", tmp_path / "opt") == 0
    cfg2 = write(tmp_path, dict(SMALL, control_input={"kind": "file", "path": "opt/control.csv"}), "c2.json")
    assert run("solve-state", "--config", cfg2, "--out", tmp_path / "ss") == 0
    assert (tmp_path / "ss" / "trajectory.csv").read_bytes() == (tmp_path / "opt" / "trajectory.csv").read_bytes()


def test_grad_check(tmp_path):
    assert run("grad-check", "--config", CONFIGS / "grad_check_quadgrad.json", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "grad_check.json").read_text())
    assert report["passed"] and report["max_rel_error"] <= 1e-5 and len(report["directions"]) == 10
    assert report["penalty_value"] > 0


def test_seed_flag_overrides_config(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("grad-check", "--config", CONFIGS / "grad_check_quadgrad.json", "--out", a, "--seed", "1")
    run("grad-check", "--config", CONFIGS / "grad_check_quadgrad.json", "--out", b, "--seed", "2")
    ra, rb = (json.loads((d / "grad_check.json").read_text()) for d in (a, b))
    assert ra["seed"] == 1 and rb["seed"] == 2
    assert ra["directions"][0]["adjoint"] != rb["directions"][0]["adjoint"]


def test_slater_check(tmp_path):
    assert run("slater-check", "--config", CONFIGS / "example52.json", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "slater.json").read_text())
    assert report["margin"] == 1.0 and report["certified"]


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_format_round_trips(x):
    assert float(io.fmt(x)) == x
