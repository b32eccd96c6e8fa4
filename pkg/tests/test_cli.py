import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from sdrobust.cli import main
from sdrobust.config import build_system, initial_state, load_config, resolve_config
from sdrobust.errors import ConfigError

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
SCALAR_RADIUS = {
    "system": {"kind": "custom", "eigenvalues": [0.0]},
    "perturbation": {"d": [1.0], "H": [1.0]},
    "loop": {"b": [1.0], "F": [-1.0], "tau": 1.0},
    "analysis": {"tol_c": 1e-6},
}


def write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_defaults_are_filled():
    cfg = resolve_config({})
    assert cfg["system"]["kind"] == "heat" and cfg.N == 64
    assert cfg["analysis"]["fd"]["G"] == 401


def test_unknown_and_invalid_keys_all_reported():
    with pytest.raises(ConfigError) as info:
        resolve_config({"loop": {"tau": -1, "speed": 3}, "extra": {}, "system": {"N": 0, "kind": "heat"},
                        "analysis": {"fd": {"G": 10, "grid": 1}}})
    text = str(info.value)
    for key in ("loop.tau", "loop.speed", "extra", "system.N", "analysis.fd.G", "analysis.fd.grid"):
        assert key in text
    assert len(info.value.problems) == 6


def test_custom_requires_inputs():
    with pytest.raises(ConfigError) as info:
        resolve_config({"system": {"kind": "custom", "eigenvalues": [0.0]}, "perturbation": {"d": [1.0]}})
    text = str(info.value)
    assert "loop.b" in text and "loop.F" in text and "perturbation" in text


def test_diagonal_admissibility_is_config_error():
    with pytest.raises(ConfigError, match="system.q"):
        resolve_config({"system": {"kind": "diagonal", "gamma": 1.0, "q": 1.5}})


def test_coefficient_lists_are_padded():
    cfg = resolve_config({"system": {"N": 6}, "loop": {"F": [-2.0]}, "analysis": {"x0": [1.0, 2.0]}})
    sys_ = build_system(cfg)
    np.testing.assert_array_equal(sys_.F.coefficients, [-2.0, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(initial_state(cfg), [1.0, 2.0, 0, 0, 0, 0])


def test_seeded_initial_state():
    a = initial_state(resolve_config({"analysis": {"seed": 3}}))
    b = initial_state(resolve_config({"analysis": {"seed": 3}}))
    c = initial_state(resolve_config({"analysis": {"seed": 4}}))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.linalg.norm(a) == pytest.approx(1.0)


def test_shipped_scenarios_load():
    for path in sorted(SCENARIOS.glob("*.yaml")):
        build_system(load_config(path))


def test_simulate_writes_outputs(tmp_path):
    out = tmp_path / "o"
    assert run("simulate", "--config", SCENARIOS / "heat.yaml", "--out", out, "--truncation", 16) == 0
    report = json.loads((out / "simulate_report.json").read_text())
    assert report["status"] == "ok"
    assert report["config"]["system"]["N"] == 16
    assert report["config"]["analysis"]["prescan"] == 32  # defaults echoed
    assert report["report"]["truncation_N"] == 16
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("time,norm,coeff_0")


def test_simulate_bad_tau(tmp_path, capsys):
    cfg = write(tmp_path, {"loop": {"tau": -1}})
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "tau" in capsys.readouterr().err


def test_simulate_deadbeat(tmp_path):
    out = tmp_path / "o"
    assert run("simulate", "--config", SCENARIOS / "scalar_deadbeat.yaml", "--out", out) == 0
    rows = (out / "trajectory.csv").read_text().splitlines()[1:]
    assert rows[0] == "0,1,1"
    assert all(r.split(",")[1:] == ["0", "0"] for r in rows[1:])
    report = json.loads((out / "simulate_report.json").read_text())
    assert report["report"]["fit_deadbeat"] and report["report"]["fit_theta"] == 0.0


def test_simulate_overflow(tmp_path):
    cfg = write(tmp_path, {"system": {"kind": "custom", "eigenvalues": [5.0]},
                           "loop": {"b": [1.0], "F": [0.0], "tau": 1.0}, "analysis": {"x0": [1.0]}})
    out = tmp_path / "o"
    assert run("simulate", "--config", cfg, "--out", out) == 3
    assert json.loads((out / "simulate_report.json").read_text())["period"] == 6


def test_determinism(tmp_path):
    for k in (1, 2):
        assert run("simulate", "--config", SCENARIOS / "heat.yaml", "--out", tmp_path / "o", "--seed", 11) == 0
        (tmp_path / "o").rename(tmp_path / f"o{k}")
    for name in ("trajectory.csv", "simulate_report.json"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()


def test_analyze_reports_doubling(tmp_path):
    out = tmp_path / "o"
    assert run("analyze", "--config", SCENARIOS / "heat.yaml", "--out", out) == 0
    report = json.loads((out / "analyze_report.json").read_text())
    assert report["doubling"]["truncation_N"] == 64
    assert report["doubling"]["change"] < 1e-6


def test_radius_scalar(tmp_path):
    out = tmp_path / "o"
    assert run("radius", "--config", write(tmp_path, SCALAR_RADIUS), "--out", out) == 0
    report = json.loads((out / "radius_report.json").read_text())["report"]
    assert abs(report["c_hat_star"] - 1.0) <= 1e-6
    lines = (out / "radius_curve.csv").read_text().splitlines()
    assert lines[0] == "c,spectral_radius,sup_T_diff,sup_S_diff"


def test_radius_nominal_unstable(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("radius", "--config", SCENARIOS / "heat_no_feedback.yaml", "--out", out, "--truncation", 16) == 4
    assert "spectral radius 1" in capsys.readouterr().err
    report = json.loads((out / "radius_report.json").read_text())
    assert report["nominal_spectral_radius"] == 1.0


def test_radius_zero_direction(tmp_path):
    out = tmp_path / "o"
    assert run("radius", "--config", SCENARIOS / "heat_zero_d.yaml", "--out", out) == 0
    report = json.loads((out / "radius_report.json").read_text())["report"]
    assert report["note"] == "no crossing below c_max" and report["c_hat_star"] == 1.0


def test_sweep_workers_do_not_change_output(tmp_path):
    for w in (1, 3):
        assert run("sweep", "--config", SCENARIOS / "heat.yaml", "--out", tmp_path / f"w{w}",
                   "--truncation", 16, "--workers", w) == 0
    a = (tmp_path / "w1" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "w3" / "sweep.csv").read_bytes()
    assert len(a.decode().splitlines()) == 5


def test_validate(tmp_path, capsys):
    assert run("validate", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "validate_report.json").read_text())["suites"]
    capsys.readouterr()
    assert run("validate", "--inject-defect", "eta_consistency") == 1
    captured = capsys.readouterr()
    assert "FAIL  eta_consistency" in captured.out
    assert "eta_consistency" in captured.err


def test_validate_double_n(capsys):
    assert run("validate", "--double-N", "--truncation", 16) == 0
    out = capsys.readouterr().out
    assert "truncation sensitivity" in out
    assert any(line.split()[:1] == ["32"] for line in out.splitlines())


def test_heat_demo(tmp_path):
    out = tmp_path / "o"
    cfg = write(tmp_path, {"system": {"N": 32}, "perturbation": {"c": 0.05}, "analysis": {"periods": 5}})
    assert run("heat-demo", "--config", cfg, "--out", out) == 0
    report = json.loads((out / "heat_demo_report.json").read_text())
    assert report["max_relative_gap"] <= 1e-3
    assert (out / "fd_trajectory.csv").exists() and (out / "spectral_trajectory.csv").exists()


def test_heat_demo_needs_heat(tmp_path):
    assert run("heat-demo", "--config", SCENARIOS / "diagonal.yaml", "--out", tmp_path) == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "sdrobust.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
