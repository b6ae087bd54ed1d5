"""CLI verbs, config handling, artifact round-trips, exit codes."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from hjbvi.cli import main
from hjbvi.config import apply_overrides, load_config, resolve_rule
from hjbvi.exceptions import ConfigurationError


def write_config(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=1))
    return path


def zero_dyn_config(tmp_path: Path, **scheme) -> Path:
    cfg = {
        "model": {"kind": "zero_dynamics", "g0": 0.5, "c0": 0.2, "beta": 0.2,
                  "T": 1.0, "domain": [0.0, 1.0], "x0": 0.5},
        "scheme": {"h": 0.1, "dt_rule": 0.01, "eps_rule": 1.0, "theta": 0.025,
                   "cost": 0.001, **scheme},
        "output": {"formats": ["csv"]},
    }
    return write_config(tmp_path / "zero.json", cfg)


def bench_config(tmp_path: Path) -> Path:
    cfg = {
        "model": {"kind": "recursive_utility", "x0": 1.0, "controls": 2},
        "scheme": {"h": 0.04, "dt_rule": "h/15", "eps_rule": "h",
                   "theta": 0.025, "cost": 0.0015625},
        "study": {"h_values": [0.04, 0.02, 0.01]},
        "output": {"formats": ["csv"]},
    }
    return write_config(tmp_path / "bench.json", cfg)


def read_csv(path: Path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_resolve_rule_forms():
    assert resolve_rule("h", 0.02, "x") == 0.02
    assert resolve_rule("h/15", 0.03, "x") == pytest.approx(0.002)
    assert resolve_rule("2*h", 0.03, "x") == pytest.approx(0.06)
    assert resolve_rule("sqrt(h)", 0.04, "x") == pytest.approx(0.2)
    assert resolve_rule(0.125, 0.5, "x") == 0.125
    with pytest.raises(ConfigurationError):
        resolve_rule("h**2", 0.1, "x")


def test_apply_overrides_dotted_paths():
    raw = {"scheme": {"h": 0.1}}
    out = apply_overrides(raw, ["scheme.h=0.05", "model.kind=zero_dynamics",
                                "study.h_values=[0.1,0.05]"])
    assert out["scheme"]["h"] == 0.05
    assert out["model"]["kind"] == "zero_dynamics"
    assert out["study"]["h_values"] == [0.1, 0.05]
    assert raw["scheme"]["h"] == 0.1  # original untouched


def test_validate_config_verb(tmp_path):
    cfg = zero_dyn_config(tmp_path)
    assert main(["validate-config", "--config", str(cfg)]) == 0


def test_missing_required_key_exits_2(tmp_path, capsys):
    bad = write_config(tmp_path / "bad.json",
                       {"model": {"kind": "zero_dynamics"}, "scheme": {}})
    out_dir = tmp_path / "out"
    code = main(["solve", "--config", str(bad), "--out", str(out_dir)])
    assert code == 2
    assert not (out_dir / "summary.csv").exists()
    assert "scheme.h" in capsys.readouterr().err


def test_malformed_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["validate-config", "--config", str(bad)]) == 2
    assert "line" in capsys.readouterr().err


def test_solve_zero_dynamics_artifacts(tmp_path):
    cfg = zero_dyn_config(tmp_path)
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    summary = read_csv(out / "summary.csv")[0]
    assert float(summary["value"]) == pytest.approx(0.590635, abs=1e-3)
    assert (out / "surface.csv").exists()
    assert not (out / "policy.csv").exists()


def test_solve_record_policy_writes_policy(tmp_path):
    cfg = zero_dyn_config(tmp_path)
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out),
                 "--record-policy"]) == 0
    rows = read_csv(out / "policy.csv")
    assert {"t", "x", "alpha", "stopped"} <= set(rows[0])


def test_figures_rendered_when_png_format(tmp_path):
    cfg = zero_dyn_config(tmp_path)
    raw = json.loads(cfg.read_text())
    raw["output"]["formats"] = ["csv", "png"]
    write_config(cfg, raw)
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out),
                 "--record-policy"]) == 0
    assert (out / "surface.png").exists()
    assert (out / "policy.png").exists()


def test_csv_seventeen_digit_round_trip(tmp_path):
    cfg = zero_dyn_config(tmp_path)
    out = tmp_path / "out"
    main(["solve", "--config", str(cfg), "--out", str(out)])
    from hjbvi import SchemeParams, discretize_controls, solve, zero_dynamics_spec
    spec = zero_dynamics_spec(g0=0.5, c0=0.2, beta=0.2)
    params = SchemeParams(h=0.1, dt=0.01, epsilon=1.0, theta=0.025, cost=0.001)
    res = solve(spec, discretize_controls((0.0, 0.0), 1), params)
    exact_value = res.value(0.5)
    assert float(read_csv(out / "summary.csv")[0]["value"]) == exact_value


def test_config_round_trip_identical_surface(tmp_path):
    cfg = zero_dyn_config(tmp_path)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    main(["solve", "--config", str(cfg), "--out", str(out1)])
    main(["solve", "--config", str(cfg), "--out", str(out2)])
    assert (out1 / "surface.csv").read_bytes() == (out2 / "surface.csv").read_bytes()


def test_set_override_changes_run(tmp_path):
    cfg = zero_dyn_config(tmp_path)
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out),
                 "--set", "scheme.dt_rule=0.005"]) == 0
    assert float(read_csv(out / "summary.csv")[0]["dt"]) == 0.005


def test_mesh_study_structure_and_nan_markers(tmp_path):
    cfg = zero_dyn_config(tmp_path)
    raw = json.loads(cfg.read_text())
    raw["study"] = {"h_values": [0.1, 0.1, 0.1]}  # identical h: NaN ratios
    raw["scheme"]["dt_rule"] = 0.01
    write_config(cfg, raw)
    out = tmp_path / "out"
    assert main(["mesh-study", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "study.csv")
    assert len(rows) == 3
    assert rows[0]["increment"] == "NaN"
    assert float(rows[1]["increment"]) == 0.0
    assert rows[2]["ratio"] == "NaN"


def test_mesh_study_benchmark_ratio(tmp_path):
    cfg = bench_config(tmp_path)
    out = tmp_path / "out"
    assert main(["mesh-study", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "study.csv")
    assert len(rows) == 3
    ratio = float(rows[2]["ratio"])
    assert 1.8 < ratio < 2.3


def test_mesh_study_requires_three_h_values(tmp_path):
    cfg = zero_dyn_config(tmp_path)
    raw = json.loads(cfg.read_text())
    raw["study"] = {"h_values": [0.1, 0.05]}
    write_config(cfg, raw)
    assert main(["mesh-study", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == 2


def test_h_values_must_be_descending(tmp_path):
    cfg = zero_dyn_config(tmp_path)
    raw = json.loads(cfg.read_text())
    raw["study"] = {"h_values": [0.05, 0.1, 0.2]}
    write_config(cfg, raw)
    assert main(["mesh-study", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == 2


def test_control_study_self_difference_zero(tmp_path):
    cfg = bench_config(tmp_path)
    raw = json.loads(cfg.read_text())
    raw["study"] = {"j_values": [2, 3]}
    write_config(cfg, raw)
    out = tmp_path / "out"
    assert main(["control-study", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "study.csv")
    assert float(rows[-1]["diff_to_finest"]) == 0.0
    assert {"serial_time", "parallel_time", "speedup"} <= set(rows[0])


def test_solver_failure_exits_3(tmp_path, capsys):
    cfg = zero_dyn_config(tmp_path, picard_max=1)
    code = main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 3
    assert "component" in capsys.readouterr().err


def test_expressions_model_end_to_end(tmp_path):
    cfg = Path(__file__).resolve().parents[1] / "configs" / "expressions_example.json"
    out = tmp_path / "out"
    assert main(["validate-config", "--config", str(cfg)]) == 0
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    summary = read_csv(out / "summary.csv")[0]
    # bounded between obstacle level and a crude growth bound
    assert 0.3 <= float(summary["value"]) <= 1.5
    assert int(summary["J"]) == 3


def test_expressions_reject_unsafe_code(tmp_path):
    cfg = Path(__file__).resolve().parents[1] / "configs" / "expressions_example.json"
    raw = json.loads(Path(cfg).read_text())
    raw["model"]["coefficients"]["drift"] = "__import__('os').getcwd()"
    bad = write_config(tmp_path / "bad.json", raw)
    assert main(["validate-config", "--config", str(bad)]) == 2
