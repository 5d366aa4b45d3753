import csv
import json
import subprocess
import sys

import pytest

from aggnash.cli import main
from aggnash.errors import ConfigError
from aggnash.scenario import PRESETS, ScenarioConfig, run_scenario, sweep

PAIR = {"preset": "lq-game", "params": {"N": 2, "c": [1, 2], "d": 0.1}}
K2 = {"nodes": 2, "graphs": [[0, 1, 1, 0]], "segments": [[0, 1.0]]}
FAST = {"h": 0.01, "t_end": 300.0, "record_dt": 0.5}


def write(tmp_path, name, payload):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("AGGNASH_OUTPUT_ROOT", str(tmp_path / "root"))
    return tmp_path / "root"


def test_presets_validate():
    for name in PRESETS:
        ScenarioConfig.load(name)


def test_presets_verb(capsys):
    assert main(["presets"]) == 0
    assert "lq-n5-partition2" in capsys.readouterr().out.split()


def test_run_pair_passes(tmp_path, out_root):
    cfg = write(tmp_path, "c.json", {"name": "pair", "game": PAIR, "schedule": K2,
                                     "integration": FAST})
    assert main(["run", cfg]) == 0
    run_dir = out_root / "runs" / "pair"
    report = json.loads((run_dir / "report.json").read_text())
    assert report["pass"] is True
    assert report["params"]["delta_over_delta_star"] == pytest.approx(0.5)
    assert report["params"]["auto_factor"] == 0.5
    assert json.loads((run_dir / "assumptions.json").read_text())["passed"]
    header = (run_dir / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,graph_idx,x_0,x_1,s_0,s_1,nu_0,nu_1"


def test_out_flag_overrides_root(tmp_path, out_root):
    cfg = write(tmp_path, "c.json", {"game": PAIR, "schedule": K2, "integration": FAST})
    assert main(["run", cfg, "--out", str(tmp_path / "here")]) == 0
    assert (tmp_path / "here" / "report.json").exists()


@pytest.mark.parametrize("payload", [
    {"game": PAIR},
    {"game": PAIR, "schedule": K2, "params": {"delta": -1}},
    {"game": PAIR, "schedule": K2, "bogus": 1},
    {"game": {"preset": "nope"}, "schedule": K2},
    {"game": PAIR, "schedule": K2, "analysis": {"tolerances": {"bogus": 1}}},
    {"game": PAIR, "schedule": {"generator": "ring-partition", "N": 2}},
])
def test_schema_errors_exit_2(tmp_path, out_root, payload):
    assert main(["run", write(tmp_path, "c.json", payload)]) == 2


def test_missing_and_malformed_config(tmp_path, out_root):
    assert main(["run", str(tmp_path / "absent.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 2


def test_unbalanced_graph_exit_3(tmp_path, out_root, capsys):
    cfg = write(tmp_path, "c.json", {"name": "edge", "game": PAIR, "schedule":
                                     {"nodes": 2, "graphs": [[0, 0, 1, 0]],
                                      "segments": [[0, 1.0]]}})
    assert main(["run", cfg]) == 3
    assert "Assumption 4.2" in capsys.readouterr().err
    rec = json.loads((out_root / "runs" / "edge" / "assumptions.json").read_text())
    assert rec["violation"] == "Assumption 4.2"
    assert not (out_root / "runs" / "edge" / "trajectory.csv").exists()


def test_nonzero_nu_sum_exit_3(tmp_path, out_root, capsys):
    cfg = write(tmp_path, "c.json", {"game": PAIR, "schedule": K2,
                                     "initial": {"x": [0, 0], "nu": [1, 0]}})
    assert main(["run", cfg]) == 3
    assert "Theorem 1 initial condition" in capsys.readouterr().err


def test_disconnected_exit_3(tmp_path, out_root, capsys):
    sched = {"nodes": 3, "graphs": [[0, 1, 0, 1, 0, 0, 0, 0, 0]], "segments": [[0, 1.0]]}
    cfg = write(tmp_path, "c.json", {"game": {"preset": "lq-game", "params": {"N": 3}},
                                     "schedule": sched})
    assert main(["check", cfg]) == 3
    assert "Assumption 4.1" in capsys.readouterr().err


def test_non_monotone_game_exit_3(tmp_path, out_root, capsys):
    game = {"preset": "lq-game", "params": {"N": 2, "d": -4.0}}
    cfg = write(tmp_path, "c.json", {"game": game, "schedule": K2,
                                     "constants_box": {"n_samples": 500}})
    assert main(["run", cfg]) == 3
    assert "Assumption 1.3" in capsys.readouterr().err


def test_divergence_exit_4(tmp_path, out_root):
    cfg = write(tmp_path, "c.json", {"name": "div", "game": PAIR, "schedule": K2,
                                     "params": {"delta": 5000},
                                     "integration": {"t_end": 5.0}})
    assert main(["run", cfg]) == 4
    report = json.loads((out_root / "runs" / "div" / "report.json").read_text())
    assert report["pass"] is False
    assert report["convergence"]["diverged_at"] > 0


def test_failed_checks_exit_1(tmp_path, out_root):
    cfg = write(tmp_path, "c.json", {"game": PAIR, "schedule": K2,
                                     "integration": {"h": 0.01, "t_end": 5.0}})
    assert main(["run", cfg]) == 1


def test_check_verb(tmp_path, out_root):
    cfg = write(tmp_path, "c.json", {"name": "chk", "game": PAIR, "schedule": K2})
    assert main(["check", cfg]) == 0
    rec = json.loads((out_root / "runs" / "chk" / "assumptions.json").read_text())
    assert rec["assumption_4_1_joint_connectivity"]["passed"]
    assert rec["constants"]["mu"] == pytest.approx(1.05, abs=1e-3)
    assert not (out_root / "runs" / "chk" / "trajectory.csv").exists()


def test_delta_star_verb(tmp_path, out_root, capsys):
    cfg = write(tmp_path, "c.json", {"game": PAIR, "schedule": K2,
                                     "constants": {"mu": 1, "theta": 1.15,
                                                   "theta_hat": 0.1, "ell": 1}})
    assert main(["delta-star", cfg]) == 0
    out = json.loads(capsys.readouterr().out.split("\ndelta-star:")[0])
    assert out["constants"]["theta"] == 1.15
    p = out["lyapunov"]["p_hat"]
    M = 2 * p * 2 ** 0.5
    assert out["M"] == pytest.approx(M)
    assert out["delta_star"] == pytest.approx(4 / ((0.1 + 1.15 * M) ** 2 + 0.4 * M))


def _summary(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_empty_grid(tmp_path, out_root):
    cfg = write(tmp_path, "c.json", {"name": "sw", "game": PAIR, "schedule": K2})
    grid = write(tmp_path, "g.json", {})
    assert main(["sweep", cfg, "--grid", grid]) == 0
    text = (out_root / "runs" / "sw" / "summary.csv").read_text().splitlines()
    assert len(text) == 1 and text[0].startswith("run,")
    grid = write(tmp_path, "g2.json", {"alpha": []})
    assert main(["sweep", cfg, "--grid", grid]) == 0


def test_sweep_records_failures(tmp_path, out_root):
    cfg = write(tmp_path, "c.json", {"name": "sw", "game": PAIR, "schedule": K2,
                                     "integration": FAST})
    grid = write(tmp_path, "g.json", {"delta": [0.05, 5000.0]})
    assert main(["sweep", cfg, "--grid", grid]) == 1
    rows = _summary(out_root / "runs" / "sw" / "summary.csv")
    assert [r["exit_code"] for r in rows] == ["0", "4"]
    assert (out_root / "runs" / "sw" / "run_001" / "report.json").exists()


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = ScenarioConfig.from_dict({"game": PAIR, "schedule": K2, "integration": FAST})
    grid = {"alpha": [0.5, 2.0], "beta": [1.0]}
    a = sweep(cfg, grid, tmp_path / "a", jobs=1)
    b = sweep(cfg, grid, tmp_path / "b", jobs=2)
    assert a == b
    assert (tmp_path / "a" / "summary.csv").read_text() == \
        (tmp_path / "b" / "summary.csv").read_text()
    assert all(r["pass"] for r in a)


def test_sweep_grid_validation(tmp_path):
    cfg = ScenarioConfig.from_dict({"game": PAIR, "schedule": K2})
    with pytest.raises(ConfigError):
        sweep(cfg, {"gamma": [1]}, tmp_path)
    with pytest.raises(ConfigError):
        sweep(cfg, {"delta": [0.1], "delta_factor": [0.5]}, tmp_path)
    with pytest.raises(ConfigError):
        sweep(cfg, {"segment_len": [0.5]}, tmp_path)


def test_sweep_segment_len(tmp_path):
    cfg = ScenarioConfig.from_dict({
        "game": {"preset": "lq-game", "params": {"N": 3}},
        "schedule": {"generator": "ring-partition", "N": 3, "n_parts": 3},
        "integration": {"h": 0.01, "t_end": 600.0, "record_dt": 1.0}})
    rows = sweep(cfg, {"segment_len": [0.25, 1.0]}, tmp_path)
    assert [r["exit_code"] for r in rows] == [0, 0]
    assert rows[0]["delta_star"] != rows[1]["delta_star"]


def test_scenario_hash_ignores_output():
    a = ScenarioConfig.from_dict({"game": PAIR, "schedule": K2, "output": "x"})
    b = ScenarioConfig.from_dict({"game": PAIR, "schedule": K2, "output": "y"})
    c = ScenarioConfig.from_dict({"game": PAIR, "schedule": K2, "seed": 1})
    assert a.scenario_hash() == b.scenario_hash() != c.scenario_hash()


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "aggnash", "presets"],
                         capture_output=True, text=True, check=True)
    assert "lq-n5-complete" in out.stdout


def test_run_scenario_outcome(tmp_path):
    cfg = ScenarioConfig.from_dict({"game": PAIR, "schedule": K2, "integration": FAST,
                                    "params": {"delta": 0.04}})
    res = run_scenario(cfg, tmp_path)
    assert res.exit_code == 0
    assert res.payload["params"]["delta_mode"] == "fixed"
    assert res.payload["params"]["delta"] == 0.04
