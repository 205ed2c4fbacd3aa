import json

import pytest

from opiniondrift.cli import main

UNIFORM = {"type": "uniform", "lo": -1.0, "hi": 1.0, "mass": 1.0}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_simulate_consensus(tmp_path, monkeypatch):
    monkeypatch.delenv("OPINIONDRIFT_OUT", raising=False)
    cfg = write(tmp_path, {"initial": {"lo": -0.4, "hi": 0.4}, "r": 0.5, "n_cells": 400})
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["consensus"] is True
    assert summary["termination"] == "converged"
    assert abs(summary["clusters"][0]["position"]) <= 1e-9
    rows = (out / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "step,cell_left,cell_right,mass"
    assert rows[1].startswith("0,")


def test_simulate_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.delenv("OPINIONDRIFT_OUT", raising=False)
    cfg = write(tmp_path, {"initial": UNIFORM, "r": 0.2, "n_cells": 300, "rng_seed": 7, "check_bilipschitz": True})
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", cfg, "--out", str(a)])
    main(["simulate", "--config", cfg, "--out", str(b)])
    for name in ("trajectory.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert b"\r\n" not in (a / "trajectory.csv").read_bytes()


def test_max_steps_exit_code(tmp_path, monkeypatch):
    monkeypatch.delenv("OPINIONDRIFT_OUT", raising=False)
    cfg = write(tmp_path, {"initial": UNIFORM, "r": 0.1, "n_cells": 200, "max_steps": 3})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize(
    "cfg, field",
    [
        ({"r": 0.1}, "initial"),
        ({"initial": {"lo": 1, "hi": 0}, "r": 0.1}, "initial"),
        ({"initial": UNIFORM, "r": "wide"}, "r"),
        ({"initial": UNIFORM, "r": 0.1, "n_cells": 2.5}, "n_cells"),
        ({"initial": UNIFORM, "r": 0.1, "schedule": {"type": "constant", "mean": 0}}, "schedule"),
    ],
)
def test_malformed_config_writes_nothing(tmp_path, monkeypatch, capsys, cfg, field):
    monkeypatch.delenv("OPINIONDRIFT_OUT", raising=False)
    out = tmp_path / "out"
    assert main(["simulate", "--config", write(tmp_path, cfg), "--out", str(out)]) == 1
    assert not out.exists()
    assert field in capsys.readouterr().err


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


def test_env_overrides_out(tmp_path, monkeypatch):
    env_dir = tmp_path / "env"
    monkeypatch.setenv("OPINIONDRIFT_OUT", str(env_dir))
    cfg = write(tmp_path, {"initial": {"lo": -0.2, "hi": 0.2}, "r": 0.5, "n_cells": 100})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "flag")]) == 0
    assert (env_dir / "summary.json").exists()
    assert not (tmp_path / "flag").exists()


def test_sweep_command(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("OPINIONDRIFT_OUT", raising=False)
    sig = [round(0.01 * i, 2) for i in range(1, 18)]
    cfg = write(tmp_path, {"initial": UNIFORM, "n_cells": 500, "sweep": {"sigma": sig, "r": 0.1}})
    out = tmp_path / "o"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--jobs", "2"]) == 0
    assert len((out / "sweep.csv").read_text().splitlines()) == 18
    fit = json.loads((out / "fit.json").read_text())
    assert fit["a"] > 0
    assert {"a", "b", "c", "r_squared", "n_points", "filtered_out"} <= fit.keys()
    assert "R^2" in capsys.readouterr().out


def test_attraction_range_command(tmp_path, monkeypatch):
    monkeypatch.delenv("OPINIONDRIFT_OUT", raising=False)
    cfg = write(tmp_path, {"initial": UNIFORM, "r": 0.1, "n_cells": 500, "attraction_range": {"mean": 0, "sigma": 0.04}})
    out = tmp_path / "o"
    assert main(["attraction-range", "--config", cfg, "--out", str(out)]) == 0
    res = json.loads((out / "attraction_range.json").read_text())
    assert res["interval"][0] < 0 < res["interval"][1]


def test_attraction_range_needs_section(tmp_path, capsys):
    cfg = write(tmp_path, {"initial": UNIFORM, "r": 0.1})
    assert main(["attraction-range", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "attraction_range" in capsys.readouterr().err


def test_compare_command(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("OPINIONDRIFT_OUT", raising=False)
    direct = {"type": "phased", "phases": [{"until_step": 25, "mean": 0.2, "sigma": 0.1}]}
    distracting = {
        "type": "phased",
        "phases": [{"until_step": 12, "mean": -0.2, "sigma": 0.1}, {"until_step": 25, "mean": 0.2, "sigma": 0.1}],
    }
    cfg = write(tmp_path, {"initial": UNIFORM, "r": 0.3, "n_cells": 1000, "compare": {"direct": direct, "distracting": distracting}})
    out = tmp_path / "o"
    assert main(["compare", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "compare.json").read_text())
    assert rep["winner"] == "distracting"
    assert (out / "direct_trajectory.csv").exists()


def test_oracle_check_small(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("OPINIONDRIFT_OUT", raising=False)
    cfg = write(tmp_path, {"initial": {"lo": -0.4, "hi": 0.4}, "r": 0.5, "n_cells": 500, "oracle": {"n_agents": 1000}})
    out = tmp_path / "o"
    assert main(["oracle-check", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "oracle_summary.json").read_text())
    assert summary["engine"] == "lagrangian"
    assert summary["pass"] is True
    assert "PASS" in capsys.readouterr().out
