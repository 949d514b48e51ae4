import json

import pytest

from tokencontrol.harness import config as cfg
from tokencontrol.harness.cli import main


def write(path, data):
    path.write_text(json.dumps(data))
    return path


SCEN = {"schema_version": 1, "kind": "scenario", "pattern": "sigmoid", "family": "supply-leads",
        "controller": "mpc-ilqr", "horizon_total": 12, "mpc_horizon": 4}


def test_validate_ok_and_bad(tmp_path, capsys):
    assert main(["validate", str(write(tmp_path / "s.json", SCEN))]) == 0
    bad = dict(SCEN, controller="magic", mpc_horizon=0)
    assert main(["validate", str(write(tmp_path / "b.json", bad))]) == 2
    err = capsys.readouterr().err
    assert "controller" in err and "mpc_horizon" in err
    assert main(["validate", str(write(tmp_path / "v.json", dict(SCEN, schema_version=2)))]) == 2
    assert main(["validate", str(write(tmp_path / "h.json", dict(SCEN, mpc_horizon=20)))]) == 2
    (tmp_path / "j.json").write_text("{not json")
    assert main(["validate", str(tmp_path / "j.json")]) == 2


def test_simulate_writes_log(tmp_path, capsys):
    s = write(tmp_path / "s.json", SCEN)
    out = tmp_path / "out"
    assert main(["simulate", str(s), "--out-dir", str(out), "--seed", "3"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["controller"] == "mpc-ilqr" and summary["steps"] == 12
    assert (out / "run_log.csv").read_text().startswith("t,S,R_usd,R_tok,p,u_b,u_p,dp,alpha,stage_cost\n")
    assert main(["--solver", "scp", "simulate", str(s), "--out-dir", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["controller"] == "mpc-scp"


def test_seed_flag_changes_realization(tmp_path, capsys):
    s = write(tmp_path / "s.json", dict(SCEN, controller="none"))
    main(["simulate", str(s), "--out-dir", str(tmp_path), "--seed", "1"])
    a = json.loads(capsys.readouterr().out)["total_cost"]
    main(["simulate", str(s), "--out-dir", str(tmp_path), "--seed", "2"])
    b = json.loads(capsys.readouterr().out)["total_cost"]
    assert a != b


def test_game_command(tmp_path, capsys):
    s = write(tmp_path / "g.json", dict(SCEN, controller="mpc-bilevel", horizon_total=4, mpc_horizon=4,
                                        reserve_usd=5000, noise_std=0.0))
    assert main(["game", str(s), "--out-dir", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["max_kkt_residual"] < 1e-6
    assert (tmp_path / "game.csv").read_text().startswith("t,dp_star,alpha_star,utility,branch\n")


def test_forecast_command(tmp_path, capsys):
    rows = ["t,nodes,consumers"] + [f"{t},{10 + t},{100 + 2 * t + (t % 3)}" for t in range(30)]
    (tmp_path / "n.csv").write_text("\n".join(rows) + "\n")
    assert main(["forecast", str(tmp_path / "n.csv"), "--horizon", "4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("step,consumers_mean") and len(lines) == 5
    (tmp_path / "m.csv").write_text("t,consumers\n0,1\n")
    assert main(["forecast", str(tmp_path / "m.csv"), "--horizon", "4"]) == 2
    assert "nodes" in capsys.readouterr().err
    (tmp_path / "p.csv").write_text("t,nodes,consumers\n0,1,x\n")
    assert main(["forecast", str(tmp_path / "p.csv"), "--horizon", "4"]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["forecast", str(tmp_path / "n.csv"), "--horizon", "0"]) == 2


def test_compare_command(tmp_path, capsys):
    exp = {"schema_version": 1, "kind": "experiment", "patterns": ["sigmoid"], "families": ["balanced"],
           "seeds": [0, 1], "controllers": ["none", "pid"], "scenario": {"horizon_total": 10, "mpc_horizon": 3}}
    e = write(tmp_path / "e.json", exp)
    assert main(["compare", str(e), "--out-dir", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "summary.csv").exists() and (tmp_path / "r" / "cost_boxplot.svg").exists()
    # two pairs are too few for a signed-rank test: reported, not fatal
    assert "degenerate" in capsys.readouterr().out


def test_runtime_failure_exit_code(tmp_path, monkeypatch):
    s = write(tmp_path / "s.json", SCEN)

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr("tokencontrol.simulate.run_closed_loop", boom)
    assert main(["simulate", str(s), "--out-dir", str(tmp_path)]) == 1


def test_usage_error_and_missing_file(tmp_path):
    assert main(["simulate"]) == 2
    assert main(["simulate", str(tmp_path / "missing.json")]) == 2


def test_config_sections(tmp_path):
    refs = tmp_path / "refs.csv"
    lines = ["t,price_ref,buyback_ref,pay_ref"] + [f"{t},1.0,5.0,5.0" for t in range(12)] + ["12,1.0,,"]
    refs.write_text("\n".join(lines) + "\n")
    doc = dict(SCEN, references_csv="refs.csv", weights={"beta_price": 10}, pid={"kp": 1.5, "scale": 2.0},
               bounds={"reserve_usd_min": 1.0}, solver={"max_iterations": 50},
               initial_state={"supply": 150, "reserve_usd": 50, "reserve_tok": 150, "price": 1.0})
    sc = cfg.load_scenario(write(tmp_path / "s.json", doc), seed=7)
    assert sc.seed == 7 and sc.refs.buyback_ref[0] == 5.0 and sc.weights.beta_price == 10
    assert sc.pid_gains.kp == 1.5 and sc.pid_scale == 2.0 and sc.bounds.reserve_usd_min == 1.0
    assert sc.initial_state.supply == 150 and sc.solve_options.max_iterations == 50
    with pytest.raises(cfg.ConfigError):
        cfg.scenario_from_dict(dict(SCEN, weights={"beta_price": -1}))
    exp = cfg.experiment_from_dict({"schema_version": 1, "kind": "experiment", "patterns": ["sigmoid"],
                                    "families": ["balanced"], "seeds": [0, 1], "controllers": ["none", "pid"]},
                                   seed=10)
    assert exp.seeds == (10, 11)
