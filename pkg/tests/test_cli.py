import csv
import json

import pytest
import yaml

from nonlocal_elliptic import Field
from nonlocal_elliptic.cli import OUTPUT_ENV, main, read_config, run_experiment, sweep
from nonlocal_elliptic.config import ConfigError, config_hash, load, validate

# 1/128 is the coarsest grid with four dyadic fit scales
FAST = {"grid": {"h": 1 / 128}}
FAST_BALL = {"scenario": "exact-ball", "grid": {"h": 1 / 128},
             "convergence": {"steps": [0.125, 0.0625, 0.03125], "reference": 0.0078125}}


# -- config ------------------------------------------------------------------------------

def test_defaults_validate():
    cfg = validate({})
    assert cfg["scenario"] == "exact-ball" and cfg["sigma0"] == 1.0
    assert validate({"scenario": "thm-1-2"})["sigma0"] == 1.1


@pytest.mark.parametrize("raw,path", [
    ({"lam": 3.0, "Lam": 2.0}, "lam"),
    ({"bogus": 1}, "bogus"),
    ({"grid": {"hh": 0.1}}, "grid.hh"),
    ({"grid": {"h": 0.3}}, "grid.h"),
    ({"sigma": 0.9, "sigma0": 1.0}, "sigma"),
    ({"scenario": "nope"}, "scenario"),
    ({"solver": {"scheme": "magic"}}, "solver.scheme"),
    ({"solver": {"eps": 0.3}}, "solver.eps"),
    ({"scenario": "thm-1-1", "operator": {"variant": "linear"}}, "operator.variant"),
])
def test_invalid_configs_name_the_field(raw, path):
    with pytest.raises(ConfigError) as exc:
        validate(raw)
    assert exc.value.path == path


def test_yaml_load_and_hash(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"scenario": "thm-1-1", "solver": {"tol": "1e-9"}}))
    cfg = load(p)
    assert cfg["solver"]["tol"] == 1e-9
    assert config_hash(cfg) == config_hash(load(p))
    assert config_hash(cfg) != config_hash(validate({"scenario": "thm-1-1"}))


def test_overrides():
    cfg = read_config(None, ["grid.h=0.0625", "scenario=thm-1-1"])
    assert cfg["grid"]["h"] == 0.0625 and cfg["scenario"] == "thm-1-1"
    with pytest.raises(ConfigError):
        read_config(None, ["grid.h"])


# -- run ---------------------------------------------------------------------------------

def test_run_exact_ball_artifacts(tmp_path):
    code, summ = run_experiment(validate(FAST_BALL), tmp_path / "a")
    assert code == 0
    out = tmp_path / "a"
    for name in ("config.json", "solution.bin", "solve_report.json", "regularity.json",
                 "regularity_tables.csv", "convergence.csv", "manifest.json", "timings.json"):
        assert (out / name).exists(), name
    man = json.loads((out / "manifest.json").read_text())
    assert all(a["config_hash"] == man["config_hash"] for a in man["artifacts"].values())
    rows = list(csv.DictReader(open(out / "convergence.csv")))
    assert [float(r["h"]) for r in rows] == [0.125, 0.0625, 0.03125]
    errs = [float(r["linf_error"]) for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert isinstance(Field.load(out / "solution.bin"), Field)


def test_run_is_deterministic(tmp_path):
    cfg = validate({"scenario": "thm-1-1", **FAST})
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ("solution.bin", "solve_report.json", "regularity.json", "regularity_tables.csv",
                 "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_run_thm_1_1_alpha1_positive(tmp_path):
    code, summ = run_experiment(validate({"scenario": "thm-1-1"}), tmp_path)
    assert code == 0 and summ["alpha1"] > 0


def test_main_exit_codes(tmp_path, capsys):
    assert main(["run", "--set", "lam=3", "--set", "Lam=2", "-o", str(tmp_path / "x")]) == 2
    assert "lam" in capsys.readouterr().err
    code = main(["run", "--scenario", "thm-1-1", "--set", "grid.h=0.03125",
                 "--set", "solver.scheme=pseudo_time", "--set", "solver.max_iter=2",
                 "-o", str(tmp_path / "nc")])
    assert code == 3
    assert (tmp_path / "nc" / "solution.bin").exists()
    assert json.loads((tmp_path / "nc" / "solve_report.json").read_text())["converged"] is False
    code = main(["run", "--scenario", "thm-1-1", "--set", "grid.h=0.03125", "-o", str(tmp_path / "ok")])
    assert code == 0


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    code, summ = run_experiment(validate({"scenario": "thm-1-1", **FAST}))
    assert code == 0 and summ["output"].startswith(str(tmp_path))


def test_config_file_via_main(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"scenario": "thm-1-1", "grid": {"h": 0.03125},
                                 "output": str(tmp_path / "run")}))
    assert main(["run", "-c", str(p)]) == 0
    assert (tmp_path / "run" / "manifest.json").exists()


# -- sweep ---------------------------------------------------------------------------------

def test_sweep_h_records_rows(tmp_path):
    rows, path = sweep(validate(FAST_BALL), "h", [0.125, 0.0625, 0.3], tmp_path)
    table = list(csv.DictReader(open(path)))
    assert len(table) == 3
    assert table[0]["status"] == "ok" and table[1]["status"] == "ok"
    # an invalid value is recorded and the sweep continues
    assert table[2]["status"].startswith("error")


def test_sweep_epsilon_gap(tmp_path):
    cfg = validate({"scenario": "custom", "lam": 0.9, "Lam": 1.0, "grid": {"h": 1 / 32},
                    "operator": {"variant": "isaacs", "family": [
                        {"profile": "constant", "params": {"c": 0.9}},
                        {"profile": "constant", "params": {"c": 1.0}}]}, "problem": {"f": -1.0, "g": 0.0}})
    rows, path = sweep(cfg, "epsilon", [0.2, 0.1, 0.05], tmp_path)
    gaps = [r["fp_pi_gap"] for r in rows]
    assert all(r["status"] == "ok" for r in rows)
    assert gaps[0] >= gaps[1] >= gaps[2]


def test_sweep_bad_axis():
    with pytest.raises(ConfigError):
        sweep(validate({}), "lam", [1.0])


# -- verify and inspect --------------------------------------------------------------------

def test_verify_pass_and_negative_control(capsys):
    assert main(["verify", "--samples", "5", "--suite", "duality", "--suite", "ellipticity"]) == 0
    lines = [json.loads(s) for s in capsys.readouterr().out.splitlines()]
    assert [d["suite"] for d in lines] == ["duality", "ellipticity"] and all(d["passed"] for d in lines)
    assert main(["verify", "--samples", "5", "--suite", "ellipticity", "--inject", "corrupt-kernel"]) == 1
    assert main(["verify", "--suite", "nope"]) == 2


def test_inspect(tmp_path, capsys):
    run_experiment(validate({"scenario": "thm-1-1", **FAST}), tmp_path)
    assert main(["inspect", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "manifest.json" in out and "regularity.json" in out
    assert main(["inspect", str(tmp_path / "solution.bin")]) == 0
    assert "h=0.0078125" in capsys.readouterr().out
