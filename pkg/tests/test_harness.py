import json
from pathlib import Path

import pytest

from sidlab import cli
from sidlab.errors import BudgetError, ConfigurationError
from sidlab.harness import load_config, parse_config, run_experiment

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

QUAD = {"V": {"kind": "quadratic", "curvature": 1.0, "center": [0.0]},
        "W": {"kind": "quadratic", "curvature": 1.0}}


def kramers_raw(**params):
    p = {"sigmas": [1.2, 1.0], "replicas": 30}
    p.update(params)
    return {"experiment": "kramers", "master_seed": 1, "potentials": QUAD,
            "domain": {"kind": "interval", "lo": -1.0, "hi": 1.0}, "params": p}


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    load_config(path)


@pytest.mark.parametrize("mutate,error", [
    (lambda r: r.update(experiment="nope"), ConfigurationError),
    (lambda r: r.update(extra=1), ConfigurationError),
    (lambda r: r["params"].update(bogus=1), ConfigurationError),
    (lambda r: r.pop("domain"), ConfigurationError),
    (lambda r: r["params"].update(sigmas=[0.8, 0.9]), ConfigurationError),
    (lambda r: r.update(master_seed=-1), ConfigurationError),
    (lambda r: r["domain"].update(lo=0.5), Exception),
    (lambda r: r["params"].update(t_max_factor=0.5), BudgetError),
    (lambda r: r.update(step_budget=1e3), BudgetError),
])
def test_config_rejections(mutate, error):
    raw = kramers_raw()
    mutate(raw)
    with pytest.raises(error):
        parse_config(raw)


def test_flow_check_report(tmp_path):
    raw = {"experiment": "flow_check", "potentials": {"V": QUAD["V"]}, "sim": {"x0": [1.0]},
           "params": {"t_end": 2.0, "dt": 1e-5, "tol": 1e-6}}
    m = run_experiment(parse_config(raw), out_dir=tmp_path)
    report = (tmp_path / "report.txt").read_text()
    assert m.passed and "PASS deterministic flow (W = 0) matches closed form" in report
    assert set(m.outputs) >= {"flow.csv", "frozen_flow.csv", "report.txt", "config.resolved.json"}


def test_flow_check_with_interaction_checks_both_closed_forms(tmp_path):
    raw = {"experiment": "flow_check", "potentials": QUAD, "sim": {"x0": [1.0]},
           "params": {"t_end": 2.0, "dt": 1e-5, "tol": 1e-6}}
    m = run_experiment(parse_config(raw), out_dir=tmp_path)
    report = (tmp_path / "report.txt").read_text()
    assert m.passed
    assert "PASS deterministic flow (W = 0) matches closed form" in report
    assert "PASS frozen flow matches closed form" in report
    assert "flow_no_interaction.csv" in m.outputs


def test_report_failures_do_not_raise(tmp_path):
    raw = {"experiment": "stabilisation", "potentials": QUAD, "sim": {"dt": 0.01, "x0": [1.0]},
           "params": {"sigmas": [0.5], "kappa": 0.0, "replicas": 30, "checkpoints": [1.0, 2.0]}}
    m = run_experiment(parse_config(raw), out_dir=tmp_path)
    assert not m.passed
    assert (tmp_path / "report.txt").read_text().startswith("FAIL t_hat finite")


def test_determinism_across_workers(tmp_path):
    cfg = parse_config(kramers_raw())
    a = run_experiment(cfg, out_dir=tmp_path / "a", workers=1)
    b = run_experiment(cfg, out_dir=tmp_path / "b", workers=4)
    c = run_experiment(cfg, out_dir=tmp_path / "c", workers=1)
    assert a.outputs == b.outputs == c.outputs
    assert a.config_hash == b.config_hash
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seeds"]["kramers:1.2"][:2] == a.seeds["kramers:1.2"][:2]
    assert len(manifest["seeds"]["kramers:1.0"]) == 30


def test_outputs_stay_in_directory(tmp_path):
    out = tmp_path / "run"
    run_experiment(parse_config(kramers_raw()), out_dir=out)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["run"]


def test_cli(tmp_path, capsys):
    path = CONFIGS / "fixed_point.toml"
    assert cli.main(["validate", str(path)]) == 0
    assert cli.main(["run", str(path), "--out", str(tmp_path / "fp"), "--workers", "2"]) == 0
    out = capsys.readouterr().out
    assert "PASS variance at sigma=1" in out
    bad = tmp_path / "bad.toml"
    bad.write_text('experiment = "kramers"\n')
    assert cli.main(["validate", str(bad)]) == 2
    assert "error" in capsys.readouterr().err
