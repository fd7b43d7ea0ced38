import copy
import csv
import io
import json
from importlib import resources

import pytest

from cara_lab import __version__
from cara_lab.cli import main
from cara_lab.config import ConfigError, SCHEMA, build, resolve

REFERENCE = json.loads(resources.files("cara_lab").joinpath("configs/reference.json").read_text())


def _small(**changes):
    doc = copy.deepcopy(REFERENCE)
    doc["trial"]["n"] = 120
    doc["mc"]["replications"] = 6
    for section, values in changes.items():
        doc[section].update(values)
    return doc


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _csv_rows(text):
    return list(csv.reader(line for line in io.StringIO(text) if not line.startswith("#")))


def test_simulate_json_is_deterministic_and_self_describing(tmp_path):
    cfg = _write(tmp_path, _small())
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["simulate", "--config", cfg, "--seed", "4", "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--seed", "4", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["version"] == __version__
    assert doc["config"]["trial"]["seed"] == 4
    assert doc["config"]["policy"]["m0"] == 5
    assert doc["config"]["trial"]["refit_stride"] == 1
    assert sum(doc["result"]["counts"]) == 120


def test_simulate_csv_has_one_header_and_snapshot_rows(tmp_path):
    cfg = _write(tmp_path, _small())
    out = tmp_path / "s.csv"
    assert main(["simulate", "--config", cfg, "--format", "csv", "--out", str(out)]) == 0
    text = out.read_text()
    assert text.startswith(f"# cara-lab {__version__} simulate\n# config: ")
    rows = _csv_rows(text)
    assert rows[0] == ["m", "proportion", "rho_hat"]
    assert [int(r[0]) for r in rows[1:]] == [10, 15, 23, 35, 53, 80, 120]


def test_floats_round_trip_exactly(tmp_path):
    cfg = _write(tmp_path, _small())
    out_json, out_csv = tmp_path / "s.json", tmp_path / "s.csv"
    main(["simulate", "--config", cfg, "--out", str(out_json)])
    main(["simulate", "--config", cfg, "--format", "csv", "--out", str(out_csv)])
    snaps = json.loads(out_json.read_text())["result"]["snapshots"]
    rows = _csv_rows(out_csv.read_text())[1:]
    for snap, row in zip(snaps, rows):
        assert float(row[1]) == snap["proportion"] and float(row[2]) == snap["rho_hat"]
        assert row[2] == repr(snap["rho_hat"])


def test_missing_field_exits_2_naming_it(tmp_path, capsys):
    doc = _small()
    del doc["trial"]["n"]
    assert main(["simulate", "--config", _write(tmp_path, doc)]) == 2
    assert "trial.n" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    doc = _small()
    doc["policy"]["gama"] = 2
    assert main(["simulate", "--config", _write(tmp_path, doc)]) == 2
    assert "policy.gama" in capsys.readouterr().err


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d["arms"][0].update(theta=[0.5]), "arms.0.theta"),
        (lambda d: d["covariates"].__setitem__(1, {"type": "bernoulli", "p": "x"}), "covariates.1.p"),
        (lambda d: d["trial"].update(n=10), "trial.n"),
        (lambda d: d["policy"].update(gamma=-1), "policy.gamma"),
        (lambda d: d["target"].update(variant="other"), "target.variant"),
        (lambda d: d["covariates"].__setitem__(1, {"type": "bernoulli", "p": 1.5}), "covariates.1"),
    ],
)
def test_config_errors_name_the_field(tmp_path, capsys, mutate, field):
    doc = _small()
    mutate(doc)
    assert main(["simulate", "--config", _write(tmp_path, doc)]) == 2
    assert field in capsys.readouterr().err


def test_unreadable_config_exits_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad)]) == 2


def test_asymptotics_fixed_target_closed_form(tmp_path):
    doc = _small(target={"variant": "fixed", "c": 0.3})
    out = tmp_path / "a.json"
    assert main(["asymptotics", "--config", _write(tmp_path, doc), "--gamma-grid", "0,0.5,2,10", "--out", str(out)]) == 0
    grid = json.loads(out.read_text())["result"]["grid"]
    for row in grid:
        assert row["sigma_sq"] == pytest.approx(0.21 / (1 + 2 * row["gamma"]), abs=1e-12)


def test_asymptotics_reference_values_and_gap(tmp_path):
    out = tmp_path / "a.csv"
    cfg = _write(tmp_path, _small())
    assert main(["asymptotics", "--config", cfg, "--format", "csv", "--gamma-grid", "0,1,4,8,100,inf", "--out", str(out)]) == 0
    rows = _csv_rows(out.read_text())
    assert rows[0] == ["gamma", "lambda", "sigma_sq", "gap"]
    gaps = [float(r[3]) for r in rows[1:]]
    assert all(g >= 0 for g in gaps) and all(a > b for a, b in zip(gaps, gaps[1:]))
    # Frozen atom-enumeration oracle values (tests/oracles/reference_symbolic.py).
    assert float(rows[1][2]) == pytest.approx(0.36459213905047994, rel=1e-10)
    assert float(rows[2][2]) == pytest.approx(0.1607794464659303, rel=1e-10)
    assert rows[-1][0] == "inf" and float(rows[-1][3]) == 0.0


def test_asymptotics_singular_information_exits_3(tmp_path, capsys):
    doc = _small()
    doc["covariates"] = [{"type": "intercept"}, {"type": "intercept"}]
    assert main(["asymptotics", "--config", _write(tmp_path, doc)]) == 3
    assert "arm 1" in capsys.readouterr().err


def test_bad_gamma_grid_exits_2(tmp_path):
    assert main(["asymptotics", "--config", _write(tmp_path, _small()), "--gamma-grid", "0,x"]) == 2


def test_mc_workers_do_not_change_output(tmp_path, monkeypatch):
    cfg = _write(tmp_path, _small())
    one, many, env = tmp_path / "1.json", tmp_path / "2.json", tmp_path / "e.json"
    assert main(["mc", "--config", cfg, "--workers", "1", "--out", str(one)]) == 0
    assert main(["mc", "--config", cfg, "--workers", "2", "--out", str(many)]) == 0
    monkeypatch.setenv("CARA_LAB_WORKERS", "2")
    assert main(["mc", "--config", cfg, "--out", str(env)]) == 0
    assert one.read_bytes() == many.read_bytes() == env.read_bytes()
    doc = json.loads(one.read_text())
    assert doc["result"]["replications"] == 6
    assert all({"empirical", "theoretical", "se", "passed"} <= set(c) for c in doc["result"]["comparisons"])


def test_mc_csv(tmp_path):
    out = tmp_path / "m.csv"
    assert main(["mc", "--config", _write(tmp_path, _small()), "--reps", "3", "--format", "csv", "--out", str(out)]) == 0
    rows = _csv_rows(out.read_text())
    assert rows[0] == ["name", "empirical", "theoretical", "se", "tolerance", "passed"]
    assert rows[1][0] == "mean_proportion"


def test_mc_needs_two_replications(tmp_path, capsys):
    assert main(["mc", "--config", _write(tmp_path, _small()), "--reps", "1"]) == 2
    assert "replications" in capsys.readouterr().err


def test_mc_bad_worker_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CARA_LAB_WORKERS", "lots")
    assert main(["mc", "--config", _write(tmp_path, _small())]) == 2


def test_validate_lists_checks_and_passes(capsys):
    assert main(["validate"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert len(lines) >= 6
    assert all(l.startswith("PASS") for l in lines)
    assert all("residual=" in l for l in lines)


def test_validate_negative_control(capsys):
    assert main(["validate", "--perturb-g-exponent", "1.1"]) != 0
    out = capsys.readouterr().out
    assert any(l.startswith("FAIL") and "g_expansion_order" in l for l in out.splitlines())


def test_resolve_echoes_defaults():
    doc = resolve(_small())
    assert doc["arms"][0]["box"] == [-10.0, 10.0]
    assert doc["target"]["gradient_mode"] == "analytic"
    assert doc["output"]["format"] == "json"
    assert SCHEMA["additionalProperties"] is False
    built = build(doc)
    assert built.trial.n == 120 and built.trial.m0 == 5


def test_inf_gamma_accepted():
    doc = _small(policy={"gamma": "inf"})
    assert build(resolve(doc)).trial.policy.gamma == float("inf")
    with pytest.raises(ConfigError):
        resolve(_small(policy={"gamma": "infinite"}))
