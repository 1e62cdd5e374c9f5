import csv
import json

import pytest

from bitemporal import check_config, import_records, load_config, read_histories, read_ledger, read_records
from bitemporal.cli import main
from bitemporal.config import ConfigError, value_lines

from conftest import FIXTURES


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.mark.parametrize("name", ["default", "jessie", "taylor", "single_decrement"])
def test_shipped_configs_are_clean(name):
    assert check_config(FIXTURES / f"{name}.json") == []


def _bad_config(tmp_path, mutate):
    data = json.loads((FIXTURES / "default.json").read_text())
    mutate(data)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data, indent=2))
    return path


def test_negative_intensity_is_reported_with_its_line(tmp_path):
    path = _bad_config(tmp_path, lambda d: d["model"]["intensities"][2].update(rate=-0.01))
    problems = check_config(path)
    assert [p.path for p in problems] == ["model.intensities[2].rate"]
    line = path.read_text().splitlines()[problems[0].line - 1]
    assert '"rate": -0.01' in line


def test_every_violation_is_listed(tmp_path):
    def mutate(d):
        d["payments"]["transition_payments"].append({"from": "a", "to": "x", "amount": 1.0})
        d["payments"]["horizon"] = 0
        d["run"]["state"] = "zz"
    problems = check_config(_bad_config(tmp_path, mutate))
    assert {p.path for p in problems} == {"payments.transition_payments[1].to", "payments.horizon", "run.state"}
    assert all("undeclared" in p.message for p in problems if p.path != "payments.horizon")


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "model": {\n    "states": [\n}\n')
    [problem] = check_config(path)
    assert "invalid JSON" in problem.message and problem.line == 4
    with pytest.raises(ConfigError):
        load_config(path)


def test_value_lines_locates_nested_values():
    text = '{\n "a": [1,\n  {"b": "x"}],\n "c": {}\n}'
    lines = value_lines(text)
    assert lines[("a", 1, "b")] == 3 and lines[("c",)] == 4 and lines[("a", 0)] == 2


def test_check_config_exit_codes(tmp_path, capsys):
    assert _run("check-config", "--config", FIXTURES / "default.json") == 0
    bad = _bad_config(tmp_path, lambda d: d["model"]["intensities"][0].update(rate=-1))
    assert _run("check-config", "--config", bad) == 1
    assert "model.intensities[0].rate" in capsys.readouterr().out
    assert _run("check-config", "--config", tmp_path / "missing.json") == 1
    assert _run("value", "--config", bad, "--out", tmp_path) == 1


def test_validate_example_one(tmp_path):
    assert _run("validate", "--config", FIXTURES / "taylor.json", "--out", tmp_path) == 0
    assert (tmp_path / "validation.txt").read_text() == "ok\n"


def test_validate_reports_violations(tmp_path):
    bad = tmp_path / "records.csv"
    bad.write_text(
        "state,valid_from,valid_till,recorded,superseded\n"
        "a,0.0,inf,0.0,0.3\na,0.0,0.2,0.3,0.5\ni1,0.2,inf,0.3,0.5\na,0.0,inf,0.5,inf\n"
    )
    assert _run("validate", "--config", FIXTURES / "taylor.json", "--records", bad, "--out", tmp_path) == 0
    assert "non-monotone supersession" in (tmp_path / "validation.txt").read_text()


def test_statewise_reserve_closed_form(tmp_path):
    assert _run("reserve", "--method", "statewise", "--config", FIXTURES / "single_decrement.json",
                "--grid", "0:0:1", "--out", tmp_path) == 0
    [row] = _rows(tmp_path / "reserves.csv")
    assert float(row["value"]) == pytest.approx(7.869387, abs=1e-6)


def test_jessie_value(tmp_path):
    assert _run("value", "--config", FIXTURES / "jessie.json", "--out", tmp_path) == 0
    [row] = _rows(tmp_path / "values.csv")
    assert float(row["correction"]) == pytest.approx(0.116667, abs=1e-6)
    with open(tmp_path / "ledger.csv") as fh:
        led = read_ledger(fh)
    assert led.backpay_atoms()[0][1] == pytest.approx(1 / 6)


def test_runtime_errors_exit_two(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "model": {"states": ["a", "d"], "intensities": [{"from": "a", "to": "d", "rate": 50}]},
        "payments": {"horizon": 5, "sojourn_rates": {"a": 1}},
        "run": {"state": "a", "t": 4, "mode": "reject", "n_paths": 50},
    }))
    assert _run("reserve", "--method", "monte-carlo", "--config", cfg, "--out", tmp_path) == 2
    assert _run("reserve", "--method", "rbns", "--config", cfg, "--out", tmp_path) == 2


def test_outputs_round_trip(tmp_path):
    assert _run("simulate", "--config", FIXTURES / "default.json", "--paths", 40, "--out", tmp_path) == 0
    with open(tmp_path / "records.csv", newline="") as fh:
        records = read_records(fh)
    with open(tmp_path / "histories.csv", newline="") as fh:
        histories = read_histories(fh)
    for pid, rows in records.items():
        tl = import_records(rows)
        if tl.finalized.events:
            assert histories[pid] == tl.finalized
        else:
            assert pid not in histories
    out = tmp_path / "again"
    assert _run("export-bitemporal", "--config", FIXTURES / "default.json", "--records", tmp_path / "records.csv",
                "--out", out) == 0
    assert (out / "records.csv").read_text() == (tmp_path / "records.csv").read_text()
    imp = tmp_path / "imp"
    assert _run("import-bitemporal", "--config", FIXTURES / "jessie.json", "--out", imp) == 0
    assert [r["z_state"] for r in _rows(imp / "revisions.csv")] == ["a", "i2", "i1"]


def test_thread_count_does_not_change_outputs(tmp_path):
    base = json.loads((FIXTURES / "default.json").read_text())
    outs = []
    for jobs in (1, 3):
        base["run"]["n_jobs"] = jobs
        cfg = tmp_path / f"cfg{jobs}.json"
        cfg.write_text(json.dumps(base))
        out = tmp_path / f"out{jobs}"
        assert _run("simulate", "--config", cfg, "--paths", 200, "--out", out) == 0
        assert _run("reserve", "--method", "monte-carlo", "--config", cfg, "--paths", 5000, "--grid", "1.25:1.25:1",
                    "--out", out) == 0
        outs.append([(out / n).read_bytes() for n in ("histories.csv", "records.csv", "reserves.csv")])
    assert outs[0] == outs[1]
