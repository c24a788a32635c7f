import csv
import json
from pathlib import Path

import numpy as np
import pytest

from eventsched.cli import EXIT_CONFIG, EXIT_NUMERIC, main
from eventsched.config import ConfigError, load_config, parse_config

ROOT = Path(__file__).resolve().parents[1]
SHIPPED = ROOT / "configs" / "two_process.json"


def _small_config(tmp_path, **overrides):
    d = json.loads(SHIPPED.read_text())
    d.update({"horizon": 40, "runs": 3, "output": {"dir": str(tmp_path / "out")}})
    d["mdp"].update({"depth": 4, "levels": 8, "alpha_grid": 4})
    d["lower_bound"].update({"ell_max": 8, "rate_grid": 20, "restarts": 1})
    d.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d, indent=2))
    return path


def test_shipped_config_parses():
    cfg = load_config(SHIPPED)
    assert len(cfg.systems) == 2
    assert cfg.offline_table == (1, 0, 0)
    assert cfg.scheduler == "greedy" and cfg.runs == 500 and cfg.horizon == 1000
    np.testing.assert_allclose(cfg.systems[1].Q, 3 * np.eye(2))


def test_error_reports_line_and_field():
    text = '{\n  "systems": [\n    {"A": [[1]], "C": [[1]],\n     "Q": [["x"]], "R": [[1]]}\n  ]\n}\n'
    with pytest.raises(ConfigError) as err:
        parse_config(text, "demo.json")
    assert err.value.line == 4
    # JSON indices in diagnostics are 0-based, as in the file itself
    assert err.value.path == "systems[0].Q[0][0]"
    assert str(err.value).startswith("demo.json:4:")


@pytest.mark.parametrize(
    "text,fragment",
    [
        ('{"systems": []}', "nonempty"),
        ('{"systems": [{"A": [[1]], "C": [[1]], "Q": [[1]], "R": [[1]]}], "bogus": 1}', "bogus"),
        ('{"systems": [{"A": [[1]], "C": [[1]], "Q": [[1]], "R": [[1]]}], "offline": {"table": [2]}}', "does not exist"),
        ('{"systems": [{"A": [[1]], "C": [[1]], "Q": [[1]], "R": [[1]]}], "runs": 0}', "runs"),
        ('{"systems": [{"A": [[1, 0]], "C": [[1]], "Q": [[1]], "R": [[1]]}]}', "systems[0]"),
        ('{"systems": [', "invalid JSON"),
    ],
)
def test_config_rejections(text, fragment):
    with pytest.raises(ConfigError, match=fragment.replace("[", r"\[").replace("]", r"\]")):
        parse_config(text)


def test_cli_dare(capsys):
    assert main(["dare", str(SHIPPED)]) == 0
    out = capsys.readouterr().out
    assert "system 1" in out and "system 2" in out and "Tr P_bar" in out


def test_cli_missing_file(tmp_path, capsys):
    assert main(["dare", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_cli_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n "systems": [{"A": [[1]], "C": [[1]], "Q": [[1]], "R": [[1]]}],\n "horizon": "long"\n}\n')
    assert main(["dare", "--config", str(bad)]) == EXIT_CONFIG
    assert "bad.json:3: horizon" in capsys.readouterr().err


def test_cli_invalid_noise_is_numeric_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"systems": [{"A": [[2]], "C": [[1]], "Q": [[1]], "R": [[-1]]}]}')
    assert main(["dare", str(bad)]) == EXIT_NUMERIC
    assert "R not PD" in capsys.readouterr().out


def test_cli_undetectable_system(tmp_path, capsys):
    cfg = tmp_path / "undetectable.json"
    cfg.write_text(json.dumps({"systems": [{"A": [[2, 0], [0, 3]], "C": [[1, 0]], "Q": [[1, 0], [0, 1]], "R": [[1]]}]}))
    assert main(["dare", str(cfg)]) == EXIT_NUMERIC
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_NUMERIC


def test_cli_simulate_is_reproducible(tmp_path):
    cfg = _small_config(tmp_path)
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["simulate", str(cfg), "--seed", "5", "--out", str(out)]) == 0
        outs.append((out / "traces.csv").read_bytes())
    assert outs[0] == outs[1]
    rows = list(csv.DictReader(open(tmp_path / "a" / "traces.csv")))
    assert len(rows) == 3 * 40 * 2
    assert {r["sensor"] for r in rows} == {"1", "2"}
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["runs"] == 3 and summary["seed"] == 5


def test_cli_offline_scheduler(tmp_path):
    cfg = _small_config(tmp_path)
    assert main(["simulate", str(cfg), "--scheduler", "offline", "--runs", "1"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "traces.csv")))
    sent = [int(r["sensor"]) for r in rows if r["transmitted"] == "1"]
    assert sent[:6] == [2, 1, 1, 2, 1, 1]
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["single_sample"] is True


def test_cli_rejects_bad_override(tmp_path):
    cfg = _small_config(tmp_path)
    assert main(["simulate", str(cfg), "--runs", "0"]) == EXIT_CONFIG


def test_cli_lower_bound(tmp_path, capsys):
    cfg = _small_config(tmp_path)
    assert main(["lower-bound", str(cfg)]) == 0
    d = json.loads((tmp_path / "out" / "lower_bound.json").read_text())
    assert sorted(d["queue_heuristic"]) == [1, 2]
    assert "LB =" in capsys.readouterr().out


def test_cli_lower_bound_infeasible(tmp_path):
    cfg = _small_config(tmp_path, lower_bound={"ell_max": 1, "rate_grid": 10, "restarts": 1})
    assert main(["lower-bound", str(cfg)]) == EXIT_NUMERIC


def test_cli_mdp_train_then_simulate(tmp_path, capsys):
    cfg = _small_config(tmp_path)
    assert main(["mdp-train", str(cfg)]) == 0
    assert "average cost" in capsys.readouterr().out
    policy = json.loads((tmp_path / "out" / "mdp_policy.json").read_text())
    assert policy["format"] == "eventsched-mdp-policy"
    assert main(["simulate", str(cfg), "--scheduler", "mdp"]) == 0


def test_cli_mdp_cap(tmp_path):
    d = json.loads(SHIPPED.read_text())
    cfg = _small_config(tmp_path, mdp={**d["mdp"], "max_states": 3})
    assert main(["mdp-train", str(cfg)]) == EXIT_NUMERIC


def test_cli_compare(tmp_path):
    cfg = _small_config(tmp_path)
    assert main(["compare", str(cfg)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "table.csv")))
    assert [r["schedule"] for r in rows] == ["offline", "greedy", "mdp", "lower_bound"]
    lb = float(rows[-1]["J"])
    report = json.loads((tmp_path / "out" / "gap_report.json").read_text())
    assert all(r["LB"] == pytest.approx(lb, abs=1e-5) for r in report["schedules"])


def test_cli_requires_config(capsys):
    assert main(["dare"]) == EXIT_CONFIG
