import json
import xml.etree.ElementTree as ET

import pytest

import ope_mnar.cli as cli
from ope_mnar.cli import ConfigError, main, parse_config, read_results_csv
from ope_mnar.harness import SUMMARY_COLUMNS

SMALL = {
    "n_actions": 20, "n_embeddings": 3, "len_list": 2, "n": 150, "n_seeds": 4,
    "n_mc": 2000, "fm_epochs": 2, "verbosity": 0,
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL, indent=2))
    return path


def test_parse_defaults():
    cfg, run = parse_config("{}")
    assert cfg.alphas == (0.0, 1.0, 2.0, 3.0)
    assert (cfg.n, cfg.n_seeds, cfg.n_actions, cfg.n_embeddings, cfg.len_list) == (1000, 100, 500, 5, 5)
    assert run == {"out_dir": None, "chart": True, "verbosity": 1}


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config('{\n  "n": 10,\n  "bogus": 1\n}')
    assert info.value.line == 3
    assert "bogus" in str(info.value)


def test_wrong_type_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config('{\n  "n_seeds": "many"\n}')
    assert info.value.line == 2
    with pytest.raises(ConfigError):
        parse_config('{"n": true}')


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config('{\n  "n": 10,\n  oops\n}')
    assert info.value.line == 3


def test_single_seed_rejected_before_computation(tmp_path, monkeypatch, capsys):
    called = []
    monkeypatch.setattr(cli, "alpha_sweep", lambda *a, **k: called.append(1))
    path = tmp_path / "cfg.json"
    path.write_text('{\n  "n_seeds": 1\n}')
    assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "o")]) != 0
    assert not called
    assert "line 2" in capsys.readouterr().err


def test_sweep_writes_outputs(small_config, tmp_path):
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(small_config), "--out", str(out)]) == 0
    header = (out / "results.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == SUMMARY_COLUMNS
    summary = read_results_csv(out / "results.csv")
    assert len(summary.rows) == 16
    assert all(r.satisfies_decomposition() for r in summary.rows)

    meta = json.loads((out / "summary.json").read_text())
    assert meta["config"]["n_seeds"] == 4
    assert set(meta["estimate_stderr"]) == {"0", "1", "2", "3"}
    assert set(meta["true_value_stderr"]) == {"0", "1", "2", "3"}

    svg = ET.parse(out / "figure.svg").getroot()
    assert len(svg.findall("{http://www.w3.org/2000/svg}polyline")) == 3 * 4

    again = tmp_path / "again"
    assert main(["sweep", "--config", str(small_config), "--out", str(again), "--no-chart"]) == 0
    assert (again / "results.csv").read_bytes() == (out / "results.csv").read_bytes()
    assert not (again / "figure.svg").exists()


def test_unreadable_config(tmp_path):
    assert main(["sweep", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) != 0


def test_write_failure(small_config, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["sweep", "--config", str(small_config), "--out", str(blocker / "sub")]) != 0


def test_verify_passes(capsys):
    assert main(["verify", "--instances", "10", "--mc-seeds", "500"]) == 0
    out = capsys.readouterr().out
    assert "5/5 properties passed" in out
    assert out.count("[PASS]") == 5


def test_verify_detects_corruption(capsys):
    assert main(["verify", "--instances", "3", "--mc-seeds", "200", "--corrupt-theta-floor"]) == 1
    assert "[FAIL] heuristic-roips" in capsys.readouterr().out


def test_verify_rejects_zero_instances():
    assert main(["verify", "--instances", "0"]) == 2
