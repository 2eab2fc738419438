from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from branched_rough.cli import main

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def run(*args: str) -> tuple[int, str]:
    result = CliRunner().invoke(main, list(args))
    return result.exit_code, result.output


def test_verify_hopf_small_degree_passes() -> None:
    code, out = run("verify-hopf", "--max-degree", "3")
    assert code == 0
    assert "FAIL" not in out


def test_transfer_symbols_flat_prints_identity() -> None:
    code, out = run("transfer-symbols", "--scenario", str(SCENARIOS / "flat.json"), "--format", "json")
    assert code == 0
    table = json.loads(out)["data"]["table"]
    assert all(up == lo for up, lo in (k.split("|") for k in table))
    assert table["01|01"] == 0.5 and table["0|0"] == 1.0


def test_quasi_check_names_offending_forest() -> None:
    code, out = run("quasi-check", "--scenario", str(SCENARIOS / "perturbed.json"))
    assert code == 1
    assert "FAIL quasi.defect" in out and "worst forest" in out


def test_quasi_check_default_driver_passes() -> None:
    assert run("quasi-check")[0] == 0


@pytest.mark.parametrize("cmd", ["lift", "pushforward", "verify-bracket"])
def test_default_scenarios_pass(cmd: str) -> None:
    code, out = run(cmd)
    assert code == 0, out


def test_missing_scenario_is_a_parse_error(tmp_path: Path) -> None:
    assert run("transfer-symbols", "--scenario", str(tmp_path / "nope.json"))[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("quasi-check", "--scenario", str(bad))[0] == 2
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps({"variables": ["x1"], "christoffel": [[["x1 +"]]]}))
    assert run("transfer-symbols", "--scenario", str(broken))[0] == 2


def test_unknown_option_exits_two() -> None:
    assert run("verify-hopf", "--bogus")[0] == 2


def test_report_writes_json(tmp_path: Path) -> None:
    out = tmp_path / "report.json"
    code, text = run("report", "--criteria", "2,4", "--out", str(out))
    assert code == 0
    report = json.loads(out.read_text())
    assert report["passed"] and len(report["checks"]) == 10
    assert [c["id"] for c in report["checks"]].count("criterion.4") == 1
    assert "criterion 2: PASS" in text


def test_integrate_manifold_scenario() -> None:
    code, out = run("integrate-manifold", "--scenario", str(SCENARIOS / "manifold.json"), "--grid-depth", "7")
    assert code == 0, out
    assert "manifold.chart_independence" in out


def test_rde_manifold_scenario() -> None:
    code, out = run("rde-manifold", "--scenario", str(SCENARIOS / "rde.json"), "--grid-depth", "8")
    assert code == 0, out
    assert "slope" in out
