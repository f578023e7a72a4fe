from __future__ import annotations

import json
import math

import pytest

from capri import cli, solver


def _write_scenarios(path, **extra):
    doc = {"schema": 1, "scenarios": [{
        "name": "disc",
        "shape": {"type": "ball", "center": [0.0, 0.0], "radius": 1.0},
        "bbox": [[-1.25, -1.25], [1.25, 1.25]],
        "spacing": 0.0625, "coarse_spacing": 0.125, **extra}]}
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def scenario_file(tmp_path):
    return _write_scenarios(tmp_path / "disc.json",
                            sigma={"type": "ball", "center": [0.0, 0.0], "radius": 0.5, "closed": True})


def test_constants_prints_closed_forms(capsys):
    assert cli.main(["constants", "--N", "2", "--p", "2"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["cap_p(B1;B2)"] == pytest.approx(2 * math.pi / math.log(2))


def test_constants_rejects_p_above_n(capsys):
    assert cli.main(["constants", "--N", "2", "--p", "3"]) == 1


def test_invalid_scenario_exits_2_without_output(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": 1, "scenarios": [{"name": "x", "shape": {"type": "blob"},
                                                           "bbox": [[0, 0], [1, 1]]}]}))
    out = tmp_path / "out.json"
    assert cli.main(["poincare", "--scenario", str(bad), "--out", str(out)]) == 2
    assert not out.exists()
    assert "schema error" in capsys.readouterr().err


def test_unknown_job_key_exits_2(tmp_path, scenario_file):
    job = tmp_path / "job.json"
    job.write_text(json.dumps({"schema": 1, "command": "poincare", "scenario": str(scenario_file),
                               "colour": "blue"}))
    assert cli.main(["run", str(job)]) == 2


def test_run_job_matches_flags(tmp_path, scenario_file):
    out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
    job = tmp_path / "job.json"
    job.write_text(json.dumps({"schema": 1, "command": "capacity", "scenario": str(scenario_file),
                               "output": str(out_a)}))
    assert cli.main(["run", str(job)]) == 0
    assert cli.main(["capacity", "--scenario", str(scenario_file), "--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    doc = json.loads(out_a.read_text())
    assert doc["results"][0]["value"] == pytest.approx(2 * math.pi / math.log(2), rel=0.15)


def test_relative_capacity_needs_sigma(tmp_path):
    sc = _write_scenarios(tmp_path / "s.json")
    assert cli.main(["capacity", "--scenario", str(sc)]) == 2


def test_poincare_csv(tmp_path, scenario_file):
    out = tmp_path / "lam.csv"
    assert cli.main(["poincare", "--scenario", str(scenario_file), "--format", "csv", "--out", str(out)]) == 0
    header, row = out.read_text().splitlines()[:2]
    cols = dict(zip(header.split(","), row.split(",")))
    assert float(cols["value"]) == pytest.approx(5.7832, rel=0.1)


def test_render_svg_and_pgm(tmp_path, scenario_file):
    svg = tmp_path / "disc.svg"
    assert cli.main(["render", "--scenario", str(scenario_file), "--out", str(svg)]) == 0
    text = svg.read_text()
    assert text.startswith("<svg") and "#1f77b4" in text
    pgm = tmp_path / "disc.pgm"
    assert cli.main(["render", "--scenario", str(scenario_file), "--format", "pgm", "--out", str(pgm)]) == 0
    assert pgm.read_bytes().startswith(b"P5")


def test_verify_select_writes_three_files(tmp_path, scenario_file, capsys):
    out = tmp_path / "rep" / "report.json"
    code = cli.main(["verify", "--scenario", str(scenario_file), "--select", "MEAS-LB", "CHEEGER",
                     "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert {r["check_id"] for r in doc["records"]} == {"MEAS-LB", "CHEEGER"}
    assert out.with_suffix(".csv").read_text().startswith("check_id,")
    assert out.with_suffix(".txt").read_text() == capsys.readouterr().out


def test_verify_unknown_check_exits_2(tmp_path, scenario_file):
    assert cli.main(["verify", "--scenario", str(scenario_file), "--select", "NOPE"]) == 2


def test_non_convergence_exits_3_with_diagnostics(tmp_path, scenario_file, monkeypatch):
    def stuck(*args, **kwargs):
        raise solver.SolverError("iteration limit reached")
    monkeypatch.setattr(solver, "poincare_constant", stuck)
    out, diag = tmp_path / "lam.json", tmp_path / "diag.json"
    code = cli.main(["poincare", "--scenario", str(scenario_file), "--out", str(out),
                     "--diagnostics", str(diag)])
    assert code == 3
    assert not out.exists()
    assert "iteration limit" in json.loads(diag.read_text())["error"]


def test_indeterminate_verify_exits_3(tmp_path, scenario_file, monkeypatch):
    def stuck(*args, **kwargs):
        raise solver.SolverError("iteration limit reached")
    monkeypatch.setattr(solver, "poincare_constant", stuck)
    out = tmp_path / "report.json"
    assert cli.main(["verify", "--scenario", str(scenario_file), "--select", "CHEEGER", "--out", str(out)]) == 3
    assert json.loads(out.with_name("report.diagnostics.json").read_text())["indeterminate"]


def test_registry_listing(capsys):
    assert cli.main(["registry"]) == 0
    assert "CEX-PERF" in capsys.readouterr().out


def test_job_schema_accepts_generated_configs(scenario_file):
    ns = cli.build_parser().parse_args(["inradius", "--scenario", str(scenario_file), "--gamma", "0.5",
                                        "0.25", "--C-Npg", "2.0"])
    cfg = cli.config_from_args(ns)
    cli.validate(cfg, "job_config.json", "config")
    assert cfg["gamma"] == [0.5, 0.25] and cfg["constants"] == {"C_Npg": 2.0}
