from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import pytest
from hypothesis import given
from hypothesis import strategies as st
from referencing import Registry, Resource

import oracles
from capri import solver
from capri import verify as vf
from capri.shapes import ShapeError

ROOT = Path(__file__).resolve().parents[1]


def _scenario(name: str, shape: dict, **kw) -> vf.Scenario:
    kw.setdefault("bbox", ((-1.25, -1.25), (1.25, 1.25)))
    kw.setdefault("spacing", 1 / 32)
    kw.setdefault("coarse_spacing", 1 / 8)
    return vf.Scenario(name=name, shape=shape, **kw)


DISC = _scenario("disc", {"type": "ball", "center": [0.0, 0.0], "radius": 1.0})
SQUARE = _scenario("square", {"type": "box", "lo": [-1.0, -1.0], "hi": [1.0, 1.0]})


def _schema_validator(name: str) -> jsonschema.protocols.Validator:
    base = resources.files("capri").joinpath("schemas")
    docs = {p.name: json.loads(p.read_text()) for p in base.iterdir() if p.name.endswith(".json")}
    reg = Registry().with_resources((k, Resource.from_contents(v)) for k, v in docs.items())
    schema = docs[name]
    return jsonschema.Draft202012Validator(schema, registry=reg)


def test_cheeger_record_on_disc():
    rec = vf.run_check(vf.CheckSpec("CHEEGER", DISC))
    assert rec.status == "pass" and rec.passed
    # (h/2)^2 = 1 against j01^2
    assert rec.lhs == pytest.approx((oracles.disc_cheeger() / 2) ** 2, rel=0.2)
    assert rec.rhs == pytest.approx(oracles.disc_eigenvalue(), rel=0.03)
    assert rec.margin == pytest.approx(rec.rhs / rec.lhs)
    assert rec.mode == "ratio"


def test_measure_and_monotonicity_checks_pass_on_square():
    ctx = vf._Context(SQUARE)
    for cid in ("MEAS-LB", "CAP-MONO", "THETA-EQ"):
        rec = vf.run_check(vf.CheckSpec(cid, SQUARE), ctx)
        assert rec.status == "pass", (cid, rec)
        assert rec.parts


def test_t52_above_gamma0_is_not_evaluable_without_constants():
    sc = _scenario("square", SQUARE.shape, gamma=0.99)
    rec = vf.run_check(vf.CheckSpec("T52", sc))
    assert rec.status == "not evaluable"
    assert rec.passed is None and rec.lhs is None
    assert any("external constants required" in n for n in rec.notes)


def test_upstream_failure_is_indeterminate(monkeypatch):
    def boom(*args, **kwargs):
        raise solver.SolverError("did not converge")
    monkeypatch.setattr(solver, "poincare_constant", boom)
    rec = vf.run_check(vf.CheckSpec("CHEEGER", DISC))
    assert rec.status == "indeterminate" and rec.passed is None
    assert "SolverError" in rec.notes[0]
    report = vf.SuiteReport((rec,))
    assert report.any_indeterminate and not report.all_passed


def test_unknown_and_empty_selections():
    with pytest.raises(vf.VerificationError):
        vf.run_check(vf.CheckSpec("NOPE", DISC))
    with pytest.raises(vf.VerificationError):
        vf.run_suite(["NOPE"], [DISC])
    with pytest.raises(vf.VerificationError):
        vf.run_suite([], [DISC])
    with pytest.raises(vf.VerificationError):
        vf.run_suite(["MEAS-LB"], [DISC, DISC])
    empty = vf.run_suite(["MEAS-LB"], [])
    assert empty.records == () and empty.all_passed
    assert json.loads(empty.to_json())["records"] == []


def test_suite_is_deterministic_and_ordered():
    a = vf.run_suite(["MEAS-LB", "CAP-MONO"], [SQUARE, DISC])
    b = vf.run_suite(["CAP-MONO", "MEAS-LB"], [DISC, SQUARE])
    assert a.to_json() == b.to_json()
    keys = [(r.check_id, r.fingerprint) for r in a.records]
    assert [k[0] for k in keys] == sorted(k[0] for k in keys)
    assert len({r.fingerprint for r in a.records}) == len(a.records)
    assert a.all_passed


def test_report_serializations():
    rep = vf.run_suite(["MEAS-LB"], [SQUARE])
    _schema_validator("verification_record.json").validate(json.loads(rep.to_json()))
    csv_lines = rep.to_csv().splitlines()
    assert csv_lines[0] == "check_id,scenario,lhs,rhs,margin,pass,status"
    assert csv_lines[1].startswith("MEAS-LB,square,") and csv_lines[1].endswith(",true,pass")
    table = rep.to_table().splitlines()
    assert table[0].split() == ["check", "scenario", "lhs", "rhs", "margin", "status"]
    summary = rep.summary()[0]
    assert summary["pass"] == 1 and summary["min_margin"] >= 1


def test_non_finite_values_serialize_as_strings():
    rec = vf.VerificationRecord("X", "s", 0.0, 1.0, math.inf, True, "pass", "ratio", 1.1, "f",
                                details={"v": math.nan})
    doc = json.loads(json.dumps(rec.to_dict()))
    assert doc["margin"] == "inf" and doc["details"]["v"] == "nan"


def test_worst_part_and_margin_modes():
    spec = vf.CheckSpec("MEAS-LB", SQUARE, slack=1.1)
    out = vf._Outcome([vf._Part("a", 1.0, 4.0), vf._Part("b", 1.0, 1.0),
                       vf._Part("c", 0.5, 1.0, "difference")])
    rec = vf._record(spec, "pass", out)
    assert rec.passed and rec.lhs == 1.0 and rec.rhs == 1.0 and rec.margin == 1.0
    # slack only loosens ratio parts
    assert vf._Part("r", 1.05, 1.0).ok(1.1) and not vf._Part("d", 1.05, 1.0, "difference").ok(1.1)
    bad = vf._record(spec, "pass", vf._Outcome([vf._Part("a", 2.0, 1.0), vf._Part("b", 0.1, 1.0)]))
    assert bad.status == "fail" and bad.lhs == 2.0 and bad.margin == 0.5


def test_perforated_arguments():
    with pytest.raises(ShapeError):
        vf.counterexample_perforated(0.25)
    with pytest.raises(ValueError):
        vf.counterexample_perforated(0.2, periods=2)


def test_perforated_eigenvalue_decreases_with_hole_size():
    big = vf.counterexample_perforated(0.2, gallagher=False, spacing=1 / 32)
    small = vf.counterexample_perforated(0.1, gallagher=False, spacing=1 / 32)
    assert small.lam < big.lam
    assert big.capture_failures == 0 and small.capture_failures == 0


@given(st.sampled_from(vf.default_scenarios()), st.floats(0.01, 0.1))
def test_scenario_roundtrip_and_fingerprint(sc, h):
    again = vf.Scenario.from_dict(json.loads(json.dumps(sc.to_dict())))
    assert again == sc and again.fingerprint() == sc.fingerprint()
    moved = vf.Scenario.from_dict({**sc.to_dict(), "spacing": h})
    assert (moved.fingerprint() == sc.fingerprint()) == (h == sc.spacing)


def test_scenario_documents():
    with pytest.raises(vf.VerificationError):
        vf.load_scenarios({"schema": 2, "scenarios": []})
    names = [sc.name for sc in vf.default_scenarios()]
    assert names == ["square", "disc", "cone_complement", "funnel", "perforated"]
    funnel = next(sc for sc in vf.default_scenarios() if sc.name == "funnel")
    assert funnel.funnel["exponent"] == pytest.approx(0.4)
    with pytest.raises(vf.VerificationError):
        _scenario("bad", SQUARE.shape, spacing=0.0)


def test_every_check_applies_somewhere_and_has_an_anchor():
    scs = vf.default_scenarios()
    for info in vf.REGISTRY.values():
        assert any(info.applies(sc) for sc in scs), info.check_id
        assert info.anchor and info.statement


def test_registry_anchors_are_quoted_verbatim():
    source = ROOT / "paper.md"
    if not source.exists():
        pytest.skip("source text not shipped")
    text = source.read_text()
    missing = [c["check_id"] for c in vf.registry_table() if c["anchor"] not in text]
    assert not missing
