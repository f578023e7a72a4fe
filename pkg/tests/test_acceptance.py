"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL`` line, repeated in the
terminal summary.  Criteria 4-9 share two runs of
``capri verify --suite default``.
"""
from __future__ import annotations

import json
import math
import subprocess
import sys
import time

import pytest

import oracles
from capri import solver
from capri import verify as vf
from capri.analytic import ConstantsContext, ball_dirichlet_eigenvalue, cap_ball_relative
from capri.shapes import Ball, Box, rasterize

SUBSET = ["MEAS-LB", "CAP-MONO", "BALL-MONO", "BODY-UB", "BODY-LB", "ABS-SAND", "ABS-SAND-1D",
          "INHOM-SAND", "INHOM-RESCALE", "THETA-EQ", "CHEEGER", "CHEEGER-PQ"]


def _verify_default(out):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "capri.cli", "verify", "--suite", "default",
                           "--out", str(out)], capture_output=True, text=True)
    return proc, time.perf_counter() - t0


@pytest.fixture(scope="module")
def default_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("verify")
    first, t1 = _verify_default(base / "a" / "report.json")
    second, t2 = _verify_default(base / "b" / "report.json")
    return {"paths": (base / "a" / "report.json", base / "b" / "report.json"),
            "codes": (first.returncode, second.returncode), "seconds": (t1, t2),
            "stderr": first.stderr + second.stderr}


@pytest.fixture(scope="module")
def records(default_runs):
    path = default_runs["paths"][0]
    if not path.exists():
        pytest.fail(f"default suite wrote no report: {default_runs['stderr'][-2000:]}")
    doc = json.loads(path.read_text())
    return {(r["check_id"], r["scenario"]): r for r in doc["records"]}


def test_criterion_1_closed_form_capacity(criterion):
    rows, ok = [], True
    for N, h in ((2, 1 / 64), (3, 1 / 32)):
        z = (0.0,) * N
        box = ((-2.0,) * N, (2.0,) * N)
        sigma = rasterize(Ball(z, 1.0, closed=True), h, box)
        E = rasterize(Ball(z, 2.0), h, box)
        for p in sorted({1.5, 2.0, float(N)}):
            t0 = time.perf_counter()
            value = solver.relative_capacity(sigma, E, p).value
            dt = time.perf_counter() - t0
            exact = cap_ball_relative(ConstantsContext(N, p), 1.0, 2.0)
            err = abs(value / exact - 1)
            ok &= err <= 0.08 and dt < 60
            rows.append(f"N={N} p={p:g} err={err:.3f} {dt:.0f}s")
    criterion(1, ok, "; ".join(rows))
    assert ok


def test_criterion_2_eigenvalues(criterion):
    disc = rasterize(Ball((0.0, 0.0), 1.0), 1 / 64, ((-1.0, -1.0), (1.0, 1.0)))
    lam_d = solver.poincare_constant(disc, 2.0).value
    # the square has no prescribed spacing; 1/128 keeps the half-cell boundary shift under 2%
    square = rasterize(Box((0.0, 0.0), (1.0, 1.0)), 1 / 128, ((0.0, 0.0), (1.0, 1.0)))
    lam_s = solver.poincare_constant(square, 2.0).value
    err_d = abs(lam_d / oracles.disc_eigenvalue() - 1)
    err_s = abs(lam_s / oracles.rectangle_eigenvalue(1, 1) - 1)
    ok = err_d <= 0.02 and err_s <= 0.02
    criterion(2, ok, f"disc {lam_d:.4f} (err {err_d:.4f}); square {lam_s:.3f} (err {err_s:.4f})")
    assert ok


def test_criterion_3_inequality_suite(criterion):
    t0 = time.perf_counter()
    rep = vf.run_suite(SUBSET, vf.default_scenarios(), slack=1.10)
    dt = time.perf_counter() - t0
    bad = [(r.check_id, r.scenario, r.status) for r in rep.records if r.status != "pass"]
    covered = {r.check_id for r in rep.records}
    ok = not bad and covered == set(SUBSET) and dt < 15 * 60
    criterion(3, ok, f"{len(rep.records)} records, {len(bad)} not passing, {dt / 60:.1f} min"
                     + (f" {bad}" if bad else ""))
    assert ok


def test_criterion_4_inradius_comparison_desk_check(criterion, records):
    rows, ok = [], True
    N = 2
    for name in ("square", "funnel"):
        r = records[("T52", name)]
        d = r["details"]
        C_ok = d["C"] <= 6 * math.sqrt(N) + 1e-12 and d["A"] <= 6 * math.sqrt(N) + 1e-12
        gamma_ok = math.isclose(d["gamma"], d["gamma0"] / 2)
        lower = d["r_Omega"] <= d["R"] + d["spacing"]
        upper = d["R"] <= 6 * math.sqrt(N) * d["r_Omega"] + d["spacing"]
        ok &= r["status"] == "pass" and C_ok and gamma_ok and lower and upper
        rows.append(f"{name}: gamma0={d['gamma0']:.3g} r={d['r_Omega']:.3f} R={d['R']:.3f} A={d['A']:.3f} C={d['C']:.3f}")
    criterion(4, ok, "; ".join(rows))
    assert ok


def test_criterion_5_perforated_counterexample(criterion, records):
    r = records[("CEX-PERF", "perforated")]
    reps = r["details"]["reports"]
    deltas = [x["delta"] for x in reps]
    lams = [x["lam"] for x in reps]
    decreasing = all(b < a for a, b in zip(lams, lams[1:]))
    bound = math.sqrt(2) / 2 + 0.25
    gal_ok = all(x["gallagher"] <= bound + 2 * x["coarse_spacing"] for x in reps)
    capture_ok = all(x["capture_failures"] == 0 and x["capture_radius"] == 1.1 for x in reps)
    ok = (deltas == [0.2, 0.1, 0.05] and decreasing and gal_ok and capture_ok
          and r["status"] == "pass")
    detail = ", ".join(f"delta={x['delta']:g}: lambda={x['lam']:.3f} R^G={x['gallagher']:.3f}"
                       for x in reps)
    criterion(5, ok, detail)
    assert ok


def test_criterion_6_gamma_ladder(criterion, records):
    rows, ok = [], True
    for name in ("disc", "perforated"):
        d = records[("RG-LIMIT", name)]["details"]
        gammas, values, h = d["gammas"], d["values"], d["spacing"]
        ladder_ok = gammas == [2.0 ** -j for j in range(1, 9)]
        monotone = all(b <= a for a, b in zip(values, values[1:]))
        settled = values[-2] - values[-1] <= h + 1e-12
        ok &= ladder_ok and monotone and settled
        rows.append(f"{name}: {values[0]:.3f} -> {values[-1]:.3f} (h={h:g})")
    criterion(6, ok, "; ".join(rows))
    assert ok


def test_criterion_7_funnel_indices(criterion, records):
    rows, ok = [], True
    expected = {"cone_complement": (1.0, 0.5, 1.0), "funnel": (0.4, 0.5, 0.5)}
    for name, (beta, delta, h0) in expected.items():
        d = records[("FUNNEL", name)]["details"]
        mc_err = abs(d["monte_carlo"] - d["volume"]) / d["volume"]
        params = (d["beta"], d["delta"], d["h"]) == pytest.approx((beta, delta, h0))
        ok &= params and d["theta_vertex"] >= d["lower_bound"] and mc_err <= 0.02
        rows.append(f"{name}: theta*={d['theta_vertex']:.4f} >= {d['lower_bound']:.4f}, MC err {mc_err:.4f}")
    criterion(7, ok, "; ".join(rows))
    assert ok


def test_criterion_8_buser(criterion, records):
    rows, ok = [], True
    lam_b = ball_dirichlet_eigenvalue(2)
    for name in ("square", "disc"):
        d = records[("BUSER", name)]["details"]
        r = d["r_Omega"]
        c_ok = d["c"] > 0 and d["cheeger"] * r >= d["c"] - 1e-12
        lam_ok = d["lambda"] * r * r <= lam_b * 1.05
        C_ok = math.isclose(d["C"], lam_b / d["c"] ** 2) and d["lambda"] <= d["C"] * d["cheeger"] ** 2
        ok &= c_ok and lam_ok and C_ok
        rows.append(f"{name}: c={d['c']:.3f} lambda r^2={d['lambda'] * r * r:.3f} C={d['C']:.3f}")
    criterion(8, ok, "; ".join(rows))
    assert ok


def test_criterion_9_determinism(criterion, default_runs):
    a, b = default_runs["paths"]
    same = a.exists() and b.exists() and a.read_bytes() == b.read_bytes()
    codes = default_runs["codes"]
    t1, t2 = default_runs["seconds"]
    criterion(9, same, f"byte-identical={same}, exit codes {codes}, {t1 / 60:.1f} and {t2 / 60:.1f} min")
    assert same
