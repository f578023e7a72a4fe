from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from capri import solver
from capri.analytic import ConstantsContext, cap_ball_absolute
from capri.shapes import Ball, Box, GridDomain, rasterize


def _disc(r: float, h: float, half: float) -> GridDomain:
    return rasterize(Ball((0.0, 0.0), r, closed=True), h, ((-half, -half), (half, half)))


def _open_disc(r: float, h: float, half: float) -> GridDomain:
    return rasterize(Ball((0.0, 0.0), r), h, ((-half, -half), (half, half)))


@st.composite
def nested_masks(draw, n: int = 14):
    """Random E (open set) with sigma compactly inside, plus enlargements of both."""
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 31 - 1)))
    E = np.zeros((n, n), bool)
    E[2:-2, 2:-2] = rng.random((n - 4, n - 4)) < 0.9
    E[4:-4, 4:-4] = True
    sigma = np.zeros_like(E)
    sigma[5:-5, 5:-5] = rng.random((n - 10, n - 10)) < 0.6
    sigma[n // 2, n // 2] = True
    sigma_big = sigma.copy()
    sigma_big[5:-5, 5:-5] |= rng.random((n - 10, n - 10)) < 0.5
    E_big = E.copy()
    E_big[1:-1, 1:-1] |= rng.random((n - 2, n - 2)) < 0.5
    return sigma, sigma_big, E, E_big


# -- closed forms ----------------------------------------------------------


def test_relative_capacity_planar_harmonic_disc():
    h = 1 / 32
    res = solver.relative_capacity(_disc(0.5, h, 1.25), _open_disc(1.0, h, 1.25), 2.0)
    assert res.converged
    assert res.value == pytest.approx(oracles.radial_capacity(2, 2, 0.5, 1.0), rel=0.08)


def test_relative_capacity_nonlinear_disc():
    h = 1 / 32
    res = solver.relative_capacity(_disc(0.5, h, 1.25), _open_disc(1.0, h, 1.25), 1.5)
    assert res.value == pytest.approx(oracles.radial_capacity(2, 1.5, 0.5, 1.0), rel=0.08)


def test_relative_capacity_p_one_is_perimeter():
    h = 1 / 32
    res = solver.relative_capacity(_disc(0.5, h, 1.25), _open_disc(1.0, h, 1.25), 1.0)
    assert res.value == pytest.approx(2 * math.pi * 0.5, rel=0.10)
    assert res.bracket is not None and res.bracket[1] >= res.value * 0.99


def test_one_dimensional_harmonic_capacity_is_exact():
    # cells 0..39; E = cells 5..34, sigma = cells 15..19
    h = 0.1
    E = np.zeros(40, bool)
    E[5:35] = True
    sigma = np.zeros(40, bool)
    sigma[15:20] = True
    res = solver.capacity_arrays(sigma, E, 2.0, h)
    # linear profiles from the last sigma cell to the first cell outside E
    left, right = (15 - 4) * h, (35 - 19) * h
    assert res.value == pytest.approx(1 / left + 1 / right, rel=1e-9)


def test_one_dimensional_p_one_counts_jumps():
    E = np.zeros(60, bool)
    E[5:55] = True
    sigma = np.zeros(60, bool)
    sigma[10:15] = True
    sigma[30:40] = True
    res = solver.capacity_arrays(sigma, E, 1.0, 0.05)
    assert res.value == pytest.approx(oracles.interval_tv_capacity(1))
    E2 = E.copy()
    E2[25] = False  # splits E into two components, each meeting sigma
    assert solver.capacity_arrays(sigma, E2, 1.0, 0.05).value == pytest.approx(
        oracles.interval_tv_capacity(2))


def test_disc_and_square_eigenvalues():
    disc = _open_disc(1.0, 1 / 64, 1.0)
    assert solver.poincare_constant(disc, 2.0).value == pytest.approx(oracles.disc_eigenvalue(), rel=0.02)
    sq = rasterize(Box((0, 0), (1, 1)), 1 / 128, ((0, 0), (1, 1)))
    assert solver.poincare_constant(sq, 2.0).value == pytest.approx(
        oracles.rectangle_eigenvalue(1, 1), rel=0.02)


def test_rectangle_matches_five_point_stencil():
    # n x m interior nodes, zero on the surrounding ring: 4/h^2 (sin^2(pi/2(n+1)) + sin^2(pi/2(m+1)))
    h = 1 / 32
    rect = rasterize(Box((0, 0), (2, 1)), h, ((0, 0), (2, 1)))
    n, m = rect.shape
    exact = 4 / h ** 2 * (math.sin(math.pi / (2 * (n + 1))) ** 2 + math.sin(math.pi / (2 * (m + 1))) ** 2)
    assert solver.poincare_constant(rect, 2.0).value == pytest.approx(exact, rel=1e-6)
    # and the continuum value lies within the O(h) shift of the effective side lengths
    assert solver.poincare_constant(rect, 2.0).value == pytest.approx(
        oracles.rectangle_eigenvalue(2, 1), rel=0.06)


def test_inhomogeneous_capacity_of_disc():
    h = 1 / 32
    res = solver.inhomogeneous_capacity(_disc(0.5, h, 0.75), 2.0)
    assert res.value == pytest.approx(oracles.inhomogeneous_disc_capacity(0.5), rel=0.05)


def test_absolute_capacity_of_disc():
    h = 1 / 16
    ctx = ConstantsContext(2, 1.5)
    res = solver.absolute_capacity(_disc(0.5, h, 0.75), 1.5, ctx=ctx)
    assert res.value == pytest.approx(cap_ball_absolute(ctx, 0.5), rel=0.10)
    lo, hi = res.bracket
    assert lo <= res.value <= hi


def test_cheeger_constant_of_disc():
    res = solver.cheeger_constant(_open_disc(1.0, 1 / 32, 1.0))
    assert res.value == pytest.approx(oracles.disc_cheeger(), rel=0.10)
    parts = dict(res.parts)
    assert {"lambda_1.2", "lambda_1.1", "lambda_1.05", "opening_ratio"} <= set(parts)
    # lambda_p^(1/p) p bounds h(Omega) from above (Cheeger-type inequality with q = p, p -> 1)
    assert parts["hoelder_upper"] >= oracles.disc_cheeger() * 0.95


# -- exact discrete identities ---------------------------------------------


@given(st.floats(0.25, 4.0), st.sampled_from([1.5, 2.0]))
def test_capacity_scales_like_t_to_n_minus_p(t, p):
    sigma = np.zeros((20, 20), bool)
    sigma[8:12, 9:11] = True
    E = np.zeros_like(sigma)
    E[3:17, 2:18] = True
    base = solver.capacity_arrays(sigma, E, p, 0.1).value
    scaled = solver.capacity_arrays(sigma, E, p, 0.1 * t).value
    assert scaled == pytest.approx(t ** (2 - p) * base, rel=1e-5)


@given(st.floats(0.25, 4.0))
def test_eigenvalue_scales_like_t_to_minus_two(t):
    d = _open_disc(1.0, 1 / 16, 1.0)
    lam = solver.poincare_constant(d, 2.0).value
    assert solver.poincare_constant(d.scaled(t), 2.0).value == pytest.approx(lam / t ** 2, rel=1e-8)


@given(nested_masks())
def test_capacity_monotonicity(masks):
    sigma, sigma_big, E, E_big = masks
    h = 0.1
    c = solver.capacity_arrays(sigma, E, 2.0, h).value
    assert c <= solver.capacity_arrays(sigma_big, E, 2.0, h).value * (1 + 1e-9)
    assert solver.capacity_arrays(sigma, E_big, 2.0, h).value <= c * (1 + 1e-9)


@given(nested_masks())
def test_measure_lower_bound(masks):
    sigma, _, E, _ = masks
    h = 0.1
    lam = solver.poincare_constant(GridDomain(E, h, (0.0, 0.0)), 2.0).value
    cap = solver.capacity_arrays(sigma, E, 2.0, h).value
    assert sigma.sum() * h * h * lam <= cap * (1 + 1e-8)


@given(nested_masks())
def test_nonlinear_capacity_monotone_in_sigma(masks):
    sigma, sigma_big, E, _ = masks
    h = 0.1
    c0 = solver.capacity_arrays(sigma, E, 1.5, h).value
    c1 = solver.capacity_arrays(sigma_big, E, 1.5, h).value
    assert c0 <= c1 * (1 + 1e-5)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_extrapolation_is_exact_on_its_model(a, b, c):
    eps = np.array([0.2, 0.1, 0.05])
    vals = a + b * eps + c * eps * np.log(eps)
    assert solver.extrapolate_to_one(eps, vals) == pytest.approx(a, abs=1e-9)


# -- preconditions and plumbing --------------------------------------------


def test_preconditions():
    h = 1 / 16
    disc = _open_disc(0.5, h, 1.0)
    with pytest.raises(solver.PreconditionError):
        solver.relative_capacity(_disc(0.9, h, 1.0), disc, 2.0)
    with pytest.raises(solver.PreconditionError):
        solver.poincare_constant(disc, 1.0)
    with pytest.raises(solver.PreconditionError):
        solver.poincare_constant(disc, 3.0)
    with pytest.raises(ValueError):
        solver.SolverOptions(method="cg")


def test_poincare_sobolev_and_nonlinear_eigenvalues():
    d = _open_disc(1.0, 1 / 32, 1.0)
    lam2 = solver.poincare_constant(d, 2.0).value
    lam15 = solver.poincare_constant(d, 1.5).value
    lam23 = solver.poincare_constant(d, 2.0, 3.0).value
    # Cheeger-type inequality (p/q)^q lambda_p^(q/p) <= lambda_q
    assert (1.5 / 2) ** 2 * lam15 ** (2 / 1.5) <= lam2
    assert lam23 > 0 and math.isfinite(lam23)


@given(st.integers(0, 2 ** 31 - 1))
def test_domain_encoding_roundtrip(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((7, 5)) < 0.5
    d = GridDomain(mask, 0.3, (1.0, -2.0))
    back = solver.decode_domain(solver.encode_domain(d))
    assert np.array_equal(back.mask, mask) and back.spacing == 0.3 and back.origin == (1.0, -2.0)


def test_variational_problem_roundtrip():
    h = 1 / 16
    prob = solver.VariationalProblem("relative_capacity", (_disc(0.5, h, 1.25), _open_disc(1.0, h, 1.25)), 2.0)
    again = solver.VariationalProblem.from_dict(prob.to_dict())
    assert again.solve().value == pytest.approx(prob.solve().value, rel=1e-12)
    with pytest.raises(ValueError):
        solver.VariationalProblem("poincare", (), 2.0)
