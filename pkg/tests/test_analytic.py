from __future__ import annotations

import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import oracles
from capri.analytic import (AnalyticError, ConstantsContext, NotEvaluable, absolute_sandwich_factor,
                            ball_dirichlet_eigenvalue, body_capacity_factors, body_constants,
                            cap_ball_absolute, cap_ball_relative, capacity_scaling,
                            cheeger_type_constant, constants_table, cube_count, funnel_index_bound,
                            inhomogeneous_rescaling_bounds, inhomogeneous_sandwich_factors,
                            inradius_comparison_factor, ms_constants, sobolev_constant,
                            theorem52_constants, theta_equivalence_factor)
from capri.shapes import ball_body, cube_body

dims = st.sampled_from([2, 3])


@st.composite
def n_p(draw, allow_n: bool = True):
    N = draw(dims)
    hi = float(N) if allow_n else N - 1e-3
    p = draw(st.one_of(st.just(1.0), st.just(2.0 if 2 <= hi else 1.0), st.floats(1.05, hi)))
    return N, min(p, hi)


def test_context_validation():
    with pytest.raises(AnalyticError):
        ConstantsContext(4, 2)
    with pytest.raises(AnalyticError):
        ConstantsContext(2, 3)
    with pytest.raises(AnalyticError):
        ConstantsContext(3, 2, sobolev=-1.0)
    assert ConstantsContext(3, 2, sobolev=0.5).S == 0.5
    assert ConstantsContext(3, 2).sobolev_source == "builtin"


@given(n_p(), st.floats(0.05, 5.0), st.floats(1.05, 10.0))
def test_relative_ball_capacity_matches_quadrature(np_, r, factor):
    N, p = np_
    ctx = ConstantsContext(N, p)
    assert cap_ball_relative(ctx, r, r * factor) == pytest.approx(
        oracles.radial_capacity(N, p, r, r * factor), rel=1e-6)


def test_relative_ball_capacity_planar_harmonic():
    assert cap_ball_relative(ConstantsContext(2, 2), 1, 2) == pytest.approx(2 * math.pi / math.log(2))


@given(n_p(), st.floats(0.1, 5.0))
def test_ball_monotone_in_radius(np_, r):
    N, p = np_
    ctx = ConstantsContext(N, p)
    assert cap_ball_relative(ctx, r, 2 * r) <= cap_ball_relative(ctx, 1.01 * r, 2.02 * r) * (1 + 1e-12)


@given(n_p(allow_n=False), st.floats(0.1, 3.0))
def test_absolute_is_limit_of_relative(np_, r):
    N, p = np_
    ctx = ConstantsContext(N, p)
    absolute = cap_ball_absolute(ctx, r)
    for R in (2 * r, 10 * r, 1e6 * r):
        rel = cap_ball_relative(ctx, r, R)
        assert absolute <= rel
        if p > 1:
            # cap(B_r; B_R) = cap(B_r) (1 - (r/R)^kappa)^(1-p), kappa = (N-p)/(p-1)
            kappa = (N - p) / (p - 1)
            assert rel * (1 - (r / R) ** kappa) ** (p - 1) == pytest.approx(absolute, rel=1e-9)
        else:
            assert rel == pytest.approx(absolute)


def test_absolute_vanishes_at_p_equal_n():
    assert cap_ball_absolute(ConstantsContext(2, 2), 1.0) == 0.0


@given(n_p(), st.floats(0.1, 10.0))
def test_capacity_scaling(np_, t):
    N, p = np_
    ctx = ConstantsContext(N, p)
    assert capacity_scaling(cap_ball_relative(ctx, 1, 2), t, ctx) == pytest.approx(
        cap_ball_relative(ctx, t, 2 * t), rel=1e-9)


def test_ball_eigenvalues():
    assert ball_dirichlet_eigenvalue(2) == pytest.approx(oracles.disc_eigenvalue(), rel=1e-12)
    assert ball_dirichlet_eigenvalue(3) == pytest.approx(oracles.ball3_eigenvalue(), rel=1e-10)
    assert ball_dirichlet_eigenvalue(1) == pytest.approx(math.pi ** 2 / 4, rel=1e-10)


def test_sobolev_constant_references():
    # p = 1: isoperimetric constant 1 / (N w_N^(1/N))
    assert sobolev_constant(2, 1) == pytest.approx(1 / (2 * math.sqrt(math.pi)))
    # N = 3, p = 2: Aubin-Talenti ||grad u||_2^2 >= 3 (pi/2)^(4/3) ||u||_6^2
    assert sobolev_constant(3, 2) == pytest.approx(1 / (3 * (math.pi / 2) ** (4 / 3)), rel=1e-12)
    with pytest.raises(AnalyticError):
        sobolev_constant(2, 2)


@given(n_p(allow_n=False))
def test_ms_constants_order(np_):
    N, p = np_
    alpha, beta = ms_constants(ConstantsContext(N, p))
    assert 0 < alpha.value <= 1 <= beta.value


def test_ms_constants_reject_p_equal_n():
    with pytest.raises(AnalyticError, match="p<N"):
        ms_constants(ConstantsContext(2, 2))
    alpha, beta = ms_constants(ConstantsContext(1, 1))
    assert alpha.value == beta.value == 1.0


def test_body_constants_order_and_inputs():
    ctx = ConstantsContext(2, 2)
    for body in (cube_body(2), ball_body(2)):
        c, d = body_constants(ctx, 0.8, 4.9, 5.78, body)
        assert 0 < c.value <= 1 <= d.value
        assert c.inputs["R_K"] == body.R
    with pytest.raises(AnalyticError):
        body_constants(ctx, 0.0, 1.0, 1.0, cube_body(2))


def test_sandwich_factors():
    ctx = ConstantsContext(2, 1.5)
    F = absolute_sandwich_factor(ctx, 4.0, 0.5)
    assert F == pytest.approx(2 ** 0.5 * (1 + 4.0 ** 0.75 * ctx.S / 0.5 ** 1.5))
    assert absolute_sandwich_factor(ConstantsContext(1, 1), 3.0, 0.5) == pytest.approx(4.0)
    lo, hi = inhomogeneous_sandwich_factors(ConstantsContext(2, 2), 3.0, 0.5)
    assert (lo, hi) == pytest.approx((0.75, 8.0))
    lo, hi = inhomogeneous_rescaling_bounds(ConstantsContext(3, 2), 2.0)
    assert (lo, hi) == (2.0, 8.0)
    lo, hi = inhomogeneous_rescaling_bounds(ConstantsContext(3, 2), 0.5)
    assert (lo, hi) == (0.125, 0.5)
    a, b = body_capacity_factors(ConstantsContext(2, 2), cube_body(2), 4.0, 5.0, 0.5, 1.0)
    assert a == pytest.approx((2 / 2 + 1) ** 2)
    assert b > 1


def test_funnel_index_bound_cone():
    # beta = 1, delta = 1/2, h = 1: r0 = sqrt(5), t = 0, c = 1/(2 pi), bound 1/(4 pi)
    b = funnel_index_bound(2, 1.0, 0.5, 1.0)
    assert b.r0 == pytest.approx(math.sqrt(5))
    assert b.t == 0
    assert b.c == pytest.approx(1 / (2 * math.pi))
    assert b.lower_bound == pytest.approx(1 / (4 * math.pi))


def test_funnel_index_bound_cusp():
    b = funnel_index_bound(2, 0.4, 0.5, 0.5)
    assert b.r0 == pytest.approx(math.sqrt(0.25 + 1.0))
    assert b.t == pytest.approx(1.5)
    assert b.c == pytest.approx(0.05408, abs=5e-5)
    assert b.lower_bound == pytest.approx(0.02704, abs=5e-5)


def test_theta_factor_and_cheeger_constant():
    assert theta_equivalence_factor(2, 1.5) == pytest.approx(2 ** 3.5)
    assert cheeger_type_constant(1, 2) == 0.25
    with pytest.raises(AnalyticError):
        cheeger_type_constant(2, 1)


def test_comparison_constants_and_gate():
    ctx = ConstantsContext(2, 2)
    cap12 = cap_ball_relative(ctx, 1, 2)
    k = theorem52_constants(ctx, 0.0, 0.5, 1.0, 1.0, cap12, ball_dirichlet_eigenvalue(2) / 4)
    assert k.A.value == pytest.approx(2 * math.sqrt(2) * 3) and k.A.value <= 6 * math.sqrt(2)
    assert k.ell.value == pytest.approx(3.0)
    g0 = k.gamma0.value
    assert 0 < g0 < 1
    assert inradius_comparison_factor(ctx, g0 / 2, g0).value == pytest.approx(6 * math.sqrt(2))
    with pytest.raises(NotEvaluable, match="external constants required"):
        inradius_comparison_factor(ctx, 2 * g0, g0)
    assert inradius_comparison_factor(ctx, 2 * g0, g0, C_Npg=1.0, sigma_Np=1.0).value > 6 * math.sqrt(2)
    with pytest.raises(AnalyticError):
        theorem52_constants(ctx, 0.0, 0.5, 1.0, math.inf, cap12, 1.0)


@given(st.floats(0.1, 10), st.floats(0.01, 1.0), dims)
def test_cube_count(r, ell, N):
    m = cube_count(r, ell, N)
    assume(m >= 1)
    # m cubes of side ell fit along the side 2r/sqrt(N) of the inscribed cube, halved
    assert m * ell <= r / math.sqrt(N) + 1e-12


def test_constants_table_keys():
    t = constants_table(ConstantsContext(2, 2))
    assert t["cap_p(B1;B2)"] == pytest.approx(2 * math.pi / math.log(2))
    assert "alpha" not in t
    t3 = constants_table(ConstantsContext(3, 1.5))
    assert {"alpha", "beta", "S_{N,p}", "cap_p(B1)"} <= set(t3)
