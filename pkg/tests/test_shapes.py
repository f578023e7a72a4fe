from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from capri.shapes import (Ball, BodyInstance, Box, Funnel, GridDomain, HalfSpace, PerforatedLattice,
                          ShapeError, SvgOverlay, UnderResolvedError, ball_body, classical_inradius,
                          cube_body, distance_to_complement, ellipse_body, field_to_pgm, funnel_volume,
                          lattice_ball, monte_carlo_volume, rasterize, shape_from_dict, to_pgm, to_svg,
                          unit_ball_volume)

coords = st.floats(-3, 3, allow_nan=False)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_unit_ball_volume(n):
    assert unit_ball_volume(n) == pytest.approx(oracles.unit_ball_volume(n), rel=1e-14)


def test_ball_membership_open_and_closed():
    pts = np.array([[1.0, 0.0], [0.5, 0.0], [1.5, 0.0]])
    assert Ball((0, 0), 1.0).contains(pts).tolist() == [False, True, False]
    assert Ball((0, 0), 1.0, closed=True).contains(pts).tolist() == [True, True, False]


def test_box_and_half_space():
    pts = np.array([[0.5, 0.5], [1.0, 0.5], [-0.1, 0.2]])
    assert Box((0, 0), (1, 1)).contains(pts).tolist() == [True, False, False]
    assert HalfSpace((1, 0), 0.0).contains(pts).tolist() == [False, False, True]


def test_composite_operators():
    sq = Box((-1, -1), (1, 1))
    disc = Ball((0, 0), 0.5)
    pts = np.array([[0.0, 0.0], [0.9, 0.9], [2.0, 0.0]])
    assert (sq - disc).contains(pts).tolist() == [False, True, False]
    assert (sq & disc).contains(pts).tolist() == [True, False, False]
    assert (sq | Ball((2, 0), 0.1)).contains(pts).tolist() == [True, True, True]


def test_perforated_lattice_rejects_large_holes():
    with pytest.raises(ShapeError):
        PerforatedLattice(0.25, (0, 0), (3, 3))
    lat = PerforatedLattice(0.2, (0, 0), (3, 3))
    assert lat.contains(np.array([[1.1, 1.0], [1.5, 1.5], [1.0, 1.3]])).tolist() == [False, True, True]


def test_funnel_cone_membership():
    f = Funnel((0, 1), 0.5, 1.0)
    pts = np.array([[0.0, 0.5], [0.5, 0.2], [0.5, 0.3], [0.0, 1.2]])
    assert f.contains(pts).tolist() == [True, False, True, False]


@given(st.floats(0.3, 1.0), st.floats(0.2, 2.0), st.floats(0.2, 2.0))
def test_funnel_volume_matches_quadrature(beta, delta, height):
    # planar funnel: width 2 (y/delta)^(1/beta) at height y
    from scipy import integrate
    ref, _ = integrate.quad(lambda y: 2 * (y / delta) ** (1 / beta), 0, height)
    assert funnel_volume(2, beta, delta, height) == pytest.approx(ref, rel=1e-8)


def test_funnel_volume_3d_cone():
    # cone of height H and base radius H/delta: pi (H/delta)^2 H / 3
    assert funnel_volume(3, 1.0, 0.5, 1.0) == pytest.approx(math.pi * 4 / 3, rel=1e-12)


def test_monte_carlo_volume_is_seeded_and_accurate():
    disc = Ball((0, 0), 1.0)
    v1, e1 = monte_carlo_volume(disc, (-1, -1), (1, 1), samples=100_000, seed=3)
    v2, _ = monte_carlo_volume(disc, (-1, -1), (1, 1), samples=100_000, seed=3)
    assert v1 == v2
    assert abs(v1 - math.pi) < 4 * e1


@given(st.fixed_dictionaries({"c": st.tuples(coords, coords), "r": st.floats(0.1, 2.0),
                              "closed": st.booleans()}))
def test_shape_dict_roundtrip(d):
    shape = Ball(d["c"], d["r"], d["closed"]) - Funnel((0, 1), 0.5, d["r"], 0.5, d["c"])
    doc = json.loads(json.dumps(shape.to_dict()))
    again = shape_from_dict(doc)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-5, 5, size=(500, 2))
    assert np.array_equal(shape.contains(pts), again.contains(pts))


def test_body_roundtrip():
    for body in (cube_body(2), ball_body(2), ellipse_body((2.0, 1.0))):
        inst = BodyInstance(body, 0.7, (0.1, -0.2))
        again = shape_from_dict(json.loads(json.dumps(inst.to_dict())))
        pts = np.random.default_rng(1).uniform(-2, 2, size=(400, 2))
        assert np.array_equal(inst.contains(pts), again.contains(pts))


def test_standard_bodies():
    cube = cube_body(2)
    assert cube.R == pytest.approx(math.sqrt(2), rel=1e-6)
    assert cube.inner_gap > 0
    ball = ball_body(2)
    assert ball.R == pytest.approx(1.0)
    # distance from B1 to the boundary of B2 is one
    assert ball.inner_gap == pytest.approx(1.0, rel=1e-3)


def test_rasterize_disc_area_and_under_resolution():
    d = rasterize(Ball((0, 0), 1.0), 1 / 64, ((-1.25, -1.25), (1.25, 1.25)))
    assert d.volume == pytest.approx(math.pi, rel=5e-3)
    with pytest.raises(UnderResolvedError):
        rasterize(PerforatedLattice(0.05, (0, 0), (2, 2)), 0.0625, ((0, 0), (2, 2)))


@pytest.mark.parametrize("h", [1 / 16, 1 / 32, 1 / 64])
def test_classical_inradius_of_square_and_disc(h):
    sq = rasterize(Box((-1, -1), (1, 1)), h, ((-1.25, -1.25), (1.25, 1.25)))
    c = classical_inradius(sq)
    assert c.lower <= 1.0 <= c.upper
    assert abs(c.value - 1.0) <= h
    disc = rasterize(Ball((0, 0), 1.0), h, ((-1.25, -1.25), (1.25, 1.25)))
    assert abs(classical_inradius(disc).value - 1.0) <= 2 * h


def test_classical_inradius_empty():
    d = GridDomain(np.zeros((4, 4), bool), 0.5, (0, 0))
    assert classical_inradius(d).value == 0.0


@given(st.integers(1, 12), st.sampled_from([2, 3]))
def test_lattice_ball_is_symmetric_and_contains_axes(k, dim):
    b = lattice_ball(k, dim=dim)
    assert b.shape == (2 * k + 1,) * dim
    assert np.array_equal(b, b[::-1])
    center = (k,) * dim
    assert b[center]
    edge = list(center)
    edge[0] = 0
    assert b[tuple(edge)]
    assert not lattice_ball(k, closed=False, dim=dim)[tuple(edge)]


def test_distance_to_complement_matches_geometry():
    d = rasterize(Box((0, 0), (1, 1)), 0.125, ((0, 0), (1, 1)))
    dist = distance_to_complement(d)
    # corner cell: nearest empty cell center is one spacing away (outside the box)
    assert dist[0, 0] == pytest.approx(0.125)
    assert dist[3, 3] == pytest.approx(0.5)


def test_grid_domain_index_roundtrip():
    d = GridDomain(np.ones((8, 6), bool), 0.25, (-1.0, 0.5))
    for idx in [(0, 0), (3, 5), (7, 2)]:
        assert d.index_of(d.center_of(idx)) == idx
    crop = GridDomain(np.pad(np.ones((2, 2), bool), 2), 0.5, (0, 0)).cropped()
    assert crop.shape == (2, 2) and crop.origin == (1.0, 1.0)


def test_pgm_and_svg_export():
    d = rasterize(Box((0, 0), (1, 0.5)), 0.125, ((0, 0), (1, 1)))
    pgm = to_pgm(d)
    assert pgm.startswith(b"P5\n8 8\n255\n")
    body = np.frombuffer(pgm.split(b"\n", 3)[3], dtype=np.uint8).reshape(8, 8)
    # top rows are outside, bottom rows inside
    assert body[0].max() == 0 and body[-1].min() == 255
    svg = to_svg(d, SvgOverlay(circles=[((0.5, 0.25), 0.2, "#123456")],
                               points=[((0.1, 0.1), "#00ff00")]))
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "#123456" in svg and "#00ff00" in svg
    assert field_to_pgm(np.arange(6.0).reshape(2, 3)).startswith(b"P5\n2 3\n255\n")
