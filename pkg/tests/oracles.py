"""Reference values computed independently of the package.

Each oracle uses a different route from the code under test: numerical
quadrature instead of closed forms, Bessel functions from scipy.special,
separation of variables, or elementary geometry.
"""
from __future__ import annotations

import math

from scipy import integrate, special


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def radial_capacity(N: int, p: float, r: float, R: float) -> float:
    """cap_p(B_r-bar; B_R) by quadrature of the radial flux integral.

    For a radial profile u(s) the minimal energy between r and R is
    ``(int_r^R (N w_N s^{N-1})^{-1/(p-1)} ds)^{1-p}`` for p > 1.
    """
    area = N * unit_ball_volume(N)
    if p == 1:
        return area * r ** (N - 1)
    # purely relative tolerance: for p near 1 the integrand is far below quad's default epsabs
    val, _ = integrate.quad(lambda s: (area * s ** (N - 1)) ** (-1.0 / (p - 1)), r, R,
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return val ** (1 - p)


def disc_eigenvalue(radius: float = 1.0) -> float:
    """First Dirichlet eigenvalue of the planar disc: j_{0,1}^2 / radius^2."""
    return float(special.jn_zeros(0, 1)[0]) ** 2 / radius ** 2


def ball3_eigenvalue(radius: float = 1.0) -> float:
    """First Dirichlet eigenvalue of the 3-D ball: pi^2 / radius^2 (j_{1/2,1} = pi)."""
    return math.pi ** 2 / radius ** 2


def rectangle_eigenvalue(*sides: float) -> float:
    """Separation of variables: sum of (pi / side)^2."""
    return sum((math.pi / a) ** 2 for a in sides)


def square_cheeger(side: float = 1.0) -> float:
    """Cheeger constant of a square: (4 - pi) / ((2 - sqrt(pi)) side) = (2 + sqrt(pi)) / side."""
    return (2.0 + math.sqrt(math.pi)) / side


def disc_cheeger(radius: float = 1.0) -> float:
    """A disc is its own Cheeger set: perimeter / area = 2 / radius."""
    return 2.0 / radius


def inhomogeneous_disc_capacity(r: float) -> float:
    """Inhomogeneous 2-capacity of the closed disc of radius r in the plane.

    The minimizer outside the disc is K0(|x|)/K0(r); its energy plus mass is
    the boundary flux 2 pi r K1(r)/K0(r), plus the area pi r^2 where u = 1.
    """
    return 2 * math.pi * r * special.k1(r) / special.k0(r) + math.pi * r * r


def cone_vertex_fraction(opening: float) -> float:
    """Fraction of a small ball at the apex covered by {opening |x| <= y} in the plane."""
    half_angle = math.atan(1.0 / opening)
    return 2 * half_angle / (2 * math.pi)


def interval_tv_capacity(components: int) -> float:
    """1-capacity of a finite union of disjoint intervals on the line: two jumps each."""
    return 2.0 * components
