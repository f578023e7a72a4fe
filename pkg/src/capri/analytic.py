"""Closed-form capacities and the explicit constants of the comparison results.

Everything here is a pure function of its arguments.  Constants that depend
on numerically computed quantities (Poincare constants, capacity ratios)
take them as inputs; :class:`ComparisonConstants` keeps those inputs next to
the value so that downstream records stay auditable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

from scipy import optimize, special

from .shapes import StandardBody, unit_ball_volume


class AnalyticError(ValueError):
    """Input outside the domain of a formula."""


class NotEvaluable(AnalyticError):
    """The quantity needs constants that must be supplied externally."""


def sobolev_constant(N: int, p: float) -> float:
    """Sharp Sobolev constant ``S`` with ``||u||_{p*}^p <= S ||grad u||_p^p``.

    Uses the classical closed form of the optimal constant ``K`` in
    ``||u||_{p*} <= K ||grad u||_p`` (extremals are Talenti bubbles) and
    returns ``K**p``.  For ``p = 1`` this is the isoperimetric constant
    ``1 / (N omega_N^{1/N})``.
    """
    if not (N >= 2 and 1 <= p < N):
        raise AnalyticError("the Sobolev constant needs N >= 2 and 1 <= p < N")
    if p == 1:
        K = 1.0 / (N * unit_ball_volume(N) ** (1.0 / N))
    else:
        ratio = (math.gamma(1 + N / 2) * math.gamma(N)
                 / (math.gamma(N / p) * math.gamma(1 + N - N / p)))
        K = (math.pi ** -0.5 * N ** (-1.0 / p) * ((p - 1) / (N - p)) ** (1 - 1.0 / p)
             * ratio ** (1.0 / N))
    return K ** p


@dataclass(frozen=True)
class ConstantsContext:
    """Dimension, exponent and the Sobolev constant used by the formulas.

    ``sobolev`` overrides the built-in closed form; ``sobolev_source`` records
    which one is in use ("user" or "builtin").
    """

    N: int
    p: float
    sobolev: float | None = None

    def __post_init__(self) -> None:
        if self.N not in (1, 2, 3):
            raise AnalyticError("dimension must be 1, 2 or 3")
        if not 1 <= self.p <= self.N:
            raise AnalyticError("exponent p must lie in [1, N]")
        if self.sobolev is not None and not self.sobolev > 0:
            raise AnalyticError("a supplied Sobolev constant must be positive")

    def omega(self, k: int | None = None) -> float:
        return unit_ball_volume(self.N if k is None else k)

    @property
    def sobolev_source(self) -> str:
        return "user" if self.sobolev is not None else "builtin"

    @property
    def S(self) -> float:
        if self.sobolev is not None:
            return float(self.sobolev)
        return sobolev_constant(self.N, self.p)


@dataclass(frozen=True)
class ComparisonConstants:
    """A named constant together with the inputs it was built from."""

    which: str
    value: float
    inputs: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"which": self.which, "value": self.value, "inputs": dict(self.inputs)}


def _kappa(N: int, p: float) -> float:
    return (N - p) / (p - 1)


def cap_ball_relative(ctx: ConstantsContext, r: float, R: float) -> float:
    """p-capacity of the closed ball of radius ``r`` relative to the concentric ball of radius ``R``."""
    if not 0 < r < R:
        raise AnalyticError("need 0 < r < R")
    N, p = ctx.N, ctx.p
    area = N * ctx.omega()
    if p == 1:
        return area * r ** (N - 1)
    if p == N:
        return area * math.log(R / r) ** (1 - N)
    k = _kappa(N, p)
    return area * k ** (p - 1) * r ** (N - p) / (1 - (r / R) ** k) ** (p - 1)


def cap_ball_absolute(ctx: ConstantsContext, r: float) -> float:
    """Absolute p-capacity of the closed ball of radius ``r`` (zero when p = N >= 2)."""
    if not r > 0:
        raise AnalyticError("radius must be positive")
    N, p = ctx.N, ctx.p
    if p == 1:
        return N * ctx.omega() * r ** (N - 1)
    if p >= N:
        return 0.0
    return N * ctx.omega() * _kappa(N, p) ** (p - 1) * r ** (N - p)


def capacity_scaling(value: float, t: float, ctx: ConstantsContext) -> float:
    """Capacity of the dilated pair ``(t Sigma, t E)`` from that of ``(Sigma, E)``."""
    if not t > 0:
        raise AnalyticError("scale must be positive")
    return t ** (ctx.N - ctx.p) * value


def ball_dirichlet_eigenvalue(N: int) -> float:
    """First Dirichlet Laplacian eigenvalue of the unit ball: ``j_{N/2-1,1}^2``."""
    nu = N / 2.0 - 1.0
    if nu == int(nu) and nu >= 0:
        return float(special.jn_zeros(int(nu), 1)[0] ** 2)
    # half-integer order: the first zero lies in (0, pi + nu + 1)
    guess = math.pi / 2 + nu * math.pi / 2 + math.pi / 4
    zero = optimize.brentq(lambda x: special.jv(nu, x), 1e-6, guess + 1.5)
    return float(zero ** 2)


def body_constants(ctx: ConstantsContext, cap_ratio: float, lam_body: float,
                   lam_ball: float, body: StandardBody) -> tuple[ComparisonConstants, ComparisonConstants]:
    """Constants ``c <= 1 <= d`` comparing ball-based and body-based capacitary inradii.

    ``cap_ratio`` is cap(B1-bar; B2) / cap(K-bar; K2); ``lam_body`` and
    ``lam_ball`` are the Poincare constants of ``K`` and ``B1``.
    """
    if min(cap_ratio, lam_body, lam_ball) <= 0:
        raise AnalyticError("capacity ratio and Poincare constants must be positive")
    if not body.inner_gap > 0:
        raise AnalyticError("degenerate body: zero gap between the body and its dilate")
    p, N = ctx.p, ctx.N
    c = cap_ratio * (2.0 / lam_body ** (1.0 / p) + 1.0) ** (-p)
    d = max(1.0, body.R ** (N - p) * cap_ratio
            * ((2.0 / body.inner_gap) * body.R / lam_ball ** (1.0 / p) + 1.0) ** p)
    inputs = {"N": N, "p": p, "cap_ratio": cap_ratio, "lambda_K": lam_body,
              "lambda_B1": lam_ball, "R_K": body.R, "inner_gap": body.inner_gap}
    return ComparisonConstants("c", c, inputs), ComparisonConstants("d", d, inputs)


def _ms_check(ctx: ConstantsContext) -> None:
    if not (ctx.p < ctx.N or ctx.p == ctx.N == 1):
        raise AnalyticError("restriction p<N is unavoidable: absolute capacities vanish for p = N >= 2")


def ms_constants(ctx: ConstantsContext) -> tuple[ComparisonConstants, ComparisonConstants]:
    """Constants ``alpha <= 1 <= beta`` relating the absolute-capacity inradius to the relative one."""
    _ms_check(ctx)
    N, p = ctx.N, ctx.p
    if N == 1:
        # only p = N = 1: the relative and absolute capacities coincide
        alpha = 1.0
        S = None
    else:
        S = ctx.S
        alpha = 2.0 ** (1 - p) / (1.0 + (2.0 * ctx.omega()) ** (p / N) * S)
    beta = 1.0 if p == 1 else (1.0 - 0.5 ** _kappa(N, p)) ** (1 - p)
    inputs = {"N": N, "p": p, "S": S, "S_source": ctx.sobolev_source if S else None}
    return ComparisonConstants("alpha", alpha, inputs), ComparisonConstants("beta", beta, inputs)


def absolute_sandwich_factor(ctx: ConstantsContext, vol_E: float, dist: float) -> float:
    """Factor ``F`` in ``cap(Sigma; E) <= F cap(Sigma)``."""
    if not (vol_E > 0 and dist > 0):
        raise AnalyticError("volume and distance must be positive")
    if ctx.N == 1:
        if ctx.p != 1:
            raise AnalyticError("in dimension one only p = 1 is supported")
        return 1.0 + vol_E / (2.0 * dist)
    _ms_check(ctx)
    p = ctx.p
    return 2.0 ** (p - 1) * (1.0 + vol_E ** (p / ctx.N) * ctx.S / dist ** p)


def inhomogeneous_sandwich_factors(ctx: ConstantsContext, lam_E: float,
                                   dist: float) -> tuple[float, float]:
    """``(lower, upper)`` with ``lower C(S) <= cap(S; E) <= upper C(S)``."""
    if not (lam_E > 0 and dist > 0):
        raise AnalyticError("Poincare constant and distance must be positive")
    p = ctx.p
    return lam_E / (1.0 + lam_E), 2.0 ** (p - 1) * max(1.0, dist ** (-p))


def inhomogeneous_rescaling_bounds(ctx: ConstantsContext, t: float) -> tuple[float, float]:
    """Bounds on ``C(t Sigma) / C(Sigma)`` for the inhomogeneous capacity."""
    if not t > 0:
        raise AnalyticError("scale must be positive")
    a, b = t ** (ctx.N - ctx.p), t ** ctx.N
    return min(a, b), max(a, b)


def body_capacity_factors(ctx: ConstantsContext, body: StandardBody, lam_body: float,
                          lam_ball: float, dist: float, rho: float) -> tuple[float, float]:
    """Factors comparing capacities relative to ``B_rho`` and to ``K_rho``.

    Returns ``(ball_to_body, body_to_ball)`` such that
    ``cap(S; B_rho) <= ball_to_body * cap(S; K_rho)`` and
    ``cap(S; K_rho) <= body_to_ball * cap(S; B_{R_K rho})``, where ``dist`` is
    the distance from ``S`` to the boundary of the relevant outer set.
    """
    if not (dist > 0 and rho > 0):
        raise AnalyticError("distance and radius must be positive")
    p = ctx.p
    ball_to_body = (rho / dist * lam_body ** (-1.0 / p) + 1.0) ** p
    body_to_ball = (rho / dist * body.R / lam_ball ** (1.0 / p) + 1.0) ** p
    return ball_to_body, body_to_ball


@dataclass(frozen=True)
class ComparisonParameters:
    A: ComparisonConstants
    ell: ComparisonConstants
    gamma0: ComparisonConstants

    def to_dict(self) -> dict[str, Any]:
        return {"A": self.A.to_dict(), "ell": self.ell.to_dict(), "gamma0": self.gamma0.to_dict()}


def theorem52_constants(ctx: ConstantsContext, t: float, theta_star: float, r0: float,
                        r_omega: float, cap12: float, lam_B2: float) -> ComparisonParameters:
    """Constants of the two-sided comparison between capacitary and classical inradius.

    ``cap12`` is cap(B1-bar; B2) and ``lam_B2`` the Poincare constant of B2,
    both for the exponent of ``ctx``.
    """
    if math.isinf(r_omega):
        raise AnalyticError("infinite inradius: the constants are undefined")
    if not (0 < theta_star <= 1 and r0 > 0 and r_omega > 0 and t >= 0):
        raise AnalyticError("need 0 < theta* <= 1, r0 > 0, r_Omega > 0, t >= 0")
    N = ctx.N
    a = r0 / r_omega
    m1 = min(1.0, a)
    A = 2.0 * math.sqrt(N) * (2.0 + m1)
    ell = r_omega * (2.0 + m1)
    inner = (1.0 / (4.0 * 2.0 ** (t / N) * math.sqrt(N))) * min(a ** (-t / N), a) / (2.0 + m1)
    gamma0 = (lam_B2 * ctx.omega() / cap12) * inner ** N * theta_star
    inputs = {"N": N, "p": ctx.p, "t": t, "theta_star": theta_star, "r0": r0,
              "r_Omega": r_omega, "alpha": a, "cap12": cap12, "lambda_B2": lam_B2}
    return ComparisonParameters(ComparisonConstants("A", A, inputs),
                              ComparisonConstants("ell", ell, inputs),
                              ComparisonConstants("gamma0", gamma0, inputs))


def cube_count(r: float, ell: float, N: int) -> int:
    """Number ``m`` of cubes of side ``ell`` fitting along the inscribed cube of ``B_r``."""
    return int(math.floor(r / math.sqrt(N) / ell))


def inradius_comparison_factor(ctx: ConstantsContext, gamma: float, gamma0: float,
                     C_Npg: float | None = None, sigma_Np: float | None = None) -> ComparisonConstants:
    """Factor ``C`` in ``R_{p,gamma} <= C r_Omega``.

    Below ``gamma0`` it is ``6 sqrt(N)``; otherwise it needs the externally
    supplied constants ``C_{N,p,gamma}`` and ``sigma_{N,p}``.
    """
    N, p = ctx.N, ctx.p
    if gamma < gamma0:
        return ComparisonConstants("C", 6.0 * math.sqrt(N), {"gamma": gamma, "gamma0": gamma0})
    if C_Npg is None or sigma_Np is None:
        raise NotEvaluable("not evaluable: external constants required (C_{N,p,gamma}, sigma_{N,p})")
    value = 6.0 * math.sqrt(N) * (2.0 * C_Npg / (gamma0 * sigma_Np)) ** (1.0 / p)
    return ComparisonConstants("C", value, {"gamma": gamma, "gamma0": gamma0,
                                            "C_Npg": C_Npg, "sigma_Np": sigma_Np})


def theta_equivalence_factor(N: int, t: float) -> float:
    """Factor ``2^{N+t}`` bounding the boundary index by the complement index."""
    if t < 0:
        raise AnalyticError("decay order t must be non-negative")
    return 2.0 ** (N + t)


@dataclass(frozen=True)
class FunnelIndexBound:
    r0: float
    t: float
    c: float
    lower_bound: float

    def to_dict(self) -> dict[str, float]:
        return {"r0": self.r0, "t": self.t, "c_N_beta": self.c, "lower_bound": self.lower_bound}


def funnel_index_bound(N: int, beta: float, delta: float, h0: float) -> FunnelIndexBound:
    """Density-index lower bound for sets with an exterior funnel condition."""
    if not 0 < beta <= 1:
        raise AnalyticError("funnel exponent must lie in (0, 1]")
    if not (delta > 0 and h0 > 0):
        raise AnalyticError("opening and height must be positive")
    r0 = math.sqrt(h0 ** 2 + (h0 / delta) ** (2.0 / beta))
    t = (N - 1) * (1.0 / beta - 1.0)
    c = (unit_ball_volume(N - 1) / unit_ball_volume(N) * beta / (N - 1 + beta)
         * (1.0 / math.sqrt(2.0)) ** ((N - 1 + beta) / beta))
    q = h0 ** (1 - beta) / delta
    lower = c * min(q ** ((N - 1) / beta ** 2), (1.0 / q) ** (1.0 / beta))
    return FunnelIndexBound(r0, t, c, lower)


def cheeger_type_constant(p: float, q: float) -> float:
    """Factor ``(p/q)^q`` in ``(p/q)^q lambda_p^{q/p} <= lambda_q``."""
    if not 1 <= p <= q:
        raise AnalyticError("need 1 <= p <= q")
    return (p / q) ** q


def constants_table(ctx: ConstantsContext) -> dict[str, Any]:
    """Flat table of the closed-form quantities available for ``(N, p)``."""
    N, p = ctx.N, ctx.p
    out: dict[str, Any] = {"N": N, "p": p}
    for k in range(1, N + 1):
        out[f"omega_{k}"] = unit_ball_volume(k)
    out["cap_p(B1;B2)"] = cap_ball_relative(ctx, 1.0, 2.0)
    if p < N or p == 1:
        out["cap_p(B1)"] = cap_ball_absolute(ctx, 1.0)
    if N >= 2 and p < N:
        out["S_{N,p}"] = ctx.S
        out["S_source"] = ctx.sobolev_source
    if p < N or p == N == 1:
        alpha, beta = ms_constants(ctx)
        out["alpha"] = alpha.value
        out["beta"] = beta.value
    out["2^{N+t}(t=0)"] = theta_equivalence_factor(N, 0.0)
    out["6*sqrt(N)"] = 6.0 * math.sqrt(N)
    if p == 2:
        out["lambda_2(B1)"] = ball_dirichlet_eigenvalue(N)
    if p > 1:
        out["(1/p)^p"] = cheeger_type_constant(1.0, p)
    return out
