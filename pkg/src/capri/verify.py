"""Inequality harness: every registered statement becomes a check over scenarios.

A check computes the two sides of one inequality on one scenario and stores
them in a :class:`VerificationRecord`.  Multiplicative checks pass when
``lhs <= slack * rhs``; trend checks (used where a statement is a limit)
pass when a finite sweep moves strictly in the stated direction.  Records
hold no timings, so identical inputs give identical reports.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy import ndimage

from . import inradius as ir
from . import solver
from .analytic import (AnalyticError, ConstantsContext, NotEvaluable, absolute_sandwich_factor,
                       ball_dirichlet_eigenvalue, body_capacity_factors, body_constants,
                       cap_ball_relative, cheeger_type_constant, funnel_index_bound,
                       inhomogeneous_rescaling_bounds, inhomogeneous_sandwich_factors,
                       inradius_comparison_factor, ms_constants, theorem52_constants,
                       theta_equivalence_factor)
from .shapes import (Box, Funnel, GridDomain, PerforatedLattice, Shape, ShapeError,
                     classical_inradius, cube_body, funnel_volume, lattice_ball,
                     monte_carlo_volume, rasterize, shape_from_dict)

DEFAULT_SLACK = 1.10
# Buser decomposition: lambda r^2 <= lambda(B1) is checked with this factor
BUSER_FACTOR = 1.05


class VerificationError(ValueError):
    """Invalid check id, scenario or selection."""


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """A domain with the parameters the checks need.

    ``spacing`` is the grid used for capacities and eigenvalues;
    ``coarse_spacing`` the grid used by inradius searches.  ``p_low`` is the
    exponent used by checks that need ``p < N``.  ``funnel`` holds the
    opening, height and exponent of an exterior funnel with apex ``vertex``.
    ``sigma`` is an optional compact set for capacity jobs.
    """

    name: str
    shape: dict[str, Any]
    bbox: tuple[tuple[float, ...], tuple[float, ...]]
    spacing: float = 1.0 / 64
    coarse_spacing: float = 1.0 / 16
    p: float = 2.0
    p_low: float = 1.5
    q: float | None = None
    gamma: float | None = None
    t: float = 0.0
    r0: float | None = None
    vertex: tuple[float, ...] | None = None
    funnel: dict[str, float] | None = None
    hole_sweep: tuple[float, ...] = ()
    periods: int = 3
    sigma: dict[str, Any] | None = None

    def __post_init__(self) -> None:
        lo, hi = self.bbox
        object.__setattr__(self, "bbox", (tuple(float(v) for v in lo), tuple(float(v) for v in hi)))
        if self.vertex is not None:
            object.__setattr__(self, "vertex", tuple(float(v) for v in self.vertex))
        object.__setattr__(self, "hole_sweep", tuple(float(v) for v in self.hole_sweep))
        if not (self.spacing > 0 and self.coarse_spacing > 0):
            raise VerificationError(f"scenario {self.name}: spacings must be positive")

    @property
    def dim(self) -> int:
        return len(self.bbox[0])

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "shape": self.shape, "bbox": [list(self.bbox[0]), list(self.bbox[1])],
                "spacing": self.spacing, "coarse_spacing": self.coarse_spacing, "p": self.p,
                "p_low": self.p_low, "q": self.q, "gamma": self.gamma, "t": self.t, "r0": self.r0,
                "vertex": list(self.vertex) if self.vertex is not None else None,
                "funnel": self.funnel, "hole_sweep": list(self.hole_sweep), "periods": self.periods,
                **({"sigma": self.sigma} if self.sigma is not None else {})}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> Scenario:
        lo, hi = doc["bbox"]
        return cls(name=doc["name"], shape=doc["shape"], bbox=(tuple(lo), tuple(hi)),
                   spacing=float(doc.get("spacing", 1.0 / 64)),
                   coarse_spacing=float(doc.get("coarse_spacing", 1.0 / 16)),
                   p=float(doc.get("p", 2.0)), p_low=float(doc.get("p_low", 1.5)),
                   q=doc.get("q"), gamma=doc.get("gamma"), t=float(doc.get("t", 0.0)),
                   r0=doc.get("r0"), vertex=tuple(doc["vertex"]) if doc.get("vertex") else None,
                   funnel=doc.get("funnel"), hole_sweep=tuple(doc.get("hole_sweep", ())),
                   periods=int(doc.get("periods", 3)), sigma=doc.get("sigma"))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_scenarios(doc: dict[str, Any]) -> list[Scenario]:
    """Scenarios from a ``{"schema": 1, "scenarios": [...]}`` document."""
    if doc.get("schema") != 1:
        raise VerificationError("scenario document must declare schema 1")
    return [Scenario.from_dict(d) for d in doc.get("scenarios", [])]


def default_scenarios() -> list[Scenario]:
    """The shipped scenario set: square, disc, cone and cusp complements, perforated lattice."""
    text = resources.files("capri").joinpath("scenarios/default.json").read_text()
    return load_scenarios(json.loads(text))


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckSpec:
    """One check on one scenario.

    ``constants`` may hold externally supplied values: ``C_Npg``,
    ``sigma_Np`` (both needed above ``gamma0``) and ``sobolev``.
    """

    check_id: str
    scenario: Scenario
    slack: float = DEFAULT_SLACK
    constants: dict[str, float] = field(default_factory=dict)

    def fingerprint(self) -> str:
        blob = json.dumps({"check": self.check_id, "scenario": self.scenario.to_dict(),
                           "slack": self.slack, "constants": self.constants}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class VerificationRecord:
    """Outcome of one check.

    ``status`` is ``pass``, ``fail``, ``indeterminate`` (an upstream
    computation failed) or ``not evaluable`` (external constants missing);
    ``passed`` is ``None`` for the last two.  ``margin`` is ``rhs / lhs`` for
    ratio checks and ``rhs - lhs`` for difference checks.
    """

    check_id: str
    scenario: str
    lhs: float | None
    rhs: float | None
    margin: float | None
    passed: bool | None
    status: str
    mode: str
    slack: float
    fingerprint: str
    parts: tuple[dict[str, Any], ...] = ()
    details: dict[str, Any] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"check_id": self.check_id, "scenario": self.scenario, "lhs": _num(self.lhs),
                "rhs": _num(self.rhs), "margin": _num(self.margin), "pass": self.passed,
                "status": self.status, "mode": self.mode, "slack": self.slack,
                "fingerprint": self.fingerprint, "parts": [_clean(p) for p in self.parts],
                "details": _clean(self.details), "notes": list(self.notes)}


def _num(v: float | None) -> float | str | None:
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _clean(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    return obj


@dataclass
class _Part:
    label: str
    lhs: float
    rhs: float
    mode: str = "ratio"   # ratio | difference

    def ok(self, slack: float) -> bool:
        if self.mode == "difference":
            return self.lhs <= self.rhs + 1e-12
        return self.lhs <= slack * self.rhs

    def margin(self) -> float:
        if self.mode == "difference":
            return self.rhs - self.lhs
        if self.lhs == 0:
            return math.inf if self.rhs >= 0 else -math.inf
        return self.rhs / self.lhs

    def to_dict(self) -> dict[str, Any]:
        return {"label": self.label, "lhs": self.lhs, "rhs": self.rhs, "mode": self.mode}


@dataclass
class _Outcome:
    parts: list[_Part]
    details: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)


class _NotEvaluable(Exception):
    pass


class _NotApplicable(Exception):
    pass


# ---------------------------------------------------------------------------
# Per-scenario cache of shared quantities
# ---------------------------------------------------------------------------


class _Context:
    """Lazily computed quantities shared by the checks of one scenario."""

    def __init__(self, sc: Scenario, opts: solver.SolverOptions = solver.DEFAULT) -> None:
        self.sc = sc
        self.opts = opts
        self.shape: Shape = shape_from_dict(sc.shape)
        self._memo: dict[Any, Any] = {}

    def memo(self, key: Any, fn: Callable[[], Any]) -> Any:
        if key not in self._memo:
            self._memo[key] = fn()
        return self._memo[key]

    # -- domains -----------------------------------------------------------

    def omega(self, coarse: bool = False) -> GridDomain:
        h = self.sc.coarse_spacing if coarse else self.sc.spacing
        return self.memo(("omega", h), lambda: rasterize(self.shape, h, self.sc.bbox))

    def r_omega(self, coarse: bool = False) -> float:
        return self.memo(("r", coarse), lambda: classical_inradius(self.omega(coarse)).value)

    @property
    def r0(self) -> float:
        return float(self.sc.r0) if self.sc.r0 is not None else self.r_omega()

    def contains(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.sc.bbox[0]), np.asarray(self.sc.bbox[1])
        inside = np.all((pts > lo) & (pts < hi), axis=-1)
        return inside & self.shape.contains(pts)

    # -- spectral quantities ---------------------------------------------

    def lam(self, p: float, q: float | None = None) -> float:
        q = p if q is None else q
        return self.memo(("lam", p, q),
                         lambda: solver.poincare_constant(self.omega(), p, q, self.opts).value)

    def cheeger(self) -> solver.CapacityResult:
        return self.memo("cheeger", lambda: solver.cheeger_constant(self.omega(), self.opts))

    def indices(self) -> ir.DensityIndexReport:
        return self.memo("indices", lambda: ir.density_indices(self.omega(), self.r0, self.sc.t))

    # -- a small set straddling the boundary ------------------------------

    def probe(self) -> dict[str, Any]:
        """Closed ball ``B_rho(x0)`` minus Omega, with ``x0`` the boundary cell nearest
        the inscribed-ball center and ``rho = r_Omega / 2``, in a local frame."""
        return self.memo("probe", self._probe)

    def _probe(self) -> dict[str, Any]:
        om = self.omega()
        h, dim = om.spacing, om.dim
        c = classical_inradius(om)
        if c.center is None:
            raise _NotApplicable("empty domain")
        comp = np.pad(~om.mask, 1, constant_values=True)
        _, inds = ndimage.distance_transform_edt(~comp, return_indices=True)
        ci = tuple(i + 1 for i in om.index_of(c.center))
        near = tuple(int(inds[a][ci]) - 1 for a in range(dim))
        x0 = tuple(float(v) for v in om.center_of(near))
        rho = c.value / 2
        return {"x0": x0, "x0_index": near, "rho": rho, "h": h}

    def local_frame(self, x0_index: Sequence[int], half: int) -> tuple[np.ndarray, np.ndarray]:
        """Omega's mask in a window of ``half`` cells about ``x0_index`` and squared offsets (cells)."""
        win = ir._window(self.omega().mask, x0_index, half)
        return win, ir._offsets2(half, self.omega().dim)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckInfo:
    check_id: str
    statement: str
    anchor: str
    applies: Callable[[Scenario], bool]
    run: Callable[[_Context, CheckSpec], _Outcome]


REGISTRY: dict[str, CheckInfo] = {}


def _register(check_id: str, statement: str, anchor: str,
              applies: Callable[[Scenario], bool] = lambda sc: True) -> Callable:
    def deco(fn: Callable[[_Context, CheckSpec], _Outcome]) -> Callable:
        REGISTRY[check_id] = CheckInfo(check_id, statement, anchor, applies, fn)
        return fn
    return deco


def _named(*names: str) -> Callable[[Scenario], bool]:
    return lambda sc: sc.name in names


def _is_funnel(sc: Scenario) -> bool:
    return sc.funnel is not None and sc.vertex is not None


def _is_perforated(sc: Scenario) -> bool:
    return sc.shape.get("type") == "perforated_lattice"


def _bounded_interior(sc: Scenario) -> bool:
    return not _is_perforated(sc)


def _cap(sigma: np.ndarray, E: np.ndarray, p: float, h: float, opts: solver.SolverOptions) -> float:
    res = solver.capacity_arrays(sigma, E, p, h, opts, check=False)
    if not res.converged:
        raise solver.SolverError("capacity did not converge", res)
    return float(res.value)


def _lam_mask(mask: np.ndarray, h: float, p: float, opts: solver.SolverOptions) -> float:
    return float(solver.poincare_constant(GridDomain(mask, h, (0.0,) * mask.ndim), p, p, opts).value)


@_register("MEAS-LB", "|Sigma| lambda_p(E) <= cap_p(Sigma; E)", r"Taking the infimum over $\varphi$")
def _meas_lb(ctx: _Context, spec: CheckSpec) -> _Outcome:
    om = ctx.omega()
    h, p = om.spacing, ctx.sc.p
    dist = ndimage.distance_transform_edt(np.pad(om.mask, 1))[tuple(slice(1, -1) for _ in range(om.dim))] * h
    sigma = dist >= 0.5 * ctx.r_omega()
    vol = float(sigma.sum()) * h ** om.dim
    lam = ctx.lam(p)
    cap = _cap(np.pad(sigma, 1), np.pad(om.mask, 1), p, h, ctx.opts)
    return _Outcome([_Part("|Sigma| lambda_p(E) <= cap_p(Sigma;E)", vol * lam, cap)],
                    {"volume_sigma": vol, "lambda_p_E": lam, "cap": cap})


@_register("CAP-MONO", "cap(S0;E) <= cap(S1;E) for S0 in S1; cap(S;E1) <= cap(S;E0) for E0 in E1",
           "the following monotonicity relations")
def _cap_mono(ctx: _Context, spec: CheckSpec) -> _Outcome:
    om = ctx.omega()
    h, p, dim = om.spacing, ctx.sc.p, om.dim
    pad = 4
    E0 = np.pad(om.mask, pad)
    dist = ndimage.distance_transform_edt(E0) * h
    r = ctx.r_omega()
    S0 = dist >= 0.6 * r
    S1 = dist >= 0.3 * r
    E1 = ndimage.binary_dilation(E0, structure=ndimage.generate_binary_structure(dim, 1), iterations=3)
    c00 = _cap(S0, E0, p, h, ctx.opts)
    c10 = _cap(S1, E0, p, h, ctx.opts)
    c11 = _cap(S1, E1, p, h, ctx.opts)
    return _Outcome([_Part("cap(S0;E0) <= cap(S1;E0)", c00, c10),
                     _Part("cap(S1;E1) <= cap(S1;E0)", c11, c10)],
                    {"cap_S0_E0": c00, "cap_S1_E0": c10, "cap_S1_E1": c11})


@_register("BALL-MONO", "r -> cap_p(closed B_r; B_2r) is non-decreasing", "is non-decreasing",
           _named("disc"))
def _ball_mono(ctx: _Context, spec: CheckSpec) -> _Outcome:
    N = ctx.sc.dim
    parts = []
    radii = np.geomspace(0.05, 20.0, 40)
    for p in sorted({1.0, 1.5, 2.0, float(N)}):
        if p > N:
            continue
        c = ConstantsContext(N, p)
        vals = [cap_ball_relative(c, r, 2 * r) for r in radii]
        worst = max(range(len(vals) - 1), key=lambda i: vals[i] - vals[i + 1])
        parts.append(_Part(f"closed form p={p:g}: f(r_i) <= f(r_i+1)", vals[worst], vals[worst + 1]))
    # lattice values at two radii
    h, p = ctx.sc.spacing, ctx.sc.p
    lattice = []
    for k in (8, 16):
        ball = lattice_ball(k, closed=True, dim=N)
        half = 2 * k + 2
        d2 = ir._offsets2(half, N)
        sigma = np.zeros_like(d2, bool)
        sl = tuple(slice(half - k, half + k + 1) for _ in range(N))
        sigma[sl] = ball
        lattice.append(_cap(sigma, d2 < (2 * k) ** 2, p, h, ctx.opts))
    parts.append(_Part(f"lattice p={p:g}: f(8h) <= f(16h)", lattice[0], lattice[1]))
    return _Outcome(parts, {"lattice_values": lattice})


def _cube_lambda(ctx: _Context, p: float) -> float:
    def compute() -> float:
        N, h = ctx.sc.dim, ctx.sc.spacing
        cube = rasterize(Box((-1.0,) * N, (1.0,) * N), h, ((-1.0,) * N, (1.0,) * N))
        return float(solver.poincare_constant(cube, p, p, ctx.opts).value)
    return ctx.memo(("cube_lambda", p), compute)


def _ball_lambda(ctx: _Context, p: float) -> float:
    if p == 2:
        return ball_dirichlet_eigenvalue(ctx.sc.dim)

    def compute() -> float:
        N, h = ctx.sc.dim, ctx.sc.spacing
        from .shapes import Ball
        ball = rasterize(Ball((0.0,) * N, 1.0), h, ((-1.0,) * N, (1.0,) * N))
        return float(solver.poincare_constant(ball, p, p, ctx.opts).value)
    return ctx.memo(("ball_lambda", p), compute)


def _body_setup(ctx: _Context) -> dict[str, Any]:
    pr = ctx.probe()
    h, N = pr["h"], ctx.sc.dim
    rho = 2 * pr["rho"]                      # outer radius; Sigma lies in B_{rho/2}
    half = int(math.ceil(math.sqrt(N) * rho / h)) + 3
    win, d2 = ctx.local_frame(pr["x0_index"], half)
    ax = np.arange(-half, half + 1) * h
    grids = np.meshgrid(*([ax] * N), indexing="ij")
    sup = np.max(np.abs(np.stack(grids)), axis=0)
    sigma = (d2 * h * h <= (rho / 2) ** 2) & ~win
    return {"rho": rho, "sigma": sigma, "d2": d2 * h * h, "sup": sup, "h": h}


@_register("BODY-UB", "cap(S; B_rho) <= (rho/d lambda_p(K)^(-1/p) + 1)^p cap(S; K_rho)",
           "we define the cut-off function", _bounded_interior)
def _body_ub(ctx: _Context, spec: CheckSpec) -> _Outcome:
    s = _body_setup(ctx)
    p, h, rho = ctx.sc.p, s["h"], s["rho"]
    body = cube_body(ctx.sc.dim)
    pts_r = np.sqrt(s["d2"][s["sigma"]])
    dist = rho - float(pts_r.max()) - h / 2
    c = ConstantsContext(ctx.sc.dim, p)
    lam_K = _cube_lambda(ctx, p)
    factor, _ = body_capacity_factors(c, body, lam_K, _ball_lambda(ctx, p), dist, rho)
    cap_ball = _cap(s["sigma"], s["d2"] < rho ** 2, p, h, ctx.opts)
    cap_cube = _cap(s["sigma"], s["sup"] < rho, p, h, ctx.opts)
    return _Outcome([_Part("cap(S;B_rho) <= factor cap(S;Q_rho)", cap_ball, factor * cap_cube)],
                    {"rho": rho, "dist": dist, "lambda_K": lam_K, "factor": factor,
                     "cap_ball": cap_ball, "cap_cube": cap_cube})


@_register("BODY-LB", "cap(S; K_rho) <= (rho/d R_K lambda_p(B1)^(-1/p) + 1)^p cap(S; B_(R_K rho))",
           "we introduce the cut-off function", _bounded_interior)
def _body_lb(ctx: _Context, spec: CheckSpec) -> _Outcome:
    s = _body_setup(ctx)
    p, h, rho = ctx.sc.p, s["h"], s["rho"]
    body = cube_body(ctx.sc.dim)
    dist = rho - float(s["sup"][s["sigma"]].max()) - h / 2
    c = ConstantsContext(ctx.sc.dim, p)
    _, factor = body_capacity_factors(c, body, _cube_lambda(ctx, p), _ball_lambda(ctx, p), dist, rho)
    RK = body.R
    cap_cube = _cap(s["sigma"], s["sup"] < rho, p, h, ctx.opts)
    cap_big = _cap(s["sigma"], s["d2"] < (RK * rho) ** 2, p, h, ctx.opts)
    return _Outcome([_Part("cap(S;Q_rho) <= factor cap(S;B_{R_K rho})", cap_cube, factor * cap_big)],
                    {"rho": rho, "dist": dist, "R_K": RK, "factor": factor,
                     "cap_cube": cap_cube, "cap_ball": cap_big})


@_register("BODY-INRAD", "R_{p,c gamma}(Omega;K) <= R_{p,gamma}(Omega) <= R_K R_{p,d gamma}(Omega;K)",
           r"there exist two constants $0 < c \leq 1\le d$", _named("square"))
def _body_inrad(ctx: _Context, spec: CheckSpec) -> _Outcome:
    om = rasterize(ctx.shape, 2 * ctx.sc.coarse_spacing, ctx.sc.bbox)
    p, N, h = ctx.sc.p, ctx.sc.dim, om.spacing
    body = cube_body(N)
    c = ConstantsContext(N, p)
    # cap(B1;B2) / cap(K;K2) with both capacities on the coarse lattice, radius 8 cells
    k = 8
    half = 2 * k + 3
    d2 = ir._offsets2(half, N)
    ax = np.arange(-half, half + 1)
    sup = np.max(np.abs(np.stack(np.meshgrid(*([ax] * N), indexing="ij"))), axis=0)
    cap_ball = _cap(d2 <= k * k, d2 < (2 * k) ** 2, p, h, ctx.opts)
    cap_cube = _cap(sup <= k, sup < 2 * k, p, h, ctx.opts)
    ratio = cap_ball / cap_cube
    cc, dd = body_constants(c, ratio, _cube_lambda(ctx, p), _ball_lambda(ctx, p), body)
    gamma = 0.5 if dd.value <= 1 else 0.5 / dd.value
    big = ctx.sc.gamma if ctx.sc.gamma is not None else 0.5
    search = ir.InradiusSearch(om, p, sorted({big, gamma}))
    res = search.run()
    body_search = ir.InradiusSearch(om, p, sorted({cc.value * big, min(dd.value * gamma, 0.999)}),
                                    kind="body", body=body)
    bres = body_search.run()
    r_big = res[big]
    r_small = res[gamma]
    rb_c = bres[cc.value * big]
    rb_d = bres[min(dd.value * gamma, 0.999)]
    step = h
    parts = [_Part("R_{p,c gamma}(K) <= R_{p,gamma} + h", rb_c.value, r_big.value + step, "difference"),
             _Part("R_{p,gamma'} <= R_K R_{p,d gamma'}(K) + h", r_small.value,
                   body.R * rb_d.value + step, "difference")]
    return _Outcome(parts, {"c": cc.value, "d": dd.value, "cap_ratio": ratio, "gamma": big,
                            "gamma_small": gamma, "R_gamma": r_big.value, "R_gamma_small": r_small.value,
                            "R_body_c_gamma": rb_c.value, "R_body_d_gamma": rb_d.value,
                            "R_K": body.R, "spacing": h})


def _abs_setup(ctx: _Context) -> dict[str, Any]:
    pr = ctx.probe()
    h = pr["h"]
    rho = pr["rho"]
    half = int(math.ceil(2 * rho / h)) + 3
    win, d2 = ctx.local_frame(pr["x0_index"], half)
    d2 = d2 * h * h
    sigma = (d2 <= rho ** 2) & ~win
    return {"rho": rho, "sigma": sigma, "d2": d2, "h": h, "half": half}


@_register("ABS-SAND", "cap_p(S) <= cap_p(S;E) <= 2^(p-1)(1 + |E|^(p/N) S_{N,p} / dist^p) cap_p(S)",
           "[Absolute VS. relative]", _named("square", "disc", "cone_complement"))
def _abs_sand(ctx: _Context, spec: CheckSpec) -> _Outcome:
    s = _abs_setup(ctx)
    p, h, rho, N = ctx.sc.p_low, s["h"], s["rho"], ctx.sc.dim
    if not p < N:
        raise _NotApplicable("needs p < N")
    c = ConstantsContext(N, p, spec.constants.get("sobolev"))
    E = s["d2"] < (2 * rho) ** 2
    cap_rel = _cap(s["sigma"], E, p, h, ctx.opts)
    absolute = solver.absolute_capacity(GridDomain(s["sigma"], h, (0.0,) * N), p, opts=ctx.opts, ctx=c)
    vol_E = float(E.sum()) * h ** N
    dist = 2 * rho - float(np.sqrt(s["d2"][s["sigma"]].max())) - h / 2
    F = absolute_sandwich_factor(c, vol_E, dist)
    return _Outcome([_Part("cap(S) <= cap(S;E)", absolute.value, cap_rel),
                     _Part("cap(S;E) <= F cap(S)", cap_rel, F * absolute.value)],
                    {"p": p, "cap_abs": absolute.value, "cap_abs_bracket": list(absolute.bracket or ()),
                     "cap_rel": cap_rel, "vol_E": vol_E, "dist": dist, "factor": F,
                     "S_source": c.sobolev_source})


@_register("ABS-SAND-1D", "cap_1(S) <= cap_1(S;E) <= (1 + |E| / (2 dist)) cap_1(S) in one dimension",
           "simple and useless as it may seem", _named("disc"))
def _abs_sand_1d(ctx: _Context, spec: CheckSpec) -> _Outcome:
    h = ctx.sc.spacing
    n = int(round(4.0 / h))
    x = (np.arange(n) + 0.5) * h
    sigma = ((x > 1.0) & (x < 1.5)) | ((x > 2.0) & (x < 2.75))
    E = (x > 0.5) & (x < 3.5)
    s_pad, E_pad = np.pad(sigma, 2), np.pad(E, 2)
    cap_rel = _cap(s_pad, E_pad, 1.0, h, ctx.opts)
    big = np.pad(np.ones(n, bool), 2 * n)
    cap_abs = _cap(np.pad(sigma, 2 * n), big, 1.0, h, ctx.opts)
    dist = 0.5
    c = ConstantsContext(1, 1.0)
    F = absolute_sandwich_factor(c, 3.0, dist)
    return _Outcome([_Part("cap_1(S) <= cap_1(S;E)", cap_abs, cap_rel),
                     _Part("cap_1(S;E) <= F cap_1(S)", cap_rel, F * cap_abs)],
                    {"cap_abs": cap_abs, "cap_rel": cap_rel, "factor": F, "components": 2})


@_register("INHOM-SAND", "lambda(E)/(1+lambda(E)) C_p(S) <= cap_p(S;E) <= 2^(p-1) max(1, dist^-p) C_p(S)",
           "We repeat its simple proof", _named("square", "disc", "cone_complement"))
def _inhom_sand(ctx: _Context, spec: CheckSpec) -> _Outcome:
    s = _abs_setup(ctx)
    p, h, rho, N = ctx.sc.p, s["h"], s["rho"], ctx.sc.dim
    E = s["d2"] < (2 * rho) ** 2
    cap_rel = _cap(s["sigma"], E, p, h, ctx.opts)
    lam_E = _lam_mask(E, h, p, ctx.opts)
    inh = solver.inhomogeneous_capacity(GridDomain(s["sigma"], h, (0.0,) * N), p, opts=ctx.opts)
    dist = 2 * rho - float(np.sqrt(s["d2"][s["sigma"]].max())) - h / 2
    lo, hi = inhomogeneous_sandwich_factors(ConstantsContext(N, p), lam_E, dist)
    return _Outcome([_Part("lower factor C(S) <= cap(S;E)", lo * inh.value, cap_rel),
                     _Part("cap(S;E) <= upper factor C(S)", cap_rel, hi * inh.value)],
                    {"cap_rel": cap_rel, "lambda_E": lam_E, "C": inh.value,
                     "C_bracket": list(inh.bracket or ()), "dist": dist, "lower": lo, "upper": hi})


@_register("INHOM-RESCALE", "min(t^(N-p), t^N) C_p(S) <= C_p(tS) <= max(t^(N-p), t^N) C_p(S)",
           "capacity of rescaled sets", _named("square", "disc"))
def _inhom_rescale(ctx: _Context, spec: CheckSpec) -> _Outcome:
    pr = ctx.probe()
    h, N, p = pr["h"], ctx.sc.dim, ctx.sc.p
    x0, rho = np.asarray(pr["x0"]), pr["rho"]

    def scaled(t: float) -> GridDomain:
        half = int(math.ceil(t * rho / h)) + 2
        ax = np.arange(-half, half + 1) * h
        grid = np.stack(np.meshgrid(*([ax] * N), indexing="ij"), axis=-1)
        y = x0 + grid / t
        mask = (np.sum(grid ** 2, axis=-1) <= (t * rho) ** 2) & ~ctx.contains(y)
        return GridDomain(mask, h, (0.0,) * N)

    base = solver.inhomogeneous_capacity(scaled(1.0), p, opts=ctx.opts).value
    parts, vals = [], {"C(S)": base}
    c = ConstantsContext(N, p)
    for t in (0.5, 2.0):
        v = solver.inhomogeneous_capacity(scaled(t), p, opts=ctx.opts).value
        lo, hi = inhomogeneous_rescaling_bounds(c, t)
        parts.append(_Part(f"t={t:g}: lower bound <= C(tS)", lo * base, v))
        parts.append(_Part(f"t={t:g}: C(tS) <= upper bound", v, hi * base))
        vals[f"C(tS) t={t:g}"] = v
    return _Outcome(parts, vals)


@_register("MS-INRAD", "R^MS_{p,alpha gamma} <= R_{p,gamma} and R_{p,gamma} <= R^MS_{p,beta gamma}",
           r"$\alpha = \alpha(N,p)\le 1$ and $\beta=\beta(N,p)\ge 1$", _named("square"))
def _ms_inrad(ctx: _Context, spec: CheckSpec) -> _Outcome:
    N, p = ctx.sc.dim, ctx.sc.p_low
    if not p < N:
        raise _NotApplicable("needs p < N")
    om = rasterize(ctx.shape, 2 * ctx.sc.coarse_spacing, ctx.sc.bbox)
    h = om.spacing
    c = ConstantsContext(N, p, spec.constants.get("sobolev"))
    alpha, beta = ms_constants(c)
    gamma = ctx.sc.gamma if ctx.sc.gamma is not None else 0.5
    gamma2 = min(gamma, 0.5 / beta.value)
    rel = ir.InradiusSearch(om, p, sorted({gamma, gamma2})).run()
    ms = ir.InradiusSearch(om, p, sorted({alpha.value * gamma, beta.value * gamma2}),
                           kind="absolute").run()
    r_ms_a = ms[alpha.value * gamma].value
    r_ms_b = ms[beta.value * gamma2].value
    parts = [_Part("R^MS_{alpha gamma} <= R_gamma + h", r_ms_a, rel[gamma].value + h, "difference"),
             _Part("R_gamma' <= R^MS_{beta gamma'} + h", rel[gamma2].value, r_ms_b + h, "difference")]
    return _Outcome(parts, {"p": p, "alpha": alpha.value, "beta": beta.value, "gamma": gamma,
                            "gamma_prime": gamma2, "R_gamma": rel[gamma].value,
                            "R_gamma_prime": rel[gamma2].value, "R_MS_alpha": r_ms_a,
                            "R_MS_beta": r_ms_b, "spacing": h})


def _ladder(ctx: _Context, om: GridDomain, p: float, **kwargs: Any) -> list[ir.InradiusEstimate]:
    return ir.capacitary_inradius_ladder(om, p, ir.GALLAGHER_GAMMAS, **kwargs)


def _perforated_centers(om: GridDomain, h: float, stride: int = 2) -> list[tuple[float, ...]]:
    """Candidate centers covering one lattice period near the middle of the box."""
    lo = np.floor(np.asarray(om.origin) + np.asarray(om.shape) * h / 2)
    steps = np.arange(h / 2, 1.0, stride * h)
    grids = np.meshgrid(*([steps] * om.dim), indexing="ij")
    pts = np.stack(grids, axis=-1).reshape(-1, om.dim) + lo
    return [tuple(float(v) for v in row) for row in pts]


@_register("RG-SCALE", "R^G_p(t Omega) = t R^G_p(Omega)", "enjoys some scaling rule",
           _named("disc", "square"))
def _rg_scale(ctx: _Context, spec: CheckSpec) -> _Outcome:
    p = ctx.sc.p
    h = 2 * ctx.sc.coarse_spacing
    lo, hi = ctx.sc.bbox
    om1 = rasterize(ctx.shape, h, ctx.sc.bbox)
    om2 = _scaled_domain(ctx, 2.0, h)
    g1 = ir.gallagher_inradius(om1, p)
    g2 = ir.gallagher_inradius(om2, p)
    width = (g1.upper - g1.lower) * 2 + (g2.upper - g2.lower) + 2 * h
    diff = abs(g2.value - 2 * g1.value)
    return _Outcome([_Part("|R(2 Omega) - 2 R(Omega)| <= bracket widths + 2h", diff, width, "difference")],
                    {"R_G(Omega)": g1.value, "R_G(2 Omega)": g2.value, "spacing": h,
                     "bracket_Omega": [g1.lower, g1.upper], "bracket_2Omega": [g2.lower, g2.upper]})


def _scaled_domain(ctx: _Context, t: float, h: float) -> GridDomain:
    lo, hi = (np.asarray(v) for v in ctx.sc.bbox)
    shape = tuple(int(math.ceil(t * (b - a) / h - 1e-9)) for a, b in zip(lo, hi))
    origin = tuple(float(t * a) for a in lo)
    axes = [o + (np.arange(n) + 0.5) * h for o, n in zip(origin, shape)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return GridDomain(ctx.contains(pts / t), h, origin)


@_register("RG-LIMIT", "R_{p,gamma} non-increasing as gamma decreases, settling at the last two gammas",
           r"\inf_{0<\gamma<1} R_{p,\gamma}(\Omega)", _named("disc", "perforated"))
def _rg_limit(ctx: _Context, spec: CheckSpec) -> _Outcome:
    p = ctx.sc.p
    om = ctx.omega(coarse=True)
    h = om.spacing
    kwargs: dict[str, Any] = {}
    if _is_perforated(ctx.sc):
        kwargs = {"centers": _perforated_centers(om, h), "r_max": 1.5}
    ladder = _ladder(ctx, om, p, **kwargs)
    values = [e.value for e in ladder]
    parts = [_Part(f"R(gamma={b.gamma:g}) <= R(gamma={a.gamma:g})", b.value, a.value, "difference")
             for a, b in zip(ladder, ladder[1:])]
    parts.append(_Part("R(2^-7) - R(2^-8) <= one radius step", values[-2] - values[-1], h, "difference"))
    return _Outcome(parts, {"gammas": [e.gamma for e in ladder], "values": values, "spacing": h})


@_register("THETA-EQ", "theta <= theta* <= 2^(N+t) theta", "which will be more practical")
def _theta_eq(ctx: _Context, spec: CheckSpec) -> _Outcome:
    rep = ctx.indices()
    factor = theta_equivalence_factor(ctx.sc.dim, ctx.sc.t)
    return _Outcome([_Part("theta <= theta*", rep.theta, rep.theta_star),
                     _Part("theta* <= 2^(N+t) theta", rep.theta_star, factor * rep.theta)],
                    {"theta": rep.theta, "theta_star": rep.theta_star, "factor": factor,
                     "r0": rep.r0, "t": rep.t, "argmin_star": rep.argmin_star})


def _gamma0(ctx: _Context) -> tuple[float, dict[str, Any]]:
    N, p = ctx.sc.dim, ctx.sc.p
    c = ConstantsContext(N, p)
    rep = ctx.indices()
    lam_B2 = _ball_lambda(ctx, p) / 2 ** p
    cap12 = cap_ball_relative(c, 1.0, 2.0)
    consts = theorem52_constants(c, ctx.sc.t, rep.theta_star, ctx.r0, ctx.r_omega(), cap12, lam_B2)
    return consts.gamma0.value, {"theta_star": rep.theta_star, "A": consts.A.value,
                                 "ell": consts.ell.value, "gamma0": consts.gamma0.value}


@_register("T52", "r_Omega <= R_{p,gamma} <= C r_Omega with C = 6 sqrt(N) below gamma0",
           "there exists an explicit parameter", _named("square", "cone_complement", "funnel"))
def _t52(ctx: _Context, spec: CheckSpec) -> _Outcome:
    N, p = ctx.sc.dim, ctx.sc.p
    gamma0, info = _gamma0(ctx)
    gamma = ctx.sc.gamma if ctx.sc.gamma is not None else gamma0 / 2
    try:
        C = inradius_comparison_factor(ConstantsContext(N, p), gamma, gamma0,
                             spec.constants.get("C_Npg"), spec.constants.get("sigma_Np"))
    except NotEvaluable as exc:
        raise _NotEvaluable(str(exc)) from exc
    om = ctx.omega(coarse=True)
    h = om.spacing
    est = ir.capacitary_inradius(om, p, gamma)
    r = classical_inradius(om).value
    parts = [_Part("r_Omega <= R_{p,gamma} + h", r, est.value + h, "difference"),
             _Part("R_{p,gamma} <= C r_Omega + h", est.value, C.value * r + h, "difference")]
    return _Outcome(parts, {**info, "gamma": gamma, "C": C.value, "R": est.value,
                            "R_upper": est.upper, "r_Omega": r, "spacing": h})


@_register("PS-2SIDED", "lambda_{p,q}(Omega) <= lambda_{p,q}(B1) / r_Omega^(p-N+Np/q) (upper side)",
           r"two-sided estimate on the sharp Poincar\'e--Sobolev constants", _bounded_interior)
def _ps_two_sided(ctx: _Context, spec: CheckSpec) -> _Outcome:
    N, p = ctx.sc.dim, ctx.sc.p
    q = float(ctx.sc.q) if ctx.sc.q is not None else p
    lam = ctx.lam(p, q)
    if p == q == 2:
        lam_b = ball_dirichlet_eigenvalue(N)
    else:
        from .shapes import Ball
        ball = rasterize(Ball((0.0,) * N, 1.0), ctx.sc.spacing, ((-1.0,) * N, (1.0,) * N))
        lam_b = ctx.memo(("ball_pq", p, q),
                         lambda: solver.poincare_constant(ball, p, q, ctx.opts).value)
    r = ctx.r_omega()
    expo = p - N + N * p / q
    notes = ["lower side not evaluable: external constants required (sigma_{N,p,q})"]
    return _Outcome([_Part("lambda_{p,q}(Omega) <= lambda_{p,q}(B1) / r^e", lam, lam_b / r ** expo)],
                    {"lambda": lam, "lambda_B1": lam_b, "r_Omega": r, "exponent": expo, "q": q}, notes)


@_register("BUSER", "h(Omega) r_Omega >= c > 0 and lambda(Omega) r_Omega^2 <= lambda(B1)",
           "[Buser--type inequality]", _named("square", "disc"))
def _buser(ctx: _Context, spec: CheckSpec) -> _Outcome:
    N = ctx.sc.dim
    lam = ctx.lam(2.0)
    che = ctx.cheeger().value
    r = ctx.r_omega()
    c = che * r
    lam_b = ball_dirichlet_eigenvalue(N)
    C = lam_b / c ** 2
    parts = [_Part("lambda r^2 <= 1.05 lambda(B1)", lam * r * r, BUSER_FACTOR * lam_b),
             _Part("lambda <= C h^2", lam, C * che * che),
             _Part("0 < c = h r", 0.0, c, "difference")]
    return _Outcome(parts, {"lambda": lam, "cheeger": che, "r_Omega": r, "c": c, "C": C,
                            "lambda_B1": lam_b})


@_register("CHEEGER", "(h(Omega)/2)^2 <= lambda(Omega)", r"once we recall the following {\it Cheeger inequality}",
           _bounded_interior)
def _cheeger(ctx: _Context, spec: CheckSpec) -> _Outcome:
    che = ctx.cheeger()
    lam = ctx.lam(2.0)
    return _Outcome([_Part("(h/2)^2 <= lambda", (che.value / 2) ** 2, lam)],
                    {"cheeger": che.value, "cheeger_bracket": list(che.bracket or ()), "lambda": lam})


@_register("CHEEGER-PQ", "(p/q)^q lambda_p^(q/p) <= lambda_q for p < q",
           "we have the following Cheeger--type inequality", _bounded_interior)
def _cheeger_pq(ctx: _Context, spec: CheckSpec) -> _Outcome:
    p, q = ctx.sc.p_low, ctx.sc.p
    if not p < q:
        raise _NotApplicable("needs p_low < p")
    lam_p = ctx.lam(p)
    lam_q = ctx.lam(q)
    k = cheeger_type_constant(p, q)
    parts = [_Part(f"({p:g}/{q:g})^{q:g} lambda_{p:g}^(q/p) <= lambda_{q:g}", k * lam_p ** (q / p), lam_q)]
    che = ctx.cheeger().value
    k1 = cheeger_type_constant(1.0, q)
    parts.append(_Part(f"(1/{q:g})^{q:g} h^{q:g} <= lambda_{q:g}", k1 * che ** q, lam_q))
    return _Outcome(parts, {"lambda_p": lam_p, "lambda_q": lam_q, "cheeger": che, "p": p, "q": q})


@_register("FUNNEL", "theta*(t) at a funnel vertex >= c_{N,beta} min(...); funnel volume matches sampling",
           "concrete cases of applicability", _is_funnel)
def _funnel(ctx: _Context, spec: CheckSpec) -> _Outcome:
    f = ctx.sc.funnel or {}
    N = ctx.sc.dim
    beta, delta, h0 = float(f["exponent"]), float(f["opening"]), float(f["height"])
    bound = funnel_index_bound(N, beta, delta, h0)
    vertex = ctx.sc.vertex
    exact = ir.density_ratio_shape(ctx.shape, vertex, bound.r0, bound.t)
    grid = ir.density_ratio_at(ctx.omega(), vertex, bound.r0, bound.t)
    vol = funnel_volume(N, beta, delta, h0)
    axis = (0.0,) * (N - 1) + (1.0,)
    fun = Funnel(axis, delta, h0, beta)
    half = (h0 / delta) ** (1.0 / beta)
    mc, err = monte_carlo_volume(fun, (-half,) * (N - 1) + (0.0,), (half,) * (N - 1) + (h0,),
                                 samples=400_000, seed=0)
    rel = abs(mc - vol) / vol
    parts = [_Part("lower bound <= theta*(t) at the vertex", bound.lower_bound, exact),
             _Part("|Monte-Carlo - volume| / volume <= 2%", rel, 0.02, "difference")]
    notes = []
    if grid < bound.lower_bound:
        notes.append(f"grid-counted ratio {grid:.4g} at spacing {ctx.sc.spacing:g} misses the cusp at small radii")
    return _Outcome(parts, {**bound.to_dict(), "beta": beta, "delta": delta, "h": h0,
                            "theta_vertex": exact, "theta_vertex_grid": grid,
                            "volume": vol, "monte_carlo": mc, "monte_carlo_stderr": err}, notes)


@_register("CEX-PERF", "lambda_2(Omega_delta) decreases as delta shrinks while R^G stays <= sqrt(N)/2 + 1/4",
           "the periodically perforated set", _is_perforated)
def _cex_perf(ctx: _Context, spec: CheckSpec) -> _Outcome:
    deltas = ctx.sc.hole_sweep or (float(ctx.sc.shape["hole_radius"]),)
    reports = [counterexample_perforated(d, ctx.sc.p, ctx.sc.periods, ctx.sc.spacing,
                                         ctx.sc.coarse_spacing, ctx.opts) for d in deltas]
    parts = []
    for a, b in zip(reports, reports[1:]):
        parts.append(_Part(f"lambda(delta={b.delta:g}) < lambda(delta={a.delta:g})",
                           b.lam, a.lam * (1 - 1e-9), "difference"))
    for r in reports:
        if not math.isnan(r.gallagher):
            parts.append(_Part(f"delta={r.delta:g}: R^G <= sqrt(N)/2 + 1/4 + 2h", r.gallagher,
                               r.gallagher_bound + 2 * r.coarse_spacing, "difference"))
        parts.append(_Part(f"delta={r.delta:g}: centers without a captured hole", float(r.capture_failures),
                           0.0, "difference"))
        parts.append(_Part(f"delta={r.delta:g}: eps0 <= C(B_r(x0) minus Omega)", r.eps0, r.min_inhom))
    details = {"reports": [r.to_dict() for r in reports]}
    notes = ["limit statement recast as a strict decrease across the hole-radius sweep"]
    return _Outcome(parts, details, notes)


# ---------------------------------------------------------------------------
# Perforated counterexample
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerforatedReport:
    delta: float
    p: float
    periods: int
    spacing: float
    coarse_spacing: float
    lam: float
    lam_method: str
    gallagher: float
    gallagher_upper: float
    gallagher_bound: float
    capture_radius: float
    capture_centers: int
    capture_failures: int
    eps0: float
    min_inhom: float
    inhom_centers: tuple[tuple[float, ...], ...]

    def to_dict(self) -> dict[str, Any]:
        return {k: (list(map(list, v)) if k == "inhom_centers" else v) for k, v in self.__dict__.items()}


def _neumann_dirichlet_eigen(mask: np.ndarray, h: float) -> float:
    """First eigenvalue of the 5/7-point Laplacian with zero values on the cells
    outside ``mask`` inside the array and no flux across the array faces."""
    import scipy.sparse as sp
    from scipy.sparse.linalg import eigsh

    n = int(mask.sum())
    index = -np.ones(mask.shape, dtype=np.int64)
    index[mask] = np.arange(n)
    diag = np.zeros(n)
    rows, cols = [], []
    for a in range(mask.ndim):
        lo = [slice(None)] * mask.ndim
        hi = [slice(None)] * mask.ndim
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        i, j = index[tuple(lo)], index[tuple(hi)]
        both = (i >= 0) & (j >= 0)
        rows += [i[both], j[both]]
        cols += [j[both], i[both]]
        # every in-box edge touching a free cell adds to the diagonal (Dirichlet toward holes)
        np.add.at(diag, i[i >= 0], 1.0)
        np.add.at(diag, j[j >= 0], 1.0)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    A = sp.coo_matrix((-np.ones(r.size), (r, c)), shape=(n, n)).tocsr() + sp.diags(diag)
    A = A / (h * h)
    vals = eigsh(A.tocsc(), k=1, sigma=0.0, which="LM", v0=np.ones(n), return_eigenvectors=False)
    return float(vals[0])


def counterexample_perforated(delta: float, p: float = 2.0, periods: int = 3, spacing: float = 1.0 / 64,
                              coarse_spacing: float = 1.0 / 16,
                              opts: solver.SolverOptions = solver.DEFAULT,
                              capture_radius: float = 1.1, dim: int = 2,
                              gallagher: bool = True) -> PerforatedReport:
    """Periodically perforated set: Poincare constant, Gallagher estimate and hole capture.

    The eigenvalue is computed on ``periods`` lattice cells with the box faces
    on half-integer planes; these are symmetry planes of the perforation, so
    natural (no-flux) conditions there reproduce the periodic ground state.
    That path needs ``p = 2``; other exponents use Dirichlet conditions on a
    box enlarged by one period, an upper bound.  Both grids are refined to
    resolve the holes: the eigenvalue grid to ``delta / 4`` and the capacity
    grid to ``delta / 3``.  The Gallagher search runs on the capacity grid and
    is skipped (reported as NaN) when ``gallagher`` is false.
    """
    if not 0 < delta < 0.25:
        raise ShapeError("perforated lattice needs 0 < delta < 1/4")
    if periods < 3:
        raise ValueError("at least three periods are needed")
    spacing = min(spacing, delta / 4)
    coarse_spacing = min(coarse_spacing, delta / 3)
    lo = (0.5,) * dim
    hi = (periods + 0.5,) * dim
    if p == 2:
        om = rasterize(PerforatedLattice(delta, tuple(v - 1 for v in lo), tuple(v + 1 for v in hi)),
                       spacing, (lo, hi))
        lam = _neumann_dirichlet_eigen(om.mask, spacing)
        method = "natural faces on symmetry planes"
    else:
        big = (tuple(v - 1 for v in lo), tuple(v + 1 for v in hi))
        om = rasterize(PerforatedLattice(delta, *big), spacing, big)
        lam = float(solver.poincare_constant(om, p, p, opts).value)
        method = "Dirichlet on an enlarged box"
    # Gallagher estimate with centers over one period in the middle of a larger box
    span = int(math.ceil(2 * capture_radius)) + 2
    box = ((-span,) * dim, (span + 1.0,) * dim)
    coarse = rasterize(PerforatedLattice(delta, *box), coarse_spacing, box)
    if gallagher:
        gal = ir.gallagher_inradius(coarse, p, centers=_perforated_centers(coarse, coarse_spacing),
                                    r_max=1.5)
        gal_value, gal_upper = gal.value, gal.upper
    else:
        gal_value = gal_upper = math.nan
    bound = math.sqrt(dim) / 2 + 0.25
    # hole capture: every center of the one-period lattice contains a whole hole
    pts = np.asarray(_perforated_centers(coarse, coarse_spacing, stride=1))
    nearest = np.round(pts)
    gap = np.linalg.norm(pts - nearest, axis=1) + delta
    failures = int(np.sum(gap >= capture_radius))
    # inhomogeneous capacities at a few centers against the explicit eps0
    c = ConstantsContext(dim, p)
    lam_b = ball_dirichlet_eigenvalue(dim) if p == 2 else None
    if lam_b is None:
        from .shapes import Ball
        unit = rasterize(Ball((0.0,) * dim, 1.0), spacing, ((-1.0,) * dim, (1.0,) * dim))
        lam_b = float(solver.poincare_constant(unit, p, p, opts).value)
    r = capture_radius
    eps0 = 2.0 / 4 ** p * c.omega() / (r ** p + 1) * lam_b * delta ** dim
    samples = [tuple(np.floor(pts[0]) + v) for v in ((0.5,) * dim, (0.0,) * dim, (0.25,) * dim)]
    inh = []
    for x0 in samples:
        half = int(math.ceil(r / coarse_spacing)) + 2
        ax = np.arange(-half, half + 1) * coarse_spacing
        grid = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1)
        y = np.asarray(x0) + grid
        d2 = np.sum((y - np.round(y)) ** 2, axis=-1)
        sigma = (np.sum(grid ** 2, axis=-1) <= r * r) & (d2 <= delta ** 2)
        inh.append(solver.inhomogeneous_capacity(GridDomain(sigma, coarse_spacing, (0.0,) * dim), p,
                                                 opts=opts).value)
    return PerforatedReport(delta, p, periods, spacing, coarse_spacing, lam, method, gal_value,
                            gal_upper, bound, r, int(len(pts)), failures, eps0, float(min(inh)),
                            tuple(tuple(float(v) for v in s) for s in samples))


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def _record(spec: CheckSpec, status: str, outcome: _Outcome | None = None,
            notes: Sequence[str] = ()) -> VerificationRecord:
    fp = spec.fingerprint()
    if outcome is None:
        return VerificationRecord(spec.check_id, spec.scenario.name, None, None, None, None, status,
                                  "ratio", spec.slack, fp, notes=tuple(notes))
    parts = outcome.parts
    worst = min(parts, key=lambda pt: (pt.ok(spec.slack), _relative_slack(pt)))
    passed = all(pt.ok(spec.slack) for pt in parts)
    return VerificationRecord(spec.check_id, spec.scenario.name, worst.lhs, worst.rhs, worst.margin(),
                              passed, "pass" if passed else "fail", worst.mode, spec.slack, fp,
                              tuple(pt.to_dict() for pt in parts), outcome.details,
                              tuple(outcome.notes) + tuple(notes))


def _relative_slack(pt: _Part) -> float:
    # 1 - lhs/rhs for either mode, so parts of both kinds compare on one scale
    if pt.rhs == 0:
        return 0.0 if pt.lhs <= 0 else -math.inf
    return (pt.rhs - pt.lhs) / abs(pt.rhs)


def run_check(spec: CheckSpec, context: _Context | None = None) -> VerificationRecord:
    """Evaluate one check; upstream failures give an ``indeterminate`` record."""
    info = REGISTRY.get(spec.check_id)
    if info is None:
        raise VerificationError(f"unknown check id {spec.check_id!r}")
    ctx = context if context is not None else _Context(spec.scenario)
    try:
        outcome = info.run(ctx, spec)
    except _NotEvaluable as exc:
        return _record(spec, "not evaluable", notes=[str(exc)])
    except _NotApplicable as exc:
        return _record(spec, "not evaluable", notes=[f"not applicable: {exc}"])
    except (solver.SolverError, solver.PreconditionError, AnalyticError, ShapeError,
            ir.InradiusError, ir.DensityIndexError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return _record(spec, "indeterminate", notes=[f"{type(exc).__name__}: {exc}"])
    return _record(spec, "pass", outcome)


@dataclass(frozen=True)
class SuiteReport:
    records: tuple[VerificationRecord, ...]

    @property
    def all_passed(self) -> bool:
        """No record failed or was indeterminate (not-evaluable records do not count)."""
        return all(r.status in ("pass", "not evaluable") for r in self.records)

    @property
    def any_indeterminate(self) -> bool:
        return any(r.status == "indeterminate" for r in self.records)

    def summary(self) -> list[dict[str, Any]]:
        """Per check: counts by status and the smallest margin among evaluated records."""
        out = []
        for cid in sorted({r.check_id for r in self.records}):
            recs = [r for r in self.records if r.check_id == cid]
            margins = [r.margin for r in recs if r.margin is not None and r.mode == "ratio"]
            out.append({"check_id": cid, "records": len(recs),
                        "pass": sum(r.status == "pass" for r in recs),
                        "fail": sum(r.status == "fail" for r in recs),
                        "indeterminate": sum(r.status == "indeterminate" for r in recs),
                        "not_evaluable": sum(r.status == "not evaluable" for r in recs),
                        "min_margin": _num(min(margins)) if margins else None})
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"schema": 1, "records": [r.to_dict() for r in self.records], "summary": self.summary(),
                "all_passed": self.all_passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check_id", "scenario", "lhs", "rhs", "margin", "pass", "status"])
        for r in self.records:
            w.writerow([r.check_id, r.scenario, _fmt(r.lhs), _fmt(r.rhs), _fmt(r.margin),
                        "" if r.passed is None else str(r.passed).lower(), r.status])
        return buf.getvalue()

    def to_table(self) -> str:
        rows = [("check", "scenario", "lhs", "rhs", "margin", "status")]
        rows += [(r.check_id, r.scenario, _fmt(r.lhs), _fmt(r.rhs), _fmt(r.margin), r.status)
                 for r in self.records]
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
        return "\n".join(lines) + "\n"


def _fmt(v: float | None) -> str:
    if v is None:
        return ""
    return f"{v:.6g}"


def _run_scenario(sc: Scenario, ids: Sequence[str], slack: float, constants: dict[str, float],
                  opts: solver.SolverOptions) -> list[tuple[str, str, VerificationRecord]]:
    ctx = _Context(sc, opts)
    fp = sc.fingerprint()
    out = []
    for cid in ids:
        if REGISTRY[cid].applies(sc):
            rec = run_check(CheckSpec(cid, sc, slack, dict(constants)), ctx)
            out.append((cid, fp, rec))
    return out


def run_suite(checks: Iterable[str] | None = None, scenarios: Sequence[Scenario] | None = None,
              slack: float = DEFAULT_SLACK, constants: dict[str, float] | None = None,
              opts: solver.SolverOptions = solver.DEFAULT, workers: int = 1) -> SuiteReport:
    """Run every selected check on every scenario it applies to.

    Scenarios are independent and may run in ``workers`` processes; records
    are ordered by check id, then scenario fingerprint, either way.
    """
    ids = sorted(REGISTRY) if checks is None else sorted(dict.fromkeys(checks))
    if not ids:
        raise VerificationError("empty check selection")
    for cid in ids:
        if cid not in REGISTRY:
            raise VerificationError(f"unknown check id {cid!r}")
    scs = default_scenarios() if scenarios is None else list(scenarios)
    names = [sc.name for sc in scs]
    if len(set(names)) != len(names):
        raise VerificationError("scenario names must be unique")
    consts = dict(constants or {})
    if workers > 1 and len(scs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_scenario, sc, ids, slack, consts, opts) for sc in scs]
            rows = [row for f in futures for row in f.result()]
    else:
        rows = [row for sc in scs for row in _run_scenario(sc, ids, slack, consts, opts)]
    rows.sort(key=lambda row: (row[0], row[1]))
    return SuiteReport(tuple(row[2] for row in rows))


def registry_table() -> list[dict[str, str]]:
    """Check ids with their inequality and quote anchor."""
    return [{"check_id": c.check_id, "statement": c.statement, "anchor": c.anchor}
            for c in sorted(REGISTRY.values(), key=lambda c: c.check_id)]


__all__ = [
    "Scenario", "CheckSpec", "VerificationRecord", "SuiteReport", "PerforatedReport", "REGISTRY",
    "run_check", "run_suite", "counterexample_perforated", "default_scenarios", "load_scenarios",
    "registry_table", "VerificationError", "DEFAULT_SLACK",
]
