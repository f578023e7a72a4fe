"""Discrete variational problems: capacities, Poincare-Sobolev and Cheeger constants.

All problems minimize the lattice energy ``h^(N-p) sum |grad phi|^p`` of
:mod:`capri._lattice` (plus a zeroth-order term for the inhomogeneous
capacity).  Quadratic problems (p = 2) are solved with one sparse linear
solve.  Other exponents use a projected Newton method with an Armijo line
search on the exact energy; the Hessian is the exact second derivative with
the weight ``|grad|^(p-2)`` floored where the gradient vanishes.  A projected
Barzilai-Borwein gradient method is available as an alternative.
"""
from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from . import _lattice as lat
from .analytic import ConstantsContext, absolute_sandwich_factor
from .shapes import GridDomain, ShapeError, frame, lattice_ball

DIRECT_LIMIT = {1: 10**7, 2: 400_000, 3: 40_000}


class SolverError(RuntimeError):
    """A minimization did not converge."""

    def __init__(self, message: str, result: "CapacityResult | None" = None) -> None:
        super().__init__(message)
        self.result = result


class PreconditionError(ValueError):
    """The inputs violate a precondition of the variational problem."""


@dataclass(frozen=True, eq=False)
class CapacityResult:
    """Outcome of a discrete minimization.

    ``value`` is the minimal energy (or Rayleigh quotient), ``residual`` the
    last relative energy decrease (or linear residual), ``bracket`` an
    optional (lower, upper) pair.  ``field`` is the minimizer on the lattice
    described by ``origin`` and ``spacing``.
    """

    value: float
    residual: float
    iterations: int
    converged: bool = True
    bracket: tuple[float, float] | None = None
    field: np.ndarray | None = None
    spacing: float = 1.0
    origin: tuple[float, ...] = ()
    p: float = 2.0
    method: str = "direct"
    history: tuple[float, ...] = ()
    notes: tuple[str, ...] = ()
    parts: tuple[tuple[str, float], ...] = ()

    def to_dict(self, with_field: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "value": self.value, "residual": self.residual, "iterations": self.iterations,
            "converged": self.converged, "p": self.p, "method": self.method,
            "bracket": list(self.bracket) if self.bracket else None,
            "notes": list(self.notes), "parts": {k: v for k, v in self.parts},
        }
        if with_field and self.field is not None:
            out["field"] = {"shape": list(self.field.shape), "spacing": self.spacing,
                            "origin": list(self.origin),
                            "values": base64.b64encode(self.field.astype("<f8").tobytes()).decode()}
        return out


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances shared by all problems.

    ``tol`` bounds the relative energy decrease of the last iteration (the
    Barzilai-Borwein method measures it over a window of ``window``
    iterations).  ``eig_tol`` bounds the relative change of the Rayleigh
    quotient between two nonlinear inverse iterations; close to p = 1 the
    iteration creeps, so it is looser than ``tol``.  ``eps`` is the exponent
    offset used for p = 1.
    """

    tol: float = 1e-7
    eig_tol: float = 1e-5
    max_iter: int = 200
    method: str = "newton"
    eps: float = 0.05
    window: int = 50
    keep_field: bool = True

    def __post_init__(self) -> None:
        if self.method not in ("newton", "bb"):
            raise ValueError("method must be 'newton' or 'bb'")
        if not (self.tol > 0 and self.eig_tol > 0 and self.max_iter > 0 and self.eps > 0):
            raise ValueError("tolerances must be positive")


DEFAULT = SolverOptions()


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def _solve_spd(A: sp.spmatrix, b: np.ndarray, dim: int, rtol: float = 1e-11,
               x0: np.ndarray | None = None) -> np.ndarray:
    """Solve a symmetric positive definite system, directly when it is small enough."""
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    if n <= DIRECT_LIMIT[dim]:
        return np.atleast_1d(spla.spsolve(A.tocsc(), b))
    import pyamg

    # plain aggregation: cheap setup, a few more CG steps than smoothed aggregation
    ml = pyamg.smoothed_aggregation_solver(A.tocsr(), symmetry="symmetric", smooth=None)
    x = ml.solve(b, x0=x0, tol=rtol, accel="cg", maxiter=500)
    return np.asarray(x)


# ---------------------------------------------------------------------------
# Generic minimization
# ---------------------------------------------------------------------------


@dataclass
class _Objective:
    """``c_E E_p(x) + c_M h^N sum |x|^p - h^N sum load * x`` on a lattice array."""

    p: float
    h: float
    energy_coef: float = 1.0
    mass_coef: float = 0.0
    load: np.ndarray | None = None

    def value(self, x: np.ndarray) -> float:
        v = self.energy_coef * lat.energy(x, self.p, self.h)
        if self.mass_coef:
            v += self.mass_coef * lat.mass(x, self.p, self.h)
        if self.load is not None:
            v -= self.h ** x.ndim * float(np.sum(self.load * x))
        return v

    def gradient(self, x: np.ndarray) -> np.ndarray:
        g = self.energy_coef * lat.energy_gradient(x, self.p, self.h)
        if self.mass_coef:
            g += self.mass_coef * self.h ** x.ndim * self.p * np.abs(x) ** (self.p - 1) * np.sign(x)
        if self.load is not None:
            g -= self.h ** x.ndim * self.load
        return g

    def hessian(self, x: np.ndarray, index: np.ndarray, rel_floor: float) -> sp.csr_matrix:
        H = self.energy_coef * lat.energy_hessian(x, self.p, self.h, index, rel_floor=rel_floor)
        if self.mass_coef:
            free = index >= 0
            ax = np.abs(x[free])
            if self.p != 2:
                ax = np.maximum(ax, max(1e-12, rel_floor * float(ax.max(initial=0.0))))
            d = self.mass_coef * self.h ** x.ndim * self.p * (self.p - 1) * ax ** (self.p - 2)
            H = H + sp.diags(d)
        return H.tocsr()


@dataclass
class _Outcome:
    x: np.ndarray
    history: list[float]
    iterations: int
    converged: bool
    residual: float


def _newton(obj: _Objective, x: np.ndarray, free: np.ndarray, lower: float | None,
            upper: float | None, opts: SolverOptions, rel_floor: float = 0.0,
            linear_rtol: float = 1e-3) -> _Outcome:
    dim = x.ndim
    x = x.copy()

    def project(v: np.ndarray) -> np.ndarray:
        if lower is not None or upper is not None:
            return np.clip(v, lower, upper)
        return v

    x[free] = project(x[free])
    J = obj.value(x)
    hist = [J]
    residual = math.inf
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        g = obj.gradient(x)
        gf = g[free]
        xf = x[free]
        active = np.zeros(xf.shape, bool)
        if lower is not None:
            active |= (xf <= lower) & (gf > 0)
        if upper is not None:
            active |= (xf >= upper) & (gf < 0)
        inactive = free.copy()
        inactive[free] = ~active
        if not inactive.any():
            converged, residual = True, 0.0
            break
        index = lat.make_index(inactive)
        H = obj.hessian(x, index, rel_floor)
        gi = g[inactive]
        d = _solve_spd(H, -gi, dim, rtol=linear_rtol)
        slope = float(gi @ d)
        if not slope < 0:
            d = -gi
            slope = float(gi @ d)
        t = 1.0
        while True:
            xn = x.copy()
            xn[inactive] = x[inactive] + t * d
            xn[free] = project(xn[free])
            Jn = obj.value(xn)
            if Jn <= J + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                xn, Jn = x, J
                break
        decrease = J - Jn
        x, J = xn, Jn
        hist.append(J)
        residual = decrease / max(abs(J), 1e-300)
        if residual <= opts.eig_tol:
            converged = True
            break
    return _Outcome(x, hist, it, converged, residual)


def _bb(obj: _Objective, x: np.ndarray, free: np.ndarray, lower: float | None,
        upper: float | None, opts: SolverOptions) -> _Outcome:
    """Projected gradient with Barzilai-Borwein steps in the metric of the p = 2 Laplacian."""
    dim = x.ndim
    x = x.copy()
    index = lat.make_index(free)
    P = lat.laplacian(index, obj.h) * (obj.h ** (2 - obj.p) if obj.p != 2 else 1.0)
    if obj.mass_coef:
        P = P + sp.identity(P.shape[0]) * obj.h ** dim
    lu = spla.splu(P.tocsc())

    def project(v: np.ndarray) -> np.ndarray:
        if lower is not None or upper is not None:
            return np.clip(v, lower, upper)
        return v

    x[free] = project(x[free])
    J = obj.value(x)
    hist = [J]
    g = obj.gradient(x)[free]
    alpha = 1.0
    converged = False
    residual = math.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        d = lu.solve(g)
        step = alpha
        while True:
            xn = x.copy()
            xn[free] = project(x[free] - step * d)
            Jn = obj.value(xn)
            if Jn <= J - 1e-4 * float(g @ (x[free] - xn[free])) * 0 or Jn <= J:
                break
            step *= 0.5
            if step < 1e-14:
                xn, Jn = x, J
                break
        gn = obj.gradient(xn)[free]
        s = xn[free] - x[free]
        y = gn - g
        sy = float(s @ y)
        alpha = float(s @ (P @ s)) / sy if sy > 0 else 2.0 * step
        alpha = min(max(alpha, 1e-8), 1e8)
        x, J, g = xn, Jn, gn
        hist.append(J)
        if len(hist) > opts.window:
            old = hist[-1 - opts.window]
            residual = (old - J) / max(abs(J), 1e-300)
            if residual <= opts.eig_tol:
                converged = True
                break
        if not np.any(s):
            converged, residual = True, 0.0
            break
    return _Outcome(x, hist, it, converged, residual)


def _minimize(obj: _Objective, x: np.ndarray, free: np.ndarray, lower: float | None,
              upper: float | None, opts: SolverOptions, rel_floor: float = 0.0) -> _Outcome:
    if opts.method == "bb":
        return _bb(obj, x, free, lower, upper, opts)
    return _newton(obj, x, free, lower, upper, opts, rel_floor)


# ---------------------------------------------------------------------------
# Relative capacity
# ---------------------------------------------------------------------------


def _check_p(p: float, dim: int) -> None:
    if not 1 <= p <= dim:
        raise PreconditionError(f"exponent p = {p} outside [1, N] with N = {dim}")


def _pad(masks: Sequence[np.ndarray], cells: int = 2) -> list[np.ndarray]:
    return [np.pad(m, cells) for m in masks]


def _tv_1d(sigma: np.ndarray, E: np.ndarray) -> float:
    """Exact discrete p = 1 capacity in one dimension: 2 per component of E meeting sigma."""
    labels, _ = ndimage.label(E)
    return 2.0 * len(np.unique(labels[sigma & E]))


def _harmonic(sigma: np.ndarray, E: np.ndarray, h: float,
              rtol: float = 1e-11) -> tuple[np.ndarray, float]:
    dim = sigma.ndim
    free = E & ~sigma
    index = lat.make_index(free)
    L = lat.laplacian(index, h)
    b = lat.neighbour_sum(sigma.astype(float))[free] * h ** (dim - 2)
    x = _solve_spd(L, b, dim, rtol=rtol)
    phi = sigma.astype(float)
    phi[free] = x
    res = float(np.linalg.norm(L @ x - b) / max(np.linalg.norm(b), 1e-300))
    return phi, res


def capacity_arrays(sigma: np.ndarray, E: np.ndarray, p: float, h: float,
                    opts: SolverOptions = DEFAULT, check: bool = True,
                    start: np.ndarray | None = None) -> CapacityResult:
    """Relative capacity for masks on one padded array (no framing, p > 1 or N = 1).

    The arrays must carry at least one empty layer around ``E``.
    """
    dim = sigma.ndim
    if check:
        if not sigma.any():
            return CapacityResult(0.0, 0.0, 0, p=p, method="empty")
        grown = ndimage.binary_dilation(sigma, structure=np.ones((3,) * dim, bool))
        if not np.all(E[grown]):
            raise PreconditionError("Sigma is not compactly inside E: it reaches within one cell of the boundary of E")
        if not (E & ~sigma).any():
            raise PreconditionError("Sigma fills E: nothing left to minimize over")
    if p == 1 and dim == 1:
        return CapacityResult(_tv_1d(sigma, E), 0.0, 0, p=1.0, method="exact-tv")
    if p == 2 and opts.method == "newton":
        phi, res = _harmonic(sigma, E, h)
        value = lat.energy(phi, 2.0, h)
        return CapacityResult(value, res, 1, field=phi if opts.keep_field else None,
                              spacing=h, p=2.0, method="direct", history=(value,))
    free = E & ~sigma
    if start is None:
        start, _ = _harmonic(sigma, E, h, rtol=1e-6)
    obj = _Objective(p, h)
    rel_floor = 1e-3 if p < 1.5 else 0.0
    out = _minimize(obj, start, free, 0.0, 1.0, opts, rel_floor)
    value = lat.energy(out.x, p, h)
    return CapacityResult(value, out.residual, out.iterations, out.converged,
                          field=out.x if opts.keep_field else None, spacing=h, p=p,
                          method=opts.method, history=tuple(out.history))


def _hoelder_volume(E: np.ndarray, h: float) -> float:
    """Volume of the cells whose forward gradient can be nonzero for fields supported in E."""
    grown = E.copy()
    for a in range(E.ndim):
        grown |= lat.shift(E, lat.unit(E.ndim, a, 1), fill=False)
    return float(grown.sum()) * h ** E.ndim


def extrapolate_to_one(eps: Sequence[float], values: Sequence[float]) -> float:
    """Extrapolate ``f(1 + eps)`` to ``eps = 0``.

    Fits ``a + b eps + c eps log(eps)`` through three points (or the linear
    part through two); the ``eps log eps`` term is the leading correction of
    p-capacities and p-eigenvalues as p decreases to 1.
    """
    e = np.asarray(eps, float)
    v = np.asarray(values, float)
    if e.size == 1:
        return float(v[0])
    if e.size == 2:
        A = np.stack([np.ones(2), e * np.log(e)], axis=1)
    else:
        A = np.stack([np.ones(e.size), e, e * np.log(e)], axis=1)
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    return float(coef[0])


EPS_LADDER = (0.2, 0.1, 0.05)


def _p_one_capacity(sigma: np.ndarray, E: np.ndarray, h: float, opts: SolverOptions,
                    ladder: Sequence[float]) -> CapacityResult:
    eps_list = sorted({*ladder, opts.eps}, reverse=True)
    vals, last = [], None
    start = None
    for e in eps_list:
        last = capacity_arrays(sigma, E, 1.0 + e, h, opts, check=False, start=start)
        start = last.field
        vals.append(last.value)
    p_min = 1.0 + eps_list[-1]
    upper = _hoelder_volume(E, h) ** (1 - 1 / p_min) * vals[-1] ** (1 / p_min)
    extrap = extrapolate_to_one(eps_list, vals)
    value = min(max(extrap, 0.0), upper)
    parts = tuple((f"p={1 + e:g}", v) for e, v in zip(eps_list, vals))
    return CapacityResult(value, last.residual, last.iterations, last.converged,
                          bracket=(min(value, upper), upper), field=last.field, spacing=h,
                          p=1.0, method=f"smoothed p=1+eps, eps in {tuple(eps_list)}",
                          notes=("value extrapolated to p = 1; upper bound from Hoelder at the smallest eps",),
                          parts=parts)


def relative_capacity(sigma: GridDomain, E: GridDomain, p: float,
                      opts: SolverOptions = DEFAULT,
                      ladder: Sequence[float] = EPS_LADDER) -> CapacityResult:
    """p-capacity of ``sigma`` relative to the open set ``E``.

    Minimizes the lattice energy over fields equal to 1 on the cells of
    ``sigma`` and 0 outside the cells of ``E``; minimizers take values in
    [0, 1].  For ``p = 1`` (N >= 2) the problem is solved at ``1 + eps`` for
    the exponents in ``ladder`` and extrapolated; the reported bracket's upper
    end is a Hoelder upper bound of the discrete p = 1 capacity.

    Raises
    ------
    PreconditionError
        If ``sigma`` is not compactly inside ``E`` or fills it.
    SolverError
        If the minimization does not converge.
    """
    _check_p(p, sigma.dim)
    (s, e), h, origin = frame([sigma, E])
    if not s.any():
        return CapacityResult(0.0, 0.0, 0, p=p, method="empty", spacing=h, origin=origin)
    s, e = _pad([s, e])
    origin = tuple(o - 2 * h for o in origin)
    if p == 1 and sigma.dim > 1:
        capacity_arrays(s, e, 2.0, h, SolverOptions(keep_field=False))  # precondition check
        res = _p_one_capacity(s, e, h, opts, ladder)
    else:
        res = capacity_arrays(s, e, p, h, opts)
    res = _with_frame(res, origin)
    if not res.converged:
        raise SolverError(f"capacity minimization did not converge (residual {res.residual:.3g})", res)
    return res


def _with_frame(res: CapacityResult, origin: tuple[float, ...]) -> CapacityResult:
    return CapacityResult(res.value, res.residual, res.iterations, res.converged, res.bracket,
                          res.field, res.spacing, origin, res.p, res.method, res.history,
                          res.notes, res.parts)


# ---------------------------------------------------------------------------
# Poincare-Sobolev constants
# ---------------------------------------------------------------------------


def _check_q(p: float, q: float, dim: int) -> float:
    if q < 1:
        raise PreconditionError("q must be at least 1")
    if p < dim:
        crit = dim * p / (dim - p)
        if q >= crit:
            raise PreconditionError(f"q = {q} is not subcritical (q < p* = {crit:g})")
    elif p == dim and q > 10:
        raise PreconditionError("for p = N the exponent q is capped at 10")
    return q


def _lq_norm(u: np.ndarray, q: float, h: float) -> float:
    return float((h ** u.ndim * np.sum(np.abs(u) ** q)) ** (1.0 / q))


def _dirichlet_eigen(mask: np.ndarray, h: float) -> tuple[float, np.ndarray, float]:
    dim = mask.ndim
    index = lat.make_index(mask)
    L = lat.laplacian(index, h) * h ** (2 - dim)  # graph Laplacian
    n = L.shape[0]
    if n == 1:
        vec = np.ones(1)
        mu = float(L[0, 0])
    elif n <= min(DIRECT_LIMIT[dim], 200_000):
        vals, vecs = spla.eigsh(L.tocsc(), k=1, sigma=0.0, which="LM", v0=np.ones(n), tol=1e-12)
        mu, vec = float(vals[0]), vecs[:, 0]
    else:
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(L.tocsr(), symmetry="symmetric")
        X = np.ones((n, 1))
        vals, vecs = spla.lobpcg(L, X, M=ml.aspreconditioner(), tol=1e-10, maxiter=400,
                                 largest=False)
        mu, vec = float(vals[0]), vecs[:, 0]
    vec = np.abs(vec)
    u = np.zeros(mask.shape)
    u[mask] = vec
    res = float(np.linalg.norm(L @ vec - mu * vec) / max(np.linalg.norm(vec), 1e-300))
    return mu / h ** 2, u, res


def _initial_positive(mask: np.ndarray) -> np.ndarray:
    return ndimage.distance_transform_edt(mask).astype(float)


def _inverse_iteration(mask: np.ndarray, p: float, q: float, h: float, opts: SolverOptions,
                       start: np.ndarray | None = None) -> CapacityResult:
    """Nonlinear inverse iteration for ``min E_p(u)`` subject to ``||u||_q = 1``."""
    dim = mask.ndim
    u = _initial_positive(mask) if start is None else np.where(mask, np.abs(start), 0.0)
    u /= _lq_norm(u, q, h)
    lam = lat.energy(u, p, h)
    hist = [lam]
    rel_floor = 1e-3 if p < 1.5 else 0.0
    # Sub-solves need not be tight: the eigenvalue converges long before they do.
    sub = SolverOptions(tol=1e-10, max_iter=20, method="newton")
    converged = False
    residual = math.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        obj = _Objective(p, h, energy_coef=1.0 / p, load=np.where(mask, u ** (q - 1), 0.0))
        w0 = u * lam ** (-1.0 / (p - 1))
        out = _newton(obj, w0, mask, 0.0, None, sub, rel_floor, linear_rtol=1e-8)
        w = out.x
        nrm = _lq_norm(w, q, h)
        if not nrm > 0:
            raise SolverError("inverse iteration collapsed to zero")
        u = w / nrm
        new = lat.energy(u, p, h)
        residual = abs(lam - new) / new
        lam = new
        hist.append(lam)
        if residual <= opts.eig_tol:
            converged = True
            break
    del dim
    return CapacityResult(lam, residual, it, converged, field=u, spacing=h, p=p,
                          method="inverse-iteration", history=tuple(hist))


def poincare_constant(omega: GridDomain, p: float, q: float | None = None,
                      opts: SolverOptions = DEFAULT) -> CapacityResult:
    """Sharp constant ``lambda_{p,q}`` of the Poincare-Sobolev inequality on ``omega``.

    Minimizes the lattice p-energy over fields vanishing outside the cells of
    ``omega`` with unit discrete L^q norm.  For ``p = q = 2`` this is the
    first eigenvalue of the 5-point (7-point) Dirichlet Laplacian.
    """
    q = p if q is None else float(q)
    if omega.is_empty():
        raise PreconditionError("empty domain")
    _check_p(p, omega.dim)
    if p == 1:
        raise PreconditionError("use cheeger_constant for p = 1")
    _check_q(p, q, omega.dim)
    mask = np.pad(omega.mask, 1)
    origin = tuple(o - omega.spacing for o in omega.origin)
    h = omega.spacing
    if p == 2 and q == 2:
        lam, u, res = _dirichlet_eigen(mask, h)
        u /= _lq_norm(u, 2, h)
        result = CapacityResult(lam, res, 1, True, field=u, spacing=h, origin=origin, p=2.0,
                                method="eigsh")
    else:
        start = None
        if q != 2 or p != 2:
            try:
                _, start, _ = _dirichlet_eigen(mask, h)
            except Exception:  # noqa: BLE001 - fall back to the distance-based start
                start = None
        result = _with_frame(_inverse_iteration(mask, p, q, h, opts, start), origin)
    if not result.converged:
        raise SolverError("Poincare iteration did not converge", result)
    return result


# ---------------------------------------------------------------------------
# Cheeger constant
# ---------------------------------------------------------------------------


def _opening_ratios(omega: GridDomain, steps: int = 24) -> list[tuple[float, float]]:
    """Perimeter/volume of openings of ``omega`` by balls, for a range of radii."""
    from skimage import measure

    h = omega.spacing
    mask = np.pad(omega.mask, 2)
    dist = ndimage.distance_transform_edt(mask)
    rmax = float(dist.max())
    out = []
    for rho in np.linspace(0.0, max(rmax - 1.0, 0.0), steps):
        core = dist > rho
        if not core.any():
            continue
        if rho > 0:
            opened = ndimage.distance_transform_edt(~core) <= rho
            opened &= mask
        else:
            opened = mask
        vol = float(opened.sum()) * h ** omega.dim
        # a one-cell blur removes the staircase, which inflates contour length by several percent
        img = ndimage.gaussian_filter(np.pad(opened, 3).astype(float), 1.0)
        if omega.dim == 2:
            per = sum(float(np.sum(np.linalg.norm(np.diff(c, axis=0), axis=1)))
                      for c in measure.find_contours(img, 0.5)) * h
        elif omega.dim == 3:
            verts, faces, _, _ = measure.marching_cubes(img, 0.5)
            per = float(measure.mesh_surface_area(verts, faces)) * h ** 2
        else:
            labels, n = ndimage.label(opened)
            per = 2.0 * n
        out.append((float(rho * h), per / vol))
    return out


def cheeger_constant(omega: GridDomain, opts: SolverOptions = DEFAULT,
                     ladder: Sequence[float] = EPS_LADDER) -> CapacityResult:
    """Cheeger constant from p-eigenvalues as p decreases to 1.

    Computes ``lambda_{1+eps}`` for ``eps`` in ``ladder`` and extrapolates to
    ``eps = 0``.  As an independent estimate, the minimum of perimeter over
    volume among openings of ``omega`` by balls (the Cheeger sets of convex
    planar domains are of this form) is reported; the bracket spans the two
    estimates.
    """
    if omega.is_empty():
        raise PreconditionError("empty domain")
    eps_list = sorted(set(ladder), reverse=True)
    vals = []
    start = None
    res = None
    for e in eps_list:
        mask = np.pad(omega.mask, 1)
        if start is None:
            _, start, _ = _dirichlet_eigen(mask, omega.spacing)
        res = _inverse_iteration(mask, 1.0 + e, 1.0 + e, omega.spacing, opts, start)
        if not res.converged:
            raise SolverError(f"p = {1 + e:g} eigenvalue iteration did not converge", res)
        start = res.field
        vals.append(res.value)
    value = extrapolate_to_one(eps_list, vals)
    p_min = 1.0 + eps_list[-1]
    cheeger_upper = p_min * vals[-1] ** (1.0 / p_min)
    notes = [f"upper bound h <= p lambda_p^(1/p) at p = {p_min:g}: {cheeger_upper:.6g}"]
    parts = [(f"lambda_{1 + e:g}", v) for e, v in zip(eps_list, vals)]
    cross = None
    if omega.dim >= 2:
        ratios = _opening_ratios(omega)
        if ratios:
            rho, cross = min(ratios, key=lambda t: t[1])
            notes.append(f"opening estimate {cross:.6g} at ball radius {rho:.4g}")
            parts.append(("opening_ratio", cross))
    parts.append(("hoelder_upper", cheeger_upper))
    lo, hi = (min(value, cross), max(value, cross)) if cross is not None else (value, cheeger_upper)
    return CapacityResult(value, res.residual, res.iterations, True, bracket=(lo, hi),
                          field=res.field, spacing=omega.spacing, p=1.0,
                          method="p-eigenvalue extrapolation", notes=tuple(notes),
                          parts=tuple(parts))


# ---------------------------------------------------------------------------
# Inhomogeneous and absolute capacities
# ---------------------------------------------------------------------------


def _diameter(domain: GridDomain) -> float:
    c = domain.cropped()
    return math.sqrt(sum((n * domain.spacing) ** 2 for n in c.shape))


def _inhomogeneous_arrays(sigma: np.ndarray, box: np.ndarray, p: float, h: float,
                          opts: SolverOptions) -> CapacityResult:
    dim = sigma.ndim
    free = box & ~sigma
    if p == 2:
        index = lat.make_index(free)
        A = lat.laplacian(index, h) + sp.identity(int(free.sum())) * h ** dim
        b = lat.neighbour_sum(sigma.astype(float))[free] * h ** (dim - 2)
        x = _solve_spd(A.tocsr(), b, dim)
        phi = sigma.astype(float)
        phi[free] = x
        value = lat.energy(phi, 2.0, h) + lat.mass(phi, 2.0, h)
        res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300))
        return CapacityResult(value, res, 1, field=phi, spacing=h, p=2.0, method="direct")
    start = sigma.astype(float)
    obj = _Objective(p, h, mass_coef=1.0)
    out = _minimize(obj, start, free, 0.0, 1.0, opts, 1e-3 if p < 1.5 else 0.0)
    value = lat.energy(out.x, p, h) + lat.mass(out.x, p, h)
    return CapacityResult(value, out.residual, out.iterations, out.converged, field=out.x,
                          spacing=h, p=p, method=opts.method, history=tuple(out.history))


def inhomogeneous_capacity(sigma: GridDomain, p: float, margin: float | None = None,
                           opts: SolverOptions = DEFAULT) -> CapacityResult:
    """Inhomogeneous capacity: minimal ``int |grad phi|^p + int |phi|^p`` with ``phi = 1`` on sigma.

    Fields vanish outside a box around ``sigma`` of the given ``margin``
    (default ``max(diameter, 2)``).  The solve is repeated on a box with 1.5
    times the margin; the bracket holds both values and ``value`` is the one
    on the larger box.
    """
    _check_p(p, sigma.dim)
    if sigma.is_empty():
        return CapacityResult(0.0, 0.0, 0, p=p, method="empty", bracket=(0.0, 0.0))
    diam = _diameter(sigma)
    margin = max(diam, 2.0) if margin is None else float(margin)
    notes = []
    if margin < diam:
        notes.append(f"warning: margin {margin:g} is below the diameter {diam:.4g} of Sigma")
    core = sigma.cropped()
    h = core.spacing
    values = []
    res = None
    for m in (margin, 1.5 * margin):
        cells = int(math.ceil(m / h))
        s = np.pad(core.mask, cells + 1)
        box = np.pad(np.ones(tuple(n + 2 * cells for n in core.shape), bool), 1)
        if p == 1:
            ladder_vals = []
            eps_list = list(EPS_LADDER)
            for e in eps_list:
                ladder_vals.append(_inhomogeneous_arrays(s, box, 1.0 + e, h, opts).value)
            val = extrapolate_to_one(eps_list, ladder_vals)
            res = CapacityResult(val, 0.0, 0, p=1.0, method="smoothed p=1+eps")
        else:
            res = _inhomogeneous_arrays(s, box, p, h, opts)
            if not res.converged:
                raise SolverError("inhomogeneous capacity did not converge", res)
        values.append(res.value)
    origin = tuple(o - (int(math.ceil(1.5 * margin / h)) + 1) * h for o in core.origin)
    return CapacityResult(values[-1], res.residual, res.iterations, True,
                          bracket=(min(values), max(values)), field=res.field, spacing=h,
                          origin=origin, p=p, method=res.method, notes=tuple(notes),
                          parts=(("margin", margin), ("value_small_box", values[0]),
                                 ("value_large_box", values[1])))


def _ball_frame(core: GridDomain, R: float) -> tuple[np.ndarray, np.ndarray, tuple[float, ...]]:
    """Sigma and the lattice ball ``B_R`` about the middle cell of ``core`` on one array."""
    h = core.spacing
    mid = np.asarray(core.shape) // 2
    Rc = R / h
    ball = lattice_ball(Rc, closed=False, dim=core.dim)
    half = ball.shape[0] // 2
    pad = half + 2
    shape = tuple(max(n, 0) for n in core.shape)
    size = tuple(2 * pad + 1 for _ in shape)
    s = np.zeros(size, bool)
    E = np.zeros(size, bool)
    start = [pad - int(m) for m in mid]
    if any(st < 0 or st + n > sz for st, n, sz in zip(start, shape, size)):
        raise PreconditionError("Sigma does not fit inside the requested ball")
    s[tuple(slice(st, st + n) for st, n in zip(start, shape))] = core.mask
    E[tuple(slice(2, 2 + 2 * half + 1) for _ in shape)] = ball
    origin = tuple(o - st * h for o, st in zip(core.origin, start))
    return s, E, origin


def absolute_capacity(sigma: GridDomain, p: float, R0: float | None = None,
                      schedule: Sequence[float] = (1.0, 2.0, 4.0),
                      opts: SolverOptions = DEFAULT,
                      ctx: ConstantsContext | None = None) -> CapacityResult:
    """Absolute p-capacity from relative capacities in growing balls.

    Relative capacities are computed in ``B_R`` for ``R = s * R0`` along
    ``schedule`` (``R0`` defaults to twice the radius of the ball about the
    middle cell that holds ``sigma``).  For balls, ``cap(B_r; B_R)^(-1/(p-1))``
    is affine in ``R^(-(N-p)/(p-1))``; ``value`` extrapolates the last two
    schedule values along that law.  The bracket runs from the last value
    divided by the absolute-versus-relative sandwich factor up to the last
    value.
    """
    N = sigma.dim
    _check_p(p, N)
    if not (p < N or p == N == 1):
        raise PreconditionError("restriction p<N is unavoidable: absolute capacities vanish for p = N >= 2")
    if sigma.is_empty():
        return CapacityResult(0.0, 0.0, 0, p=p, method="empty", bracket=(0.0, 0.0))
    core = sigma.cropped()
    h = core.spacing
    mid_center = core.center_of(np.asarray(core.shape) // 2)
    pts = core.centers()[core.mask]
    rho = float(np.max(np.linalg.norm(pts - mid_center, axis=-1))) + h
    R0 = 2.0 * rho if R0 is None else float(R0)
    radii = [R0 * float(s) for s in schedule]
    if min(radii) <= rho + h:
        raise PreconditionError("the smallest ball of the schedule must contain Sigma with a gap")
    values = []
    res = None
    origin: tuple[float, ...] = core.origin
    for R in radii:
        s, E, origin = _ball_frame(core, R)
        if p == 1:
            res = _p_one_capacity(s, E, h, opts, EPS_LADDER) if N > 1 else capacity_arrays(s, E, 1.0, h, opts)
        else:
            res = capacity_arrays(s, E, p, h, opts)
        if not res.converged:
            raise SolverError("capacity minimization did not converge", res)
        values.append(res.value)
    last = values[-1]
    if p == 1 or len(values) < 2:
        value = last
    else:
        k = (N - p) / (p - 1)
        y1, y2 = values[-2] ** (-1 / (p - 1)), values[-1] ** (-1 / (p - 1))
        r1, r2 = radii[-2] ** -k, radii[-1] ** -k
        y_inf = y2 + (y2 - y1) * r2 / (r1 - r2)
        value = y_inf ** (-(p - 1)) if y_inf > 0 else last
    ctx = ctx or ConstantsContext(N, p)
    vol = float(lattice_ball(radii[-1] / h, closed=False, dim=N).sum()) * h ** N
    factor = absolute_sandwich_factor(ctx, vol, radii[-1] - rho)
    lower = last / factor
    value = min(max(value, lower), last)
    return CapacityResult(value, res.residual, res.iterations, True, bracket=(lower, last),
                          field=res.field, spacing=h, origin=origin, p=p,
                          method="ball schedule with extrapolation",
                          parts=tuple((f"R={R:.6g}", v) for R, v in zip(radii, values)))


# ---------------------------------------------------------------------------
# Serializable problem records
# ---------------------------------------------------------------------------


def encode_domain(d: GridDomain) -> dict[str, Any]:
    return {"shape": list(d.shape), "spacing": d.spacing, "origin": list(d.origin),
            "bits": base64.b64encode(np.packbits(d.mask.ravel()).tobytes()).decode()}


def decode_domain(doc: dict[str, Any]) -> GridDomain:
    shape = tuple(int(n) for n in doc["shape"])
    bits = np.frombuffer(base64.b64decode(doc["bits"]), dtype=np.uint8)
    mask = np.unpackbits(bits)[: int(np.prod(shape))].astype(bool).reshape(shape)
    return GridDomain(mask, float(doc["spacing"]), tuple(doc["origin"]))


KINDS = ("relative_capacity", "inhomogeneous_capacity", "absolute_capacity", "poincare", "cheeger")


@dataclass(frozen=True, eq=False)
class VariationalProblem:
    """A solver job: the problem kind, its domains and exponents."""

    kind: str
    grids: tuple[GridDomain, ...]
    p: float = 2.0
    q: float | None = None
    tolerance: float = 1e-7
    max_iterations: int = 200
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        need = 2 if self.kind == "relative_capacity" else 1
        if len(self.grids) != need:
            raise ValueError(f"{self.kind} takes {need} grid(s)")

    def solve(self) -> CapacityResult:
        opts = SolverOptions(tol=self.tolerance, max_iter=self.max_iterations)
        if self.kind == "relative_capacity":
            return relative_capacity(self.grids[0], self.grids[1], self.p, opts)
        if self.kind == "inhomogeneous_capacity":
            return inhomogeneous_capacity(self.grids[0], self.p, self.options.get("margin"), opts)
        if self.kind == "absolute_capacity":
            return absolute_capacity(self.grids[0], self.p, opts=opts)
        if self.kind == "poincare":
            return poincare_constant(self.grids[0], self.p, self.q, opts)
        return cheeger_constant(self.grids[0], opts)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "p": self.p, "q": self.q, "tolerance": self.tolerance,
                "max_iterations": self.max_iterations, "options": dict(self.options),
                "grids": [encode_domain(g) for g in self.grids]}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "VariationalProblem":
        return cls(doc["kind"], tuple(decode_domain(g) for g in doc["grids"]), float(doc["p"]),
                   doc.get("q"), float(doc.get("tolerance", 1e-7)),
                   int(doc.get("max_iterations", 200)), dict(doc.get("options", {})))


__all__ = [
    "CapacityResult", "SolverOptions", "SolverError", "PreconditionError", "VariationalProblem",
    "relative_capacity", "poincare_constant", "inhomogeneous_capacity", "absolute_capacity",
    "cheeger_constant", "capacity_arrays", "extrapolate_to_one", "ShapeError",
]
