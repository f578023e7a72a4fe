"""Capacitary inradii, negligibility tests and measure-density indices.

A ball ``B_r(x0)`` is (p, gamma)-negligible for ``Omega`` when the relative
p-capacity of ``closed B_r(x0) minus Omega`` inside ``B_2r(x0)`` is at most
``gamma`` times that of the full closed ball.  The capacitary inradius is the
largest such ``r``.  On the lattice, centers are cell centers on a strided
sub-lattice and radii are whole numbers of cells; one search trace serves all
requested ``gamma`` values, so the estimates are monotone in ``gamma`` by
construction.

Each (center, radius) pair is settled as cheaply as possible: empty
differences pass, differences covering the whole ball reuse one cached solve,
translates and lattice-symmetric copies of an already solved difference reuse
its value, lower bounds (measure and inscribed-ball) discard pairs that
cannot pass any undecided ``gamma``, and a subadditive upper bound certifies
small differences before the full solve is attempted.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import ndimage, signal

from . import solver
from .analytic import ConstantsContext, cap_ball_absolute, cap_ball_relative
from .shapes import (GridDomain, Shape, StandardBody, UnderResolvedError, classical_inradius,
                     distance_to_complement)

PRUNE_SAFETY = 0.8
"""Factor applied to continuum ball-capacity lower bounds before pruning with them."""

MIN_RADIUS_CELLS = 4


class InradiusError(RuntimeError):
    """Internal inconsistency in an inradius search."""


class DensityIndexError(ValueError):
    """Density indices are undefined (no boundary inside the box)."""


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NegligibilityReport:
    """Outcome of one negligibility test at ``center`` and radius ``radius``."""

    center: tuple[float, ...]
    radius: float
    p: float
    gamma: float
    lhs: float
    rhs: float
    negligible: bool
    status: str = "exact"
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else math.inf

    def to_dict(self) -> dict[str, Any]:
        return {"center": list(self.center), "radius": self.radius, "p": self.p,
                "gamma": self.gamma, "lhs": self.lhs, "rhs": self.rhs,
                "negligible": self.negligible, "status": self.status,
                "diagnostics": dict(self.diagnostics)}


@dataclass(frozen=True)
class TraceEntry:
    """One evaluated (radius, center) pair.

    ``status`` says how ``ratio`` (lhs/rhs) was obtained: ``exact`` solve,
    ``empty`` difference, ``full`` ball, ``lower`` bound (the true ratio is at
    least this) or ``upper`` bound (at most this).
    """

    radius: float
    center: tuple[float, ...]
    status: str
    ratio: float

    def to_dict(self) -> dict[str, Any]:
        return {"radius": self.radius, "center": list(self.center), "status": self.status,
                "ratio": self.ratio if math.isfinite(self.ratio) else None}


@dataclass(frozen=True)
class InradiusEstimate:
    """Bracketed inradius estimate.

    ``value`` is the largest tested radius that passed (never below the
    classical inradius), ``upper`` the smallest tested radius above it that
    failed (``inf`` when none failed: the estimate is at least the box scale).
    """

    which: str
    value: float
    lower: float
    upper: float
    p: float | None
    gamma: float | None
    spacing: float
    center: tuple[float, ...] | None = None
    body: str | None = None
    trace: tuple[TraceEntry, ...] = ()
    notes: tuple[str, ...] = ()
    classical: float | None = None

    @property
    def bracket(self) -> tuple[float, float]:
        return (self.lower, self.upper)

    def to_dict(self, with_trace: bool = True) -> dict[str, Any]:
        out = {"which": self.which, "value": self.value, "lower": self.lower,
               "upper": self.upper if math.isfinite(self.upper) else None,
               "at_least_box_scale": not math.isfinite(self.upper),
               "p": self.p, "gamma": self.gamma, "spacing": self.spacing,
               "center": list(self.center) if self.center is not None else None,
               "body": self.body, "classical": self.classical, "notes": list(self.notes)}
        if with_trace:
            out["trace"] = [t.to_dict() for t in self.trace]
        return out


# ---------------------------------------------------------------------------
# Local lattice helpers
# ---------------------------------------------------------------------------


def _window(mask: np.ndarray, idx: Sequence[int], half: int) -> np.ndarray:
    """Cells ``idx - half .. idx + half`` of ``mask``; False beyond its bounds."""
    out = np.zeros((2 * half + 1,) * mask.ndim, bool)
    src, dst = [], []
    for i, n in zip(idx, mask.shape):
        lo, hi = i - half, i + half + 1
        s0, s1 = max(lo, 0), min(hi, n)
        if s0 >= s1:
            return out
        src.append(slice(s0, s1))
        dst.append(slice(s0 - lo, s1 - lo))
    out[tuple(dst)] = mask[tuple(src)]
    return out


def _offsets2(half: int, dim: int) -> np.ndarray:
    ax = np.arange(-half, half + 1)
    grids = np.meshgrid(*([ax] * dim), indexing="ij")
    return sum(g.astype(np.int64) ** 2 for g in grids)


def _symmetries(arr: np.ndarray) -> list[np.ndarray]:
    """All images of a cubic array under the hyperoctahedral group."""
    out = []
    dim = arr.ndim
    for perm in itertools.permutations(range(dim)):
        t = np.transpose(arr, perm)
        for flips in itertools.product((False, True), repeat=dim):
            axes = tuple(a for a, f in enumerate(flips) if f)
            out.append(np.flip(t, axes) if axes else t)
    return out


def _key(arr: np.ndarray, symmetric: bool) -> bytes:
    images = _symmetries(arr) if symmetric else [arr]
    return min(hashlib.sha1(np.packbits(np.ascontiguousarray(a)).tobytes()).digest()
               for a in images)


def _discrete_cube_eigenvalue(n: int, dim: int, h: float) -> float:
    """First Dirichlet eigenvalue of the lattice Laplacian on a cube of ``n`` cells per side."""
    return dim * 4.0 / h ** 2 * math.sin(math.pi / (2 * (n + 1))) ** 2


def _effective_p(p: float, dim: int, opts: solver.SolverOptions) -> float:
    """Exponent actually minimized: p = 1 is smoothed except in one dimension."""
    return 1.0 + opts.eps if (p == 1 and dim > 1) else p


# ---------------------------------------------------------------------------
# Negligibility evaluation
# ---------------------------------------------------------------------------


class _Evaluator:
    """Caches per-radius data and settles (center, radius) pairs."""

    def __init__(self, omega: GridDomain, p: float, kind: str = "relative",
                 body: StandardBody | None = None,
                 opts: solver.SolverOptions = solver.DEFAULT,
                 ms_schedule: Sequence[float] = (1.0, 2.0)) -> None:
        if kind not in ("relative", "body", "absolute"):
            raise ValueError(f"unknown negligibility kind {kind!r}")
        if kind == "body" and body is None:
            raise ValueError("body kind needs a StandardBody")
        self.omega = omega
        self.mask = omega.mask
        self.h = omega.spacing
        self.dim = omega.dim
        self.p = p
        self.kind = kind
        self.body = body
        self.opts = solver.SolverOptions(tol=opts.tol, eig_tol=opts.eig_tol, max_iter=opts.max_iter,
                                         method=opts.method, eps=opts.eps, window=opts.window,
                                         keep_field=False)
        self.p_eff = _effective_p(p, self.dim, opts)
        self.ctx = ConstantsContext(self.dim, self.p_eff)
        self.R_K = body.R if body is not None else 1.0
        self.ms_schedule = tuple(ms_schedule)
        self.symmetric = kind != "body"
        self._radius: dict[int, dict[str, Any]] = {}
        self._cache: dict[tuple[int, bytes], float] = {}
        self._block_cache: dict[tuple[int, float, bytes], float] = {}
        self.solves = 0

    # -- per-radius data -------------------------------------------------

    def half(self, k: int) -> int:
        return int(math.ceil(2 * k * self.R_K)) + 2

    def radius_data(self, k: int) -> dict[str, Any]:
        if k in self._radius:
            return self._radius[k]
        if k < MIN_RADIUS_CELLS:
            raise UnderResolvedError(f"radius of {k} cells is under-resolved (need >= {MIN_RADIUS_CELLS})")
        h, dim = self.h, self.dim
        half = self.half(k)
        if self.kind == "body":
            ax = np.arange(-half, half + 1) * h
            pts = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1)
            inner = self.body.contains(pts, scale=k * h, closed=True)
            outer = self.body.contains(pts, scale=2 * k * h, closed=False)
            gap = self.body.inner_gap * k * h
            if gap < h:
                raise UnderResolvedError("body gap between the r and 2r copies is below one cell")
        else:
            d2 = _offsets2(half, dim)
            inner = d2 <= k * k
            outer = d2 < 4 * k * k
        data: dict[str, Any] = {"half": half, "inner": inner, "outer": outer}
        r = k * h
        if self.kind == "relative":
            data["rhs"] = cap_ball_relative(self.ctx, r, 2 * r)
        elif self.kind == "absolute":
            data["rhs"] = cap_ball_absolute(self.ctx, r)
        else:
            data["rhs"] = solver.capacity_arrays(inner, outer, self.p_eff, h, self.opts).value
            self.solves += 1
        n_cube = 2 * (half - 2) + 1
        data["lam_lb"] = (_discrete_cube_eigenvalue(n_cube, dim, h) if self.p_eff == 2 else
                          PRUNE_SAFETY * (dim / (self.p_eff * 2 * r * self.R_K)) ** self.p_eff)
        self._radius[k] = data
        data["full"] = self._lhs(inner, data) / data["rhs"]
        return data

    # -- capacities ------------------------------------------------------

    def _lhs(self, sigma: np.ndarray, data: dict[str, Any]) -> float:
        self.solves += 1
        if self.kind == "absolute":
            dom = GridDomain(sigma, self.h, (0.0,) * self.dim)
            res = solver.absolute_capacity(dom, self.p_eff, schedule=self.ms_schedule, opts=self.opts,
                                           ctx=ConstantsContext(self.dim, self.p_eff))
            return res.value
        res = solver.capacity_arrays(sigma, data["outer"], self.p_eff, self.h, self.opts, check=False)
        if not res.converged:
            raise solver.SolverError("local capacity solve did not converge", res)
        return res.value

    def _lower_bound(self, sigma: np.ndarray, data: dict[str, Any], outer_cells: float,
                     lam_lb: float) -> float:
        """Cheap lower bound on the ratio: measure bound and inscribed-ball bound.

        ``sigma`` sits in a window centered on the test center and the
        reference set lies inside the ball of ``outer_cells`` about it.
        """
        h, dim = self.h, self.dim
        n = int(sigma.sum())
        if self.kind == "absolute":
            vol = n * h ** dim
            meas = vol ** ((dim - self.p_eff) / dim) / self.ctx.S if self.p_eff < dim else 0.0
            lb = PRUNE_SAFETY * meas
        else:
            lb = n * h ** dim * lam_lb
        dist = ndimage.distance_transform_edt(np.pad(sigma, 1))[tuple(slice(1, -1) for _ in range(dim))]
        idx = np.unravel_index(int(np.argmax(dist)), dist.shape)
        rho = float(dist[idx]) - 0.5
        if rho >= 2:
            if self.kind == "absolute":
                ball = cap_ball_absolute(self.ctx, rho * h)
            else:
                mid = (sigma.shape[0] - 1) / 2
                offset = math.sqrt(sum((i - mid) ** 2 for i in idx))
                ball = cap_ball_relative(self.ctx, rho * h, (offset + outer_cells) * h)
            lb = max(lb, PRUNE_SAFETY * ball)
        return lb / data["rhs"]

    def block_lower(self, members: np.ndarray, k: int,
                    threshold: float = math.inf) -> tuple[float, tuple[int, ...]]:
        """Lower bound on the ratio valid for every center in ``members`` (ball kinds only).

        With pivot ``x0`` and ``s`` the largest member distance to it, every
        member's difference set contains ``closed B_(r-s)(x0) minus Omega`` and
        every member's reference ball lies in ``B_(2r+s)(x0)``; monotonicity of
        the lattice capacity in both arguments gives the bound.
        """
        data = self.radius_data(k)
        lo, hi = members.min(axis=0), members.max(axis=0)
        pivot = tuple(int(v) for v in np.floor((lo + hi) / 2))
        s = float(np.sqrt(((members - np.asarray(pivot)) ** 2).sum(axis=1)).max())
        k_in = k - s
        if k_in < 1:
            return 0.0, pivot
        k_out = 2 * k + s
        half = int(math.ceil(k_out)) + 2
        d2 = _offsets2(half, self.dim)
        sigma = (d2 <= k_in * k_in) & ~_window(self.mask, pivot, half)
        if not sigma.any():
            return 0.0, pivot
        outer = d2 < k_out * k_out
        lam = _discrete_cube_eigenvalue(2 * int(math.ceil(k_out)) + 1, self.dim, self.h) \
            if self.p_eff == 2 else PRUNE_SAFETY * (self.dim / (self.p_eff * k_out * self.h)) ** self.p_eff
        cheap = self._lower_bound(sigma, data, k_out, lam)
        if cheap > threshold:
            return cheap, pivot
        key = (k, round(s, 9), _key(sigma, self.symmetric))
        if key in self._block_cache:
            return self._block_cache[key], pivot
        self.solves += 1
        res = solver.capacity_arrays(sigma, outer, self.p_eff, self.h, self.opts, check=False)
        value = max(res.value / data["rhs"], cheap, 0.0)
        self._block_cache[key] = value
        return value, pivot

    def _upper_bound(self, sigma: np.ndarray, data: dict[str, Any], k: int) -> float | None:
        """Subadditive bound: each component of sigma solved in a small neighbourhood inside E."""
        if self.kind == "absolute":
            return None
        labels, count = ndimage.label(sigma, structure=np.ones((3,) * self.dim, bool))
        if count == 0 or count > 24:
            return None
        margin = min(8, k)
        outer = data["outer"]
        total, size = 0.0, 0
        for j, sl in enumerate(ndimage.find_objects(labels), start=1):
            box = tuple(slice(max(s.start - margin - 1, 0), min(s.stop + margin + 1, n))
                        for s, n in zip(sl, sigma.shape))
            comp = labels[box] == j
            near = ndimage.distance_transform_edt(~comp) <= margin
            dom = outer[box] & near
            size += int(dom.sum())
            if size > outer.sum() // 4:
                return None
            c, d = np.pad(comp, 1), np.pad(dom, 1)
            grown = ndimage.binary_dilation(c, structure=np.ones((3,) * self.dim, bool))
            if not np.all(d[grown]):
                return None
            total += solver.capacity_arrays(c, d, self.p_eff, self.h, self.opts, check=False).value
            self.solves += 1
        return total / data["rhs"]

    # -- public ----------------------------------------------------------

    def sigma(self, idx: Sequence[int], k: int) -> np.ndarray:
        data = self.radius_data(k)
        return data["inner"] & ~_window(self.mask, idx, data["half"])

    def exact_ratio(self, idx: Sequence[int], k: int) -> tuple[float, str]:
        data = self.radius_data(k)
        sig = self.sigma(idx, k)
        if not sig.any():
            return 0.0, "empty"
        if np.array_equal(sig, data["inner"]):
            return data["full"], "full"
        key = (k, _key(sig, self.symmetric))
        if key not in self._cache:
            self._cache[key] = self._lhs(sig, data) / data["rhs"]
        return self._cache[key], "exact"

    def settle(self, idx: Sequence[int], k: int, undecided: Sequence[float]) -> tuple[float, str]:
        """Ratio information for one pair, just precise enough for the ``undecided`` gammas."""
        data = self.radius_data(k)
        sig = self.sigma(idx, k)
        if not sig.any():
            return 0.0, "empty"
        if np.array_equal(sig, data["inner"]):
            return data["full"], "full"
        key = (k, _key(sig, self.symmetric))
        if key in self._cache:
            return self._cache[key], "exact"
        lb = self._lower_bound(sig, data, 2 * k * self.R_K, data["lam_lb"])
        if lb > max(undecided):
            return lb, "lower"
        ub = self._upper_bound(sig, data, k)
        if ub is not None and ub <= min(undecided):
            return ub, "upper"
        self._cache[key] = self._lhs(sig, data) / data["rhs"]
        return self._cache[key], "exact"


def negligibility_test(omega: GridDomain, center: Sequence[float], r: float, p: float,
                       gamma: float, body: StandardBody | None = None, kind: str | None = None,
                       opts: solver.SolverOptions = solver.DEFAULT) -> NegligibilityReport:
    """Test whether ``closed B_r(center) minus omega`` is (p, gamma)-negligible.

    ``center`` is snapped to the nearest cell center and ``r`` to a whole
    number of cells (at least four).  With a ``body`` the ball is replaced by
    the body dilated by ``r``; ``kind="absolute"`` uses absolute capacities on
    both sides.  The right-hand side is the closed form for balls and a
    lattice solve for bodies.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    kind = kind or ("body" if body is not None else "relative")
    ev = _Evaluator(omega, p, kind, body, opts)
    k = int(round(r / omega.spacing))
    idx = omega.index_of(center)
    ratio, status = ev.exact_ratio(idx, k)
    data = ev.radius_data(k)
    rhs = gamma * data["rhs"]
    lhs = ratio * data["rhs"]
    return NegligibilityReport(tuple(float(v) for v in omega.center_of(idx)), k * omega.spacing, p,
                               gamma, lhs, rhs, lhs <= rhs, status,
                               {"p_effective": ev.p_eff, "reference": data["rhs"],
                                "solves": ev.solves})


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


@dataclass
class _RadiusOutcome:
    k: int
    passed: set[float]
    best: float
    best_center: tuple[int, ...] | None


class InradiusSearch:
    """Shared-trace search for the capacitary inradius at several gammas.

    Parameters
    ----------
    omega:
        The domain.
    p:
        Capacity exponent.
    gammas:
        Negligibility thresholds in (0, 1).
    kind:
        ``"relative"`` (balls), ``"body"`` (standard body) or ``"absolute"``
        (Maz'ya-Shubin test with absolute capacities).
    stride:
        Center sub-lattice stride in cells.
    r_max:
        Largest radius swept (default: the diameter of the occupied box).
    centers:
        Explicit candidate centers (points), replacing the strided lattice.
    radius_step:
        Bisection stops when pass and fail radii are this many cells apart.
    """

    def __init__(self, omega: GridDomain, p: float, gammas: Sequence[float], kind: str = "relative",
                 body: StandardBody | None = None, stride: int = 2, r_max: float | None = None,
                 centers: Sequence[Sequence[float]] | None = None, radius_step: int = 1,
                 opts: solver.SolverOptions = solver.DEFAULT,
                 ms_schedule: Sequence[float] = (1.0, 2.0)) -> None:
        if not 1 <= p <= omega.dim:
            raise solver.PreconditionError(f"exponent p = {p} outside [1, N]")
        gammas = sorted({float(g) for g in gammas})
        if not gammas or not all(0 < g < 1 for g in gammas):
            raise ValueError("gammas must lie in (0, 1)")
        if stride < 1 or radius_step < 1:
            raise ValueError("stride and radius_step must be positive")
        self.omega = omega
        self.p = p
        self.gammas = gammas
        self.kind = kind
        self.body = body
        self.stride = stride
        self.radius_step = radius_step
        self.ev = _Evaluator(omega, p, kind, body, opts, ms_schedule)
        self.h = omega.spacing
        self.classical = classical_inradius(omega)
        crop = omega.cropped()
        diam = math.sqrt(sum((n * self.h) ** 2 for n in crop.shape)) if not omega.is_empty() else 0.0
        self.r_max = float(r_max) if r_max is not None else max(diam, 2 * self.classical.value, MIN_RADIUS_CELLS * self.h)
        self.explicit = None if centers is None else [omega.index_of(c) for c in centers]
        self.outcomes: dict[int, _RadiusOutcome] = {}
        self.trace: list[TraceEntry] = []
        self._inside = distance_to_complement(omega) / self.h if not omega.is_empty() else None

    # -- centers ---------------------------------------------------------

    def _argmax_index(self) -> tuple[int, ...] | None:
        if self.classical.center is None:
            return None
        return self.omega.index_of(self.classical.center)

    def _centers(self, k: int) -> list[tuple[int, ...]]:
        if self.explicit is not None:
            cands = list(dict.fromkeys(self.explicit))
        else:
            reach = int(math.ceil(k * self.ev.R_K))
            axes = []
            for n in self.omega.shape:
                lo = -reach - ((-reach) % self.stride)
                axes.append(np.arange(lo, n + reach + 1, self.stride))
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.omega.dim)
            # distance (cells) from each candidate to the nearest occupied cell
            pad = reach + 1
            padded = np.pad(self.omega.mask, pad)
            out_dist = ndimage.distance_transform_edt(~padded)
            gi = grid + pad
            d_out = out_dist[tuple(gi.T)]
            near = d_out <= reach
            cands = [tuple(int(v) for v in row) for row in grid[near]]
            far = grid[~near]
            if len(far):
                cands.append(tuple(int(v) for v in far[0]))
            am = self._argmax_index()
            if am is not None:
                cands.append(am)
            cands = list(dict.fromkeys(cands))
        return sorted(cands, key=lambda c: (self._order_key(c), c))

    def _order_key(self, idx: tuple[int, ...]) -> float:
        inside = self._inside
        if inside is not None and all(0 <= i < n for i, n in zip(idx, self.omega.shape)):
            v = float(inside[idx])
            if v > 0:
                return -v
        return 0.0

    # -- radius evaluation ----------------------------------------------

    def _block_side(self, k: int) -> int:
        """Largest stride multiple whose block half-diagonal stays below ``k / 6``."""
        side = self.stride
        while 0.5 * (2 * side) * math.sqrt(self.omega.dim) <= k / 6:
            side *= 2
        return side

    def _branch_and_bound(self, k: int, centers: list[tuple[int, ...]], side: int,
                          passed: set[float], settle: Any) -> None:
        """Best-first search over blocks of centers, discarding blocks whose
        common lower bound exceeds every undecided threshold."""
        r = k * self.h
        rank = {c: i for i, c in enumerate(centers)}
        pts = np.asarray(centers)

        def split(members: np.ndarray, size: int) -> list[np.ndarray]:
            keys = np.floor_divide(members, size)
            _, inv = np.unique(keys, axis=0, return_inverse=True)
            inv = np.asarray(inv).reshape(-1)
            return [members[inv == j] for j in range(int(inv.max()) + 1)]

        heap: list[tuple[float, int, int, int, np.ndarray]] = []
        counter = 0
        for block in split(pts, side):
            first = min(rank[tuple(int(v) for v in row)] for row in block)
            heap.append((-1.0, first, counter, side, block))
            counter += 1
        heapq.heapify(heap)
        while heap and len(passed) < len(self.gammas):
            key, _, _, size, block = heapq.heappop(heap)
            threshold = max(g for g in self.gammas if g not in passed)
            if key > threshold:
                break
            if len(block) == 1:
                settle(tuple(int(v) for v in block[0]))
                continue
            lb, pivot = self.ev.block_lower(block, k, threshold)
            if lb > threshold:
                point = tuple(float(v) for v in self.omega.center_of(pivot))
                self.trace.append(TraceEntry(r, point, "lower", float(lb)))
                continue
            half = max(size // 2, 1)
            for child in split(block, half):
                first = min(rank[tuple(int(v) for v in row)] for row in child)
                heapq.heappush(heap, (lb, first, counter, half, child))
                counter += 1

    def evaluate(self, k: int) -> _RadiusOutcome:
        if k in self.outcomes:
            return self.outcomes[k]
        passed: set[float] = set()
        best: list[Any] = [math.inf, None]
        r = k * self.h
        centers = self._centers(k)

        def settle(idx: tuple[int, ...]) -> None:
            undecided = [g for g in self.gammas if g not in passed]
            ratio, status = self.ev.settle(idx, k, undecided)
            point = tuple(float(v) for v in self.omega.center_of(idx))
            self.trace.append(TraceEntry(r, point, status, float(ratio)))
            if status != "lower":
                passed.update(g for g in undecided if ratio <= g)
                if ratio < best[0]:
                    best[0], best[1] = ratio, idx

        side = self._block_side(k)
        if self.ev.kind == "body" or side <= self.stride or len(centers) < 2:
            for idx in centers:
                if len(passed) == len(self.gammas):
                    break
                settle(idx)
        else:
            self._branch_and_bound(k, centers, side, passed, settle)
        out = _RadiusOutcome(k, passed, best[0], best[1])
        self.outcomes[k] = out
        return out

    # -- driver ----------------------------------------------------------

    def _sweep_radii(self) -> list[int]:
        k = int(math.floor(self.r_max / self.h + 1e-9))
        if k < MIN_RADIUS_CELLS:
            raise UnderResolvedError(f"largest radius is {k} cells (need >= {MIN_RADIUS_CELLS})")
        out = []
        floor_k = self.classical.value / self.h
        while k >= MIN_RADIUS_CELLS and k > floor_k:
            out.append(k)
            nxt = int(math.floor(k * 2 ** -0.25))
            k = min(nxt, k - 1)
        return out

    def _bracket(self, g: float) -> tuple[float, float, tuple[int, ...] | None]:
        lo = self.classical.value
        center = self._argmax_index()
        for k, o in self.outcomes.items():
            if g in o.passed and k * self.h > lo:
                lo, center = k * self.h, o.best_center
        fails = [k * self.h for k, o in self.outcomes.items() if g not in o.passed and k * self.h > lo]
        return lo, (min(fails) if fails else math.inf), center

    def run(self) -> dict[float, InradiusEstimate]:
        for k in self._sweep_radii():
            self.evaluate(k)
        for g in self.gammas:
            while True:
                lo, hi, _ = self._bracket(g)
                if not math.isfinite(hi):
                    break
                lo_k, hi_k = lo / self.h, round(hi / self.h)
                if hi_k - lo_k <= self.radius_step:
                    break
                mid = int(math.floor((lo_k + hi_k) / 2))
                if mid <= lo_k or mid >= hi_k or mid < MIN_RADIUS_CELLS or mid in self.outcomes:
                    break
                self.evaluate(mid)
        self.trace.sort(key=lambda t: (t.radius, t.center))
        return {g: self.estimate(g) for g in self.gammas}

    def estimate(self, g: float) -> InradiusEstimate:
        lo, hi, center = self._bracket(g)
        notes = []
        if not math.isfinite(hi):
            notes.append("no failing radius up to the largest tested radius: estimate is at least the box scale")
        if self.ev.p_eff != self.p:
            notes.append(f"p = 1 capacities evaluated at p = {self.ev.p_eff:g}")
        which = {"relative": "R_p,gamma", "body": "R_p,gamma;K", "absolute": "MS"}[self.kind]
        pt = tuple(float(v) for v in self.omega.center_of(center)) if center is not None else None
        return InradiusEstimate(which, lo, lo, hi, self.p, g, self.h, pt,
                                self.body.name if self.body is not None else None,
                                tuple(self.trace), tuple(notes), self.classical.value)


def capacitary_inradius(omega: GridDomain, p: float, gamma: float, **kwargs: Any) -> InradiusEstimate:
    """Capacitary inradius ``R_{p,gamma}``; keyword arguments go to :class:`InradiusSearch`."""
    return InradiusSearch(omega, p, [gamma], **kwargs).run()[float(gamma)]


def capacitary_inradius_body(omega: GridDomain, body: StandardBody, p: float, gamma: float,
                             **kwargs: Any) -> InradiusEstimate:
    """Capacitary inradius relative to a standard body."""
    return InradiusSearch(omega, p, [gamma], kind="body", body=body, **kwargs).run()[float(gamma)]


def ms_inradius(omega: GridDomain, p: float, gamma: float, **kwargs: Any) -> InradiusEstimate:
    """Maz'ya-Shubin inradius: negligibility measured with absolute capacities."""
    N = omega.dim
    if not (p < N or p == N == 1):
        raise solver.PreconditionError("restriction p<N is unavoidable: absolute capacities vanish for p = N >= 2")
    return InradiusSearch(omega, p, [gamma], kind="absolute", **kwargs).run()[float(gamma)]


GALLAGHER_GAMMAS = tuple(2.0 ** -j for j in range(1, 9))


def capacitary_inradius_ladder(omega: GridDomain, p: float,
                               gammas: Sequence[float] = GALLAGHER_GAMMAS,
                               **kwargs: Any) -> list[InradiusEstimate]:
    """``R_{p,gamma}`` for several gammas on one shared trace, in decreasing gamma order."""
    res = InradiusSearch(omega, p, gammas, **kwargs).run()
    return [res[g] for g in sorted(res, reverse=True)]


def gallagher_inradius(omega: GridDomain, p: float, gammas: Sequence[float] = GALLAGHER_GAMMAS,
                       **kwargs: Any) -> InradiusEstimate:
    """Gallagher inradius as the small-gamma end of ``R_{p,gamma}``.

    The value is ``R_{p,gamma}`` at the smallest gamma; the bracket runs from
    it to the value at the largest gamma.

    Raises
    ------
    InradiusError
        If the sequence is not non-increasing as gamma decreases.
    """
    ladder = capacitary_inradius_ladder(omega, p, gammas, **kwargs)
    values = [e.value for e in ladder]
    if any(b > a + 1e-12 for a, b in zip(values, values[1:])):
        raise InradiusError(f"capacitary inradius not monotone in gamma: {values}")
    first, last = ladder[0], ladder[-1]
    notes = tuple(f"gamma={e.gamma:g}: {e.value:.6g}" for e in ladder)
    return InradiusEstimate("Gallagher", last.value, last.value, first.value, p, last.gamma,
                            omega.spacing, last.center, None, last.trace, notes, last.classical)


def classical_estimate(omega: GridDomain) -> InradiusEstimate:
    """The classical inradius wrapped as an :class:`InradiusEstimate`."""
    c = classical_inradius(omega)
    return InradiusEstimate("classical", c.value, c.lower, c.upper, None, None, omega.spacing,
                            c.center, classical=c.value)


# ---------------------------------------------------------------------------
# Measure density indices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityIndexReport:
    """Measure density indices of a rasterized set.

    ``theta_star`` minimizes over boundary points (midpoints of faces between
    occupied and free cells), ``theta`` over complement cell centers and the
    same boundary points.
    """

    r0: float
    t: float
    theta_star: float
    theta: float
    radii: tuple[float, ...]
    boundary_points: int
    complement_points: int
    argmin_star: tuple[float, ...] | None = None
    argmin: tuple[float, ...] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"r0": self.r0, "t": self.t, "theta_star": self.theta_star, "theta": self.theta,
                "radii": list(self.radii), "boundary_points": self.boundary_points,
                "complement_points": self.complement_points,
                "argmin_star": list(self.argmin_star) if self.argmin_star else None,
                "argmin": list(self.argmin) if self.argmin else None}


def index_radii(r0: float, h: float, extra: Sequence[float] = ()) -> list[float]:
    """Radii ``r0 * 2^(-k/4)`` down to ``4h``, merged with ``extra``."""
    radii, k = [], 0
    while True:
        r = r0 * 2 ** (-k / 4)
        if r < 4 * h - 1e-12:
            break
        radii.append(r)
        k += 1
    radii.extend(float(r) for r in extra if 0 < r <= r0)
    return sorted(set(radii), reverse=True)


def _ball_kernel(r_cells: float, dim: int, shift_axis: int | None) -> np.ndarray:
    """Cells within ``r_cells`` of the middle cell, or of the middle face along ``shift_axis``."""
    R = int(math.ceil(r_cells)) + 1
    ax = np.arange(-R, R + 1).astype(float)
    grids = list(np.meshgrid(*([ax] * dim), indexing="ij"))
    if shift_axis is not None:
        grids[shift_axis] = grids[shift_axis] - 0.5
    d2 = sum(g ** 2 for g in grids)
    return d2 < r_cells ** 2


def _count(field: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """``out[n] = sum_o field[n + o] kernel[o]`` with the kernel centered.

    Cells beyond the array count as zero, so pass the occupied mask (the
    exterior is complement) rather than the complement itself.
    """
    flipped = kernel[tuple(slice(None, None, -1) for _ in range(kernel.ndim))]
    return np.rint(signal.fftconvolve(field.astype(float), flipped.astype(float), mode="same"))


def density_indices(omega: GridDomain, r0: float, t: float = 0.0,
                    extra_radii: Sequence[float] = ()) -> DensityIndexReport:
    """Measure density indices ``theta*`` and ``theta`` with cell-counted ball volumes.

    For each radius ``r`` in :func:`index_radii` and each sample point ``x``
    the quantity ``(r0/r)^t |B_r(x) minus Omega| / |B_r(x)|`` is formed from
    cell counts; the indices are its minima.
    """
    h, dim = omega.spacing, omega.dim
    if r0 < 4 * h - 1e-12:
        raise UnderResolvedError("r0 must be at least four cells")
    if t < 0:
        raise ValueError("t must be non-negative")
    pad = int(math.ceil(r0 / h)) + 2
    mask = np.pad(omega.mask, pad)
    comp = ~mask
    faces = []
    for a in range(dim):
        nxt = np.roll(mask, -1, axis=a)
        face = mask != nxt
        sl = [slice(None)] * dim
        sl[a] = slice(-1, None)
        face[tuple(sl)] = False
        faces.append(face)
    n_faces = int(sum(f.sum() for f in faces))
    if n_faces == 0:
        raise DensityIndexError("the set has no boundary inside the box")
    radii = index_radii(r0, h, extra_radii)
    best_star, best, arg_star, arg = math.inf, math.inf, None, None
    origin = np.asarray(omega.origin) - pad * h
    for r in radii:
        rc = r / h
        weight = (r0 / r) ** t
        for a in range(dim):
            ker = _ball_kernel(rc, dim, a)
            ratio = (ker.sum() - _count(mask, ker)) / ker.sum() * weight
            vals = np.where(faces[a], ratio, np.inf)
            j = np.unravel_index(int(np.argmin(vals)), vals.shape)
            if vals[j] < best_star:
                best_star = float(vals[j])
                pt = origin + (np.asarray(j) + 0.5) * h
                pt[a] += h / 2
                arg_star = tuple(float(v) for v in pt)
        ker = _ball_kernel(rc, dim, None)
        ratio = (ker.sum() - _count(mask, ker)) / ker.sum() * weight
        vals = np.where(comp, ratio, np.inf)
        j = np.unravel_index(int(np.argmin(vals)), vals.shape)
        if vals[j] < best:
            best = float(vals[j])
            arg = tuple(float(v) for v in origin + (np.asarray(j) + 0.5) * h)
    theta = min(best, best_star)
    if best_star <= best:
        arg = arg_star
    return DensityIndexReport(r0, t, best_star, theta, tuple(radii), n_faces, int(comp.sum()),
                              arg_star, arg)


def density_ratio_at(omega: GridDomain, point: Sequence[float], r0: float, t: float = 0.0,
                     extra_radii: Sequence[float] = ()) -> float:
    """``min_r (r0/r)^t |B_r(point) minus Omega| / |B_r(point)|`` at one point, cell-counted."""
    h = omega.spacing
    x = np.asarray(point, float)
    best = math.inf
    for r in index_radii(r0, h, extra_radii):
        idx = omega.index_of(x)
        half = int(math.ceil(r / h)) + 2
        win = _window(omega.mask, idx, half)
        ax = np.arange(-half, half + 1) * h
        grids = np.meshgrid(*([ax] * omega.dim), indexing="ij")
        c = omega.center_of(idx)
        d2 = sum((g + ci - xi) ** 2 for g, ci, xi in zip(grids, c, x))
        ball = d2 < r * r
        ratio = float((ball & ~win).sum()) / float(ball.sum()) * (r0 / r) ** t
        best = min(best, ratio)
    return best


def density_ratio_shape(shape: Shape, point: Sequence[float], r0: float, t: float = 0.0,
                        min_radius: float | None = None, samples: int = 401) -> float:
    """Same minimum as :func:`density_ratio_at`, evaluated on the exact shape.

    Each ball is sampled on its own lattice of ``samples`` points per axis, so
    the resolution scales with the radius; this resolves thin cusps that a
    fixed grid misses at small radii.
    """
    x = np.asarray(point, float)
    dim = x.size
    r_min = r0 / 64 if min_radius is None else min_radius
    ax = (np.arange(samples) + 0.5) / samples * 2.0 - 1.0
    unit = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    unit = unit[np.sum(unit ** 2, axis=1) < 1.0]
    best = math.inf
    for r in index_radii(r0, r_min / 4):
        outside = ~shape.contains(x + r * unit)
        best = min(best, float(outside.mean()) * (r0 / r) ** t)
    return best


__all__ = [
    "NegligibilityReport", "InradiusEstimate", "DensityIndexReport", "TraceEntry", "InradiusSearch",
    "InradiusError", "negligibility_test", "capacitary_inradius", "capacitary_inradius_body",
    "ms_inradius", "gallagher_inradius", "capacitary_inradius_ladder", "classical_estimate",
    "density_indices", "density_ratio_at", "density_ratio_shape", "index_radii", "GALLAGHER_GAMMAS",
]
