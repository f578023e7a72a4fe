"""Shape descriptions, rasterization onto uniform grids and geometric quantities.

Shapes are small immutable descriptions of open (or, where noted, closed)
subsets of R^N.  ``rasterize`` turns them into a :class:`GridDomain` using the
cell-center rule: a cell belongs to the set iff its center does.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree


class ShapeError(ValueError):
    """Invalid shape parameters."""


class UnderResolvedError(ValueError):
    """The grid spacing is not smaller than the smallest feature of a shape."""


def unit_ball_volume(n: int) -> float:
    """Volume omega_n of the unit ball in R^n (omega_0 = 1)."""
    if n < 0:
        raise ValueError("dimension must be non-negative")
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def _vec(values: Sequence[float], name: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if not out or not all(math.isfinite(v) for v in out):
        raise ShapeError(f"{name} must be a non-empty vector of finite numbers")
    return out


def _points(points: np.ndarray, dim: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != dim:
        raise ShapeError(f"points have dimension {pts.shape[-1]}, shape has {dim}")
    return pts


# ---------------------------------------------------------------------------
# Standard bodies
# ---------------------------------------------------------------------------


def icosphere(level: int = 4) -> np.ndarray:
    """Vertices of a subdivided icosahedron projected to the unit sphere."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    pts = [np.asarray(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = pts[a] + pts[b]
                pts.append(m / np.linalg.norm(m))
                cache[key] = len(pts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(pts)


def default_directions(dim: int, count: int | None = None) -> np.ndarray:
    """Uniform angular mesh of the unit sphere used for radial samples."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        k = 720 if count is None else int(count)
        ang = 2.0 * np.pi * np.arange(k) / k
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if dim == 3:
        return icosphere(4 if count is None else int(count))
    raise ShapeError("only dimensions 1, 2 and 3 are supported")


@dataclass(frozen=True, eq=False)
class StandardBody:
    """Bounded set star-shaped with respect to the unit ball.

    The body is ``{rho * w : 0 <= rho < r(w)}`` where the radial function
    ``r`` is known at the unit vectors ``directions`` and interpolated in
    between.  ``R`` is the largest radial value and ``inner_gap`` the distance
    between the closed body and the boundary of its dilate by 2.
    """

    directions: np.ndarray
    radii: np.ndarray
    R: float
    inner_gap: float
    name: str = "radial"
    params: tuple[float, ...] = ()

    @property
    def dim(self) -> int:
        return int(self.directions.shape[1])

    def radial(self, units: np.ndarray) -> np.ndarray:
        """Interpolated radial function at unit vectors ``units`` (..., N)."""
        u = np.asarray(units, float)
        flat = u.reshape(-1, self.dim)
        if self.dim == 1:
            out = np.where(flat[:, 0] >= 0, self.radii[0], self.radii[1])
        elif self.dim == 2:
            k = self.radii.size
            ang = np.mod(np.arctan2(flat[:, 1], flat[:, 0]), 2 * np.pi)
            pos = ang * k / (2 * np.pi)
            i0 = np.floor(pos).astype(int) % k
            frac = pos - np.floor(pos)
            out = (1 - frac) * self.radii[i0] + frac * self.radii[(i0 + 1) % k]
        else:
            tree = self.__dict__.get("_tree")
            if tree is None:
                tree = cKDTree(self.directions)
                object.__setattr__(self, "_tree", tree)
            dist, idx = tree.query(flat, k=3)
            w = 1.0 / np.maximum(dist, 1e-12)
            exact = dist[:, 0] < 1e-12
            out = np.sum(w * self.radii[idx], axis=1) / np.sum(w, axis=1)
            out[exact] = self.radii[idx[exact, 0]]
        return out.reshape(u.shape[:-1])

    def contains(self, points: np.ndarray, scale: float = 1.0,
                 center: Sequence[float] | None = None, closed: bool = False) -> np.ndarray:
        """Membership of ``points`` in ``center + scale * body``."""
        pts = _points(points, self.dim)
        c = np.zeros(self.dim) if center is None else np.asarray(center, float)
        y = (pts - c) / scale
        rho = np.linalg.norm(y, axis=-1)
        units = np.where(rho[..., None] > 0, y / np.where(rho > 0, rho, 1.0)[..., None], 0.0)
        units[..., 0] = np.where(rho > 0, units[..., 0], 1.0)
        r = self.radial(units)
        return rho <= r if closed else rho < r

    def to_dict(self) -> dict[str, Any]:
        return _body_to_dict(self)


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from each point to each segment [a_j, b_j] (2-D arrays)."""
    d = b - a
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip(np.sum(rel * d[None], axis=2) / np.maximum(np.sum(d * d, axis=1), 1e-300), 0, 1)
    proj = a[None] + t[..., None] * d[None]
    return np.linalg.norm(points[:, None, :] - proj, axis=2)


def _inner_gap(directions: np.ndarray, radii: np.ndarray) -> float:
    inner = directions * radii[:, None]
    outer = 2.0 * inner
    dim = directions.shape[1]
    if dim == 1:
        return float(np.min(radii))
    best = np.inf
    chunk = 256
    if dim == 2:
        a_in, b_in = inner, np.roll(inner, -1, axis=0)
        a_out, b_out = outer, np.roll(outer, -1, axis=0)
        for s in range(0, len(inner), chunk):
            best = min(best, float(_segment_distance(inner[s:s + chunk], a_out, b_out).min()))
            best = min(best, float(_segment_distance(outer[s:s + chunk], a_in, b_in).min()))
        return best
    tree = cKDTree(outer)
    dist, _ = tree.query(inner)
    return float(dist.min())


def body_from_radial(samples: Sequence[float], directions: np.ndarray | None = None,
                     dim: int = 2, name: str = "radial",
                     params: tuple[float, ...] = ()) -> StandardBody:
    """Build a standard body from radial samples.

    Parameters
    ----------
    samples : sequence of float
        Radial values ``r(w_k)``; all must be at least 1.
    directions : array (K, N), optional
        Unit vectors of the samples.  Defaults to the uniform mesh of
        ``default_directions(dim, K)`` (angles ``2 pi k / K`` in the plane).
    dim : int
        Dimension used when ``directions`` is omitted.
    """
    radii = np.asarray(samples, dtype=float).ravel()
    if directions is None:
        if dim == 2:
            directions = default_directions(2, radii.size)
        elif dim == 1:
            directions = default_directions(1)
        else:
            directions = default_directions(dim)
    dirs = np.asarray(directions, float)
    if dirs.shape[0] != radii.size:
        raise ShapeError("one radial sample per direction is required")
    if not np.all(np.isfinite(radii)):
        raise ShapeError("radial samples must be finite")
    if np.any(radii < 1.0 - 1e-12):
        raise ShapeError("not starshaped w.r.t. unit ball: a radial sample is below 1")
    radii = np.maximum(radii, 1.0)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    gap = _inner_gap(dirs, radii)
    if not gap > 0:
        raise ShapeError("degenerate body: zero gap between the body and its dilate")
    dirs.setflags(write=False)
    radii.setflags(write=False)
    return StandardBody(dirs, radii, float(radii.max()), gap, name, tuple(params))


def body_from_function(func, dim: int = 2, count: int | None = None,
                       name: str = "radial", params: tuple[float, ...] = ()) -> StandardBody:
    """Sample a radial function ``func(units) -> radii`` on the default mesh."""
    dirs = default_directions(dim, count)
    return body_from_radial(np.asarray(func(dirs), float), dirs, dim, name, params)


def ball_body(dim: int = 2, count: int | None = None) -> StandardBody:
    return body_from_function(lambda u: np.ones(len(u)), dim, count, "ball")


def cube_body(dim: int = 2, count: int | None = None) -> StandardBody:
    """The cube (-1, 1)^N, whose radial function is 1/|w|_inf."""
    return body_from_function(lambda u: 1.0 / np.abs(u).max(axis=1), dim, count, "cube")


def ellipse_body(axes: Sequence[float] = (2.0, 1.0), count: int | None = None) -> StandardBody:
    """Axis-aligned ellipse rescaled so that its smallest radial value is 1."""
    a, b = (float(v) for v in axes)
    m = min(a, b)

    def radial(u: np.ndarray) -> np.ndarray:
        return 1.0 / np.sqrt((u[:, 0] / a) ** 2 + (u[:, 1] / b) ** 2) / m

    return body_from_function(radial, 2, count, "ellipse", (a, b))


def body_from_dict(doc: dict[str, Any]) -> StandardBody:
    kind = doc.get("kind", "radial")
    dim = int(doc.get("dimension", 2))
    if kind == "ball":
        return ball_body(dim)
    if kind == "cube":
        return cube_body(dim)
    if kind == "ellipse":
        return ellipse_body(doc.get("axes", (2.0, 1.0)))
    if kind == "radial":
        return body_from_radial(doc["samples"], dim=dim)
    raise ShapeError(f"unknown body kind {kind!r}")


def _body_to_dict(body: StandardBody) -> dict[str, Any]:
    if body.name == "ellipse":
        return {"kind": "ellipse", "dimension": 2, "axes": list(body.params)}
    if body.name in ("ball", "cube"):
        return {"kind": body.name, "dimension": body.dim}
    return {"kind": "radial", "dimension": body.dim, "samples": [float(v) for v in body.radii]}


# ---------------------------------------------------------------------------
# Shape descriptions
# ---------------------------------------------------------------------------


class Shape:
    """Base class of shape descriptions."""

    dim: int

    def contains(self, points: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def min_feature(self) -> float:
        return math.inf

    def to_dict(self) -> dict[str, Any]:  # pragma: no cover - abstract
        raise NotImplementedError

    def __or__(self, other: Shape) -> Composite:
        return Composite("union", (self, other))

    def __and__(self, other: Shape) -> Composite:
        return Composite("intersection", (self, other))

    def __sub__(self, other: Shape) -> Composite:
        return Composite("difference", (self, other))


@dataclass(frozen=True)
class Ball(Shape):
    """Ball of given center and radius; open unless ``closed``."""

    center: tuple[float, ...]
    radius: float
    closed: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vec(self.center, "center"))
        if not self.radius > 0:
            raise ShapeError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = _points(points, self.dim)
        d2 = np.sum((pts - np.asarray(self.center)) ** 2, axis=-1)
        r2 = self.radius ** 2
        return d2 <= r2 if self.closed else d2 < r2

    def min_feature(self) -> float:
        return self.radius

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"type": "ball", "center": list(self.center), "radius": self.radius}
        if self.closed:
            out["closed"] = True
        return out


@dataclass(frozen=True)
class Box(Shape):
    """Open axis-aligned box between two corners."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        lo, hi = _vec(self.lo, "lo"), _vec(self.hi, "hi")
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise ShapeError("box corners must satisfy lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = _points(points, self.dim)
        return np.all((pts > np.asarray(self.lo)) & (pts < np.asarray(self.hi)), axis=-1)

    def min_feature(self) -> float:
        return min(b - a for a, b in zip(self.lo, self.hi)) / 2.0

    def to_dict(self) -> dict[str, Any]:
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class HalfSpace(Shape):
    """Open half-space ``{x : <normal, x> < offset}``."""

    normal: tuple[float, ...]
    offset: float = 0.0

    def __post_init__(self) -> None:
        n = np.asarray(_vec(self.normal, "normal"))
        norm = float(np.linalg.norm(n))
        if norm == 0:
            raise ShapeError("half-space normal must be nonzero")
        object.__setattr__(self, "normal", tuple(float(v) for v in n / norm))
        object.__setattr__(self, "offset", float(self.offset) / norm)

    @property
    def dim(self) -> int:
        return len(self.normal)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = _points(points, self.dim)
        return pts @ np.asarray(self.normal) < self.offset

    def to_dict(self) -> dict[str, Any]:
        return {"type": "half_space", "normal": list(self.normal), "offset": self.offset}


@dataclass(frozen=True)
class BodyInstance(Shape):
    """Scaled and translated standard body ``center + scale * K``."""

    body: StandardBody
    scale: float
    center: tuple[float, ...]
    closed: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vec(self.center, "center"))
        if not self.scale > 0:
            raise ShapeError("body scale must be positive")
        if len(self.center) != self.body.dim:
            raise ShapeError("center dimension does not match the body")

    @property
    def dim(self) -> int:
        return self.body.dim

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.body.contains(points, self.scale, self.center, self.closed)

    def min_feature(self) -> float:
        return self.scale

    def to_dict(self) -> dict[str, Any]:
        out = {"type": "body", "body": _body_to_dict(self.body), "scale": self.scale,
               "center": list(self.center)}
        if self.closed:
            out["closed"] = True
        return out


@dataclass(frozen=True)
class PerforatedLattice(Shape):
    """Open box with closed balls of radius ``hole_radius`` removed at integer points."""

    hole_radius: float
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        if not 0 < self.hole_radius < 0.25:
            raise ShapeError("perforated lattice needs 0 < hole radius < 1/4")
        Box(self.lo, self.hi)
        object.__setattr__(self, "lo", _vec(self.lo, "lo"))
        object.__setattr__(self, "hi", _vec(self.hi, "hi"))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = _points(points, self.dim)
        inside = np.all((pts > np.asarray(self.lo)) & (pts < np.asarray(self.hi)), axis=-1)
        d2 = np.sum((pts - np.round(pts)) ** 2, axis=-1)
        return inside & (d2 > self.hole_radius ** 2)

    def min_feature(self) -> float:
        return self.hole_radius

    def to_dict(self) -> dict[str, Any]:
        return {"type": "perforated_lattice", "hole_radius": self.hole_radius,
                "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class Funnel(Shape):
    """Closed funnel ``apex + {y : delta |y - <y,w>w|^beta <= <y,w> <= height}``.

    With ``exponent = 1`` this is a cone; smaller exponents give power cusps.
    """

    axis: tuple[float, ...]
    opening: float
    height: float
    exponent: float = 1.0
    apex: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        w = np.asarray(_vec(self.axis, "axis"))
        if not np.linalg.norm(w) > 0:
            raise ShapeError("funnel axis must be nonzero")
        if not 0 < self.exponent <= 1:
            raise ShapeError("funnel exponent must lie in (0, 1]")
        if not (self.opening > 0 and self.height > 0):
            raise ShapeError("funnel opening and height must be positive")
        object.__setattr__(self, "axis", tuple(float(v) for v in w / np.linalg.norm(w)))
        apex = (0.0,) * len(w) if self.apex is None else _vec(self.apex, "apex")
        if len(apex) != len(w):
            raise ShapeError("apex dimension does not match the axis")
        object.__setattr__(self, "apex", apex)

    @property
    def dim(self) -> int:
        return len(self.axis)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = _points(points, self.dim)
        w = np.asarray(self.axis)
        y = pts - np.asarray(self.apex)
        along = y @ w
        across = np.linalg.norm(y - along[..., None] * w, axis=-1)
        return (self.opening * across ** self.exponent <= along) & (along <= self.height)

    def min_feature(self) -> float:
        return self.height

    def to_dict(self) -> dict[str, Any]:
        return {"type": "funnel", "axis": list(self.axis), "opening": self.opening,
                "height": self.height, "exponent": self.exponent, "apex": list(self.apex)}


_OPS = ("union", "intersection", "difference")


@dataclass(frozen=True)
class Composite(Shape):
    """Set algebra on shapes; ``difference`` removes every later part from the first."""

    op: str
    parts: tuple[Shape, ...]

    def __post_init__(self) -> None:
        if self.op not in _OPS:
            raise ShapeError(f"composite operation must be one of {_OPS}")
        parts = tuple(self.parts)
        if not parts:
            raise ShapeError("composite needs at least one part")
        if len({s.dim for s in parts}) != 1:
            raise ShapeError("composite parts must share a dimension")
        object.__setattr__(self, "parts", parts)

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    def contains(self, points: np.ndarray) -> np.ndarray:
        masks = [s.contains(points) for s in self.parts]
        out = masks[0].copy()
        for m in masks[1:]:
            if self.op == "union":
                out |= m
            elif self.op == "intersection":
                out &= m
            else:
                out &= ~m
        return out

    def min_feature(self) -> float:
        return min(s.min_feature() for s in self.parts)

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.op, "parts": [s.to_dict() for s in self.parts]}


def shape_from_dict(doc: dict[str, Any]) -> Shape:
    """Inverse of ``Shape.to_dict`` (documents are assumed schema-valid)."""
    kind = doc["type"]
    if kind == "ball":
        return Ball(doc["center"], doc["radius"], bool(doc.get("closed", False)))
    if kind == "box":
        return Box(doc["lo"], doc["hi"])
    if kind == "half_space":
        return HalfSpace(doc["normal"], doc.get("offset", 0.0))
    if kind == "body":
        return BodyInstance(body_from_dict(doc["body"]), doc["scale"], doc["center"],
                            bool(doc.get("closed", False)))
    if kind == "perforated_lattice":
        return PerforatedLattice(doc["hole_radius"], doc["lo"], doc["hi"])
    if kind == "funnel":
        return Funnel(doc["axis"], doc["opening"], doc["height"], doc.get("exponent", 1.0),
                      doc.get("apex"))
    if kind in _OPS:
        return Composite(kind, tuple(shape_from_dict(d) for d in doc["parts"]))
    raise ShapeError(f"unknown shape type {kind!r}")


# ---------------------------------------------------------------------------
# Grid domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Occupancy mask on a uniform lattice of cubic cells.

    Cell ``i`` has center ``origin + (i + 1/2) * spacing``; ``origin`` is the
    lower corner of the bounding box.  Cells outside the box are not in the set.
    """

    mask: np.ndarray
    spacing: float
    origin: tuple[float, ...]

    def __post_init__(self) -> None:
        m = np.array(self.mask, dtype=bool)
        if m.ndim < 1 or m.ndim > 3:
            raise ShapeError("grids of dimension 1 to 3 are supported")
        if not self.spacing > 0:
            raise ShapeError("spacing must be positive")
        origin = _vec(self.origin, "origin")
        if len(origin) != m.ndim:
            raise ShapeError("origin dimension does not match the mask")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def dim(self) -> int:
        return self.mask.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mask.shape

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def volume(self) -> float:
        return self.count * self.spacing ** self.dim

    @property
    def bbox(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        hi = tuple(o + n * self.spacing for o, n in zip(self.origin, self.shape))
        return self.origin, hi

    def axes(self) -> list[np.ndarray]:
        return [o + (np.arange(n) + 0.5) * self.spacing for o, n in zip(self.origin, self.shape)]

    def centers(self) -> np.ndarray:
        """Cell centers as an array of shape ``mask.shape + (N,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def center_of(self, index: Sequence[int]) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(index, float) + 0.5) * self.spacing

    def index_of(self, point: Sequence[float]) -> tuple[int, ...]:
        """Index of the cell containing ``point`` (may lie outside the box)."""
        rel = (np.asarray(point, float) - np.asarray(self.origin)) / self.spacing
        return tuple(int(v) for v in np.floor(rel + 1e-9))

    def is_empty(self) -> bool:
        return not self.mask.any()

    def with_mask(self, mask: np.ndarray) -> GridDomain:
        return GridDomain(mask, self.spacing, self.origin)

    def padded(self, cells: int | Sequence[int]) -> GridDomain:
        """Enlarge the box by ``cells`` empty cells on every side."""
        pad = [int(cells)] * self.dim if np.isscalar(cells) else [int(c) for c in cells]
        mask = np.pad(self.mask, [(c, c) for c in pad])
        origin = tuple(o - c * self.spacing for o, c in zip(self.origin, pad))
        return GridDomain(mask, self.spacing, origin)

    def cropped(self) -> GridDomain:
        """Smallest sub-box holding all occupied cells (unchanged if empty)."""
        if self.is_empty():
            return self
        idx = np.nonzero(self.mask)
        lo = [int(i.min()) for i in idx]
        hi = [int(i.max()) + 1 for i in idx]
        sl = tuple(slice(a, b) for a, b in zip(lo, hi))
        origin = tuple(o + a * self.spacing for o, a in zip(self.origin, lo))
        return GridDomain(self.mask[sl], self.spacing, origin)

    def scaled(self, t: float) -> GridDomain:
        """The dilate ``t * Omega`` carried by the same mask at spacing ``t h``."""
        return GridDomain(self.mask, self.spacing * t, tuple(t * o for o in self.origin))

    def aligned_with(self, other: GridDomain, tol: float = 1e-6) -> bool:
        if self.dim != other.dim or abs(self.spacing - other.spacing) > tol * self.spacing:
            return False
        shift = (np.asarray(self.origin) - np.asarray(other.origin)) / self.spacing
        return bool(np.all(np.abs(shift - np.round(shift)) < tol))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"spacing": self.spacing, "origin": self.origin,
                             "shape": self.shape}, sort_keys=True).encode())
        h.update(np.packbits(self.mask).tobytes())
        return h.hexdigest()[:16]


def frame(domains: Sequence[GridDomain]) -> tuple[list[np.ndarray], float, tuple[float, ...]]:
    """Embed aligned domains into their common bounding box.

    Returns the masks on the common lattice together with its spacing and
    origin.
    """
    first = domains[0]
    for d in domains[1:]:
        if not first.aligned_with(d):
            raise ShapeError("grids are not aligned (different spacing or offset)")
    h = first.spacing
    starts = [np.round((np.asarray(d.origin) - np.asarray(first.origin)) / h).astype(int)
              for d in domains]
    lo = np.min(starts, axis=0)
    hi = np.max([s + np.asarray(d.shape) for s, d in zip(starts, domains)], axis=0)
    out = []
    for s, d in zip(starts, domains):
        m = np.zeros(tuple(hi - lo), bool)
        sl = tuple(slice(a - l, a - l + n) for a, l, n in zip(s, lo, d.shape))
        m[sl] = d.mask
        out.append(m)
    origin = tuple(o + l * h for o, l in zip(first.origin, lo))
    return out, h, origin


def grid_box(lo: Sequence[float], hi: Sequence[float], spacing: float) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Cell counts covering ``[lo, hi]`` at ``spacing`` (rounded up)."""
    lo_t, hi_t = _vec(lo, "bbox lo"), _vec(hi, "bbox hi")
    if len(lo_t) != len(hi_t) or any(a >= b for a, b in zip(lo_t, hi_t)):
        raise ShapeError("bounding box must satisfy lo < hi")
    shape = tuple(max(1, int(math.ceil((b - a) / spacing - 1e-9))) for a, b in zip(lo_t, hi_t))
    return shape, lo_t


def rasterize(spec: Shape, spacing: float,
              bbox: tuple[Sequence[float], Sequence[float]]) -> GridDomain:
    """Cell-center rasterization of ``spec`` on the box ``bbox`` = (lo, hi).

    Raises
    ------
    UnderResolvedError
        If ``spacing`` is not smaller than the smallest feature of the shape.
    """
    if not spacing > 0:
        raise ShapeError("spacing must be positive")
    feature = spec.min_feature()
    if spacing >= feature:
        raise UnderResolvedError(
            f"under-resolved: spacing {spacing:g} is not below the smallest feature {feature:g}")
    shape, origin = grid_box(bbox[0], bbox[1], spacing)
    if len(shape) != spec.dim:
        raise ShapeError("bounding box dimension does not match the shape")
    axes = [o + (np.arange(n) + 0.5) * spacing for o, n in zip(origin, shape)]
    mask = np.empty(shape, bool)
    # evaluate slab by slab to bound memory on large 3-D grids
    if spec.dim == 3:
        yy, zz = np.meshgrid(axes[1], axes[2], indexing="ij")
        for i, x in enumerate(axes[0]):
            pts = np.stack([np.full_like(yy, x), yy, zz], axis=-1)
            mask[i] = spec.contains(pts)
    else:
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        mask[...] = spec.contains(pts)
    return GridDomain(mask, spacing, origin)


def lattice_ball(radius_cells: float, closed: bool = True, dim: int = 2) -> np.ndarray:
    """Offsets-ball mask: cells whose centers lie within ``radius_cells`` of the middle cell."""
    R = int(math.floor(radius_cells + 1e-9))
    ax = np.arange(-R, R + 1)
    grids = np.meshgrid(*([ax] * dim), indexing="ij")
    d2 = sum(g.astype(float) ** 2 for g in grids)
    r2 = radius_cells ** 2
    return d2 <= r2 * (1 + 1e-12) if closed else d2 < r2 * (1 - 1e-12)


# ---------------------------------------------------------------------------
# Geometric quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassicalInradius:
    """Largest inscribed ball radius with a one-cell-diagonal bracket."""

    value: float
    lower: float
    upper: float
    center: tuple[float, ...] | None


def distance_to_complement(domain: GridDomain) -> np.ndarray:
    """Exact Euclidean distance from each cell center to the nearest complement cell center."""
    padded = np.pad(domain.mask, 1)
    dist = ndimage.distance_transform_edt(padded) * domain.spacing
    return dist[tuple(slice(1, -1) for _ in range(domain.dim))]


def classical_inradius(domain: GridDomain) -> ClassicalInradius:
    """Radius of the largest ball inside the rasterized set.

    The value is the largest distance from an occupied cell center to an
    unoccupied cell center (cells outside the box count as unoccupied); the
    bracket is one cell diagonal on either side.
    """
    if domain.is_empty():
        return ClassicalInradius(0.0, 0.0, 0.0, None)
    dist = distance_to_complement(domain)
    idx = np.unravel_index(int(np.argmax(dist)), dist.shape)
    value = float(dist[idx])
    diag = domain.spacing * math.sqrt(domain.dim)
    center = tuple(float(v) for v in domain.center_of(idx))
    return ClassicalInradius(value, max(value - diag, 0.0), value + diag, center)


def funnel_volume(N: int, beta: float, delta: float, height: float) -> float:
    """Volume of the funnel ``{delta |x'|^beta <= x_N <= height}`` in R^N."""
    if not 0 < beta <= 1:
        raise ShapeError("funnel exponent must lie in (0, 1]")
    if not (delta > 0 and height >= 0):
        raise ShapeError("funnel opening must be positive and height non-negative")
    return (unit_ball_volume(N - 1) / delta ** ((N - 1) / beta)
            * beta / (N - 1 + beta) * height ** ((N - 1 + beta) / beta))


def monte_carlo_volume(spec: Shape, lo: Sequence[float], hi: Sequence[float],
                       samples: int = 200_000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo volume of ``spec`` inside the box [lo, hi] with its standard error."""
    rng = np.random.default_rng(seed)
    lo_a, hi_a = np.asarray(lo, float), np.asarray(hi, float)
    pts = rng.uniform(lo_a, hi_a, size=(samples, lo_a.size))
    frac = float(spec.contains(pts).mean())
    box = float(np.prod(hi_a - lo_a))
    return frac * box, box * math.sqrt(max(frac * (1 - frac), 0.0) / samples)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _image(domain: GridDomain) -> np.ndarray:
    if domain.dim == 1:
        return domain.mask[None, :]
    if domain.dim == 2:
        # rows from top (largest y) to bottom, columns along x
        return domain.mask.T[::-1]
    raise ShapeError("image export needs N <= 2")


def to_pgm(domain: GridDomain) -> bytes:
    """Binary PGM image: 0 outside, 255 inside."""
    img = np.where(_image(domain), 255, 0).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    return header + img.tobytes()


def field_to_pgm(values: np.ndarray) -> bytes:
    """Grayscale PGM of a 1-D or 2-D field rescaled to [0, 255]."""
    v = np.asarray(values, float)
    if v.ndim == 1:
        v = v[None, :]
    elif v.ndim == 2:
        v = v.T[::-1]
    else:
        raise ShapeError("image export needs N <= 2")
    lo, hi = float(np.min(v)), float(np.max(v))
    scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    img = np.round(255 * scaled).astype(np.uint8)
    return f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode() + img.tobytes()


@dataclass
class SvgOverlay:
    """Extra drawing on top of a domain: circles and colored points."""

    circles: list[tuple[tuple[float, float], float, str]] = field(default_factory=list)
    points: list[tuple[tuple[float, float], str]] = field(default_factory=list)


def to_svg(domain: GridDomain, overlay: SvgOverlay | None = None, pixels: int = 512) -> str:
    """SVG drawing of a planar domain (occupied cells merged into row runs)."""
    if domain.dim != 2:
        raise ShapeError("SVG export needs N = 2")
    (x0, y0), (x1, y1) = domain.bbox
    h = domain.spacing
    w_units, h_units = x1 - x0, y1 - y0
    scale = pixels / max(w_units, h_units)

    def px(x: float, y: float) -> tuple[float, float]:
        return (x - x0) * scale, (y1 - y) * scale

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w_units * scale:.1f}" '
             f'height="{h_units * scale:.1f}" viewBox="0 0 {w_units * scale:.3f} {h_units * scale:.3f}">',
             f'<rect x="0" y="0" width="{w_units * scale:.3f}" height="{h_units * scale:.3f}" fill="#ffffff"/>',
             '<g fill="#9ecae1" stroke="none">']
    mask = domain.mask
    for j in range(mask.shape[1]):
        col = np.concatenate([[False], mask[:, j], [False]])
        edges = np.flatnonzero(np.diff(col.astype(np.int8)))
        for a, b in zip(edges[::2], edges[1::2]):
            xa, yt = px(x0 + a * h, y0 + (j + 1) * h)
            parts.append(f'<rect x="{xa:.3f}" y="{yt:.3f}" width="{(b - a) * h * scale:.3f}" '
                         f'height="{h * scale:.3f}"/>')
    parts.append("</g>")
    if overlay is not None:
        for (cx, cy), r, color in overlay.circles:
            X, Y = px(cx, cy)
            parts.append(f'<circle cx="{X:.3f}" cy="{Y:.3f}" r="{r * scale:.3f}" fill="none" '
                         f'stroke="{color}" stroke-width="2"/>')
        for (cx, cy), color in overlay.points:
            X, Y = px(cx, cy)
            parts.append(f'<circle cx="{X:.3f}" cy="{Y:.3f}" r="2" fill="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
