"""Discrete p-Dirichlet energy on a cell-centered lattice and its derivatives.

Fields are arrays on a box of cells.  The gradient at cell ``n`` is the vector
of forward differences ``phi(n + e_a) - phi(n)`` (values beyond the array are
zero) and the energy is ``h^(N-p) * sum_n |grad phi(n)|^p``.  Callers keep a
layer of zero cells around every free cell so the stencil never reaches the
array border asymmetrically.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def shift(arr: np.ndarray, offset: tuple[int, ...], fill: float = 0) -> np.ndarray:
    """``out[n] = arr[n + offset]``, with ``fill`` where ``n + offset`` leaves the array."""
    out = np.full_like(arr, fill)
    src, dst = [], []
    for o, n in zip(offset, arr.shape):
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def unit(dim: int, a: int, sign: int = 1) -> tuple[int, ...]:
    e = [0] * dim
    e[a] = sign
    return tuple(e)


def forward_grad(phi: np.ndarray) -> np.ndarray:
    return np.stack([np.diff(phi, axis=a, append=0.0) for a in range(phi.ndim)])


def energy(phi: np.ndarray, p: float, h: float) -> float:
    g = forward_grad(phi)
    n2 = np.einsum("a...,a...->...", g, g)
    if p == 2:
        return float(h ** (phi.ndim - 2) * n2.sum())
    return float(h ** (phi.ndim - p) * np.sum(n2 ** (p / 2.0)))


def mass(phi: np.ndarray, p: float, h: float) -> float:
    return float(h ** phi.ndim * np.sum(np.abs(phi) ** p))


def energy_gradient(phi: np.ndarray, p: float, h: float) -> np.ndarray:
    """Derivative of :func:`energy` with respect to every cell value."""
    dim = phi.ndim
    g = forward_grad(phi)
    norm = np.sqrt(np.einsum("a...,a...->...", g, g))
    if p == 2:
        w = np.full_like(norm, 2.0)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(norm > 0, p * norm ** (p - 2.0), 0.0)
    out = np.zeros_like(phi)
    for a in range(dim):
        flux = w * g[a]
        out += shift(flux, unit(dim, a, -1)) - flux
    return h ** (dim - p) * out


def _weights(g: np.ndarray, p: float, floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell Hessian blocks ``M_ab = w (delta_ab + (p-2) u_a u_b)``, u = g/|g|."""
    dim = g.shape[0]
    norm = np.sqrt(np.einsum("a...,a...->...", g, g))
    if p == 2:
        w = np.full_like(norm, 2.0)
        M = np.zeros((dim, dim) + norm.shape)
        for a in range(dim):
            M[a, a] = w
        return M, norm
    safe = np.maximum(norm, floor)
    w = p * safe ** (p - 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(norm > 0, g / np.where(norm > 0, norm, 1.0), 0.0)
    M = np.empty((dim, dim) + norm.shape)
    for a in range(dim):
        for b in range(dim):
            M[a, b] = w * ((1.0 if a == b else 0.0) + (p - 2.0) * u[a] * u[b])
    return M, norm


def energy_hessian(phi: np.ndarray, p: float, h: float, index: np.ndarray,
                   floor: float = 1e-12, rel_floor: float = 0.0) -> sp.csr_matrix:
    """Hessian of :func:`energy` restricted to the cells with ``index >= 0``.

    ``index`` maps free cells to matrix rows (``-1`` elsewhere).  The weight
    ``|grad|^(p-2)`` is evaluated at ``max(|grad|, floor, rel_floor * max|grad|)``
    so the matrix stays positive definite where the gradient vanishes.
    """
    dim = phi.ndim
    g = forward_grad(phi)
    if p != 2 and rel_floor > 0:
        gmax = float(np.sqrt(np.einsum("a...,a...->...", g, g)).max())
        floor = max(floor, rel_floor * gmax)
    M, _ = _weights(g, p, floor)
    free = index >= 0
    rows_free = index[free]
    n = int(free.sum())
    rows, cols, vals = [], [], []

    def add(offset: tuple[int, ...], values: np.ndarray) -> None:
        nb = shift(index, offset, fill=-1)[free]
        v = values[free]
        ok = (nb >= 0) & (v != 0)
        rows.append(rows_free[ok])
        cols.append(nb[ok])
        vals.append(v[ok])

    diag = M.sum(axis=(0, 1))
    for a in range(dim):
        diag = diag + shift(M[a, a], unit(dim, a, -1))
    add((0,) * dim, diag)
    for b in range(dim):
        col_sum = M[:, b].sum(axis=0)
        add(unit(dim, b, 1), -col_sum)
        add(unit(dim, b, -1), -shift(col_sum, unit(dim, b, -1)))
    for a in range(dim):
        for b in range(dim):
            if a == b:
                continue
            off = tuple(x - y for x, y in zip(unit(dim, b), unit(dim, a)))
            add(off, shift(M[a, b], unit(dim, a, -1)))
    H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    H.sum_duplicates()
    return H * h ** (dim - p)


def laplacian(index: np.ndarray, h: float) -> sp.csr_matrix:
    """Hessian of the p = 2 energy divided by two, on cells with ``index >= 0``.

    Every free cell has all 2N lattice neighbours inside the array (callers
    pad), so the diagonal is ``2N``.
    """
    dim = index.ndim
    free = index >= 0
    rows_free = index[free]
    n = rows_free.size
    rows, cols, vals = [rows_free], [rows_free], [np.full(n, 2.0 * dim)]
    for a in range(dim):
        for s in (1, -1):
            nb = shift(index, unit(dim, a, s), fill=-1)[free]
            ok = nb >= 0
            rows.append(rows_free[ok])
            cols.append(nb[ok])
            vals.append(-np.ones(int(ok.sum())))
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return L * h ** (dim - 2)


def neighbour_sum(values: np.ndarray) -> np.ndarray:
    """Sum of the 2N lattice neighbours of every cell (zero beyond the array)."""
    dim = values.ndim
    out = np.zeros_like(values, dtype=float)
    for a in range(dim):
        out += shift(values, unit(dim, a, 1)) + shift(values, unit(dim, a, -1))
    return out


def make_index(free: np.ndarray) -> np.ndarray:
    index = np.full(free.shape, -1, dtype=np.int64)
    index[free] = np.arange(int(free.sum()))
    return index
