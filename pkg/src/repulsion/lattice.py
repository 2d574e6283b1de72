"""Hypercubic boxes, bonds and discrete operators.

Sites of ``LatticeBox(d, N)`` are the points of ``[-N, N]^d``, indexed
row-major with the last coordinate varying fastest::

    index(x) = sum_i (x_i + N) * L**(d - 1 - i),   L = 2N + 1

Fields are flat float arrays over that index.  Values outside the box come
from a separate boundary description (a constant, or a callable on integer
coordinates), never from padding cells.

The gradient follows the convention ``grad f(b) = f(x_b) - f(y_b)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .noise import KEY_OFFSET, MAX_DIM, site_keys

__all__ = [
    "LatticeBox",
    "ScalarField",
    "Boundary",
    "laplacian",
    "laplacian_field",
    "gradient",
    "weighted_norm",
    "boundary_source",
]

Boundary = Union[float, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class LatticeBox:
    """The box ``[-N, N]^d`` of the integer lattice."""

    d: int
    N: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")
        if int(self.N) != self.N or self.N < 0:
            raise ValueError(f"half-width must be a non-negative integer, got {self.N}")
        if self.d > MAX_DIM:
            raise ValueError(f"dimension above {MAX_DIM} is not supported")
        if self.N >= KEY_OFFSET:
            raise ValueError("box too large for absolute site keys")

    @property
    def L(self) -> int:
        return 2 * self.N + 1

    @property
    def size(self) -> int:
        return self.L**self.d

    @property
    def shape(self) -> tuple:
        return (self.L,) * self.d

    @cached_property
    def coords(self) -> np.ndarray:
        """Integer coordinates of every site, shape ``(size, d)``, in index order."""
        axes = np.indices(self.shape).reshape(self.d, -1).T
        return (axes - self.N).astype(np.int64)

    @cached_property
    def keys(self) -> np.ndarray:
        return site_keys(self.coords)

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return x.shape == (self.d,) and bool(np.all(np.abs(x) <= self.N))

    def index(self, x) -> int:
        x = np.asarray(x, dtype=np.int64)
        if not self.contains(x):
            raise ValueError(f"site {tuple(x)} is outside the box of half-width {self.N}")
        return int(np.ravel_multi_index(tuple(x + self.N), self.shape))

    @property
    def origin(self) -> int:
        return self.index(np.zeros(self.d, dtype=np.int64))

    def neighbors(self, x) -> np.ndarray:
        """The 2d nearest neighbours of ``x`` in the full lattice."""
        x = np.asarray(x, dtype=np.int64)
        e = np.eye(self.d, dtype=np.int64)
        return np.concatenate([x + e, x - e])

    def bonds(self, touching: bool = False, directed: bool = True) -> np.ndarray:
        """Bonds as an array of shape ``(m, 2, d)``.

        ``touching=False`` gives bonds with both ends in the box, ``True`` those
        with at least one end in it.  Undirected bonds are listed once, as
        ``(x, x + e_i)``.
        """
        out = []
        for i in range(self.d):
            e = np.zeros(self.d, dtype=np.int64)
            e[i] = 1
            lo = self.coords
            if touching:
                lo = np.concatenate([lo, lo[lo[:, i] == -self.N] - e])
            else:
                lo = lo[lo[:, i] < self.N]
            out.append(np.stack([lo, lo + e], axis=1))
        und = np.concatenate(out) if out else np.zeros((0, 2, self.d), np.int64)
        if not directed:
            return und
        return np.concatenate([und, und[:, ::-1]])

    def interior_mask(self, margin: int) -> np.ndarray:
        """Sites at sup-distance at least ``margin`` from the exterior."""
        return np.all(np.abs(self.coords) <= self.N - margin, axis=1)

    # row structure used by the stepping kernel
    @cached_property
    def row_neighbors(self) -> np.ndarray:
        """For each row along the last axis, the neighbouring rows (or -1)."""
        L, d = self.L, self.d
        nrows = L ** (d - 1)
        out = np.full((nrows, 2 * (d - 1)), -1, dtype=np.int64)
        if d == 1:
            return out
        rc = np.indices((L,) * (d - 1)).reshape(d - 1, -1).T
        strides = L ** np.arange(d - 2, -1, -1)
        idx = np.arange(nrows)
        for i in range(d - 1):
            out[:, 2 * i] = np.where(rc[:, i] > 0, idx - strides[i], -1)
            out[:, 2 * i + 1] = np.where(rc[:, i] < L - 1, idx + strides[i], -1)
        return out

    @cached_property
    def row_keys(self) -> np.ndarray:
        return np.ascontiguousarray(self.keys[:: self.L])


@dataclass
class ScalarField:
    """Real values on a box plus the exterior values seen by the Laplacian."""

    box: LatticeBox
    values: np.ndarray
    boundary: Boundary = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.box.size,):
            raise ValueError(f"expected {self.box.size} values, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def at(self, pts: np.ndarray) -> np.ndarray:
        """Values at arbitrary lattice points, box or exterior."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.int64))
        inside = np.all(np.abs(pts) <= self.box.N, axis=1)
        out = np.empty(len(pts))
        if inside.any():
            idx = np.ravel_multi_index(tuple((pts[inside] + self.box.N).T), self.box.shape)
            out[inside] = self.values[idx]
        if (~inside).any():
            out[~inside] = _eval_boundary(self.boundary, pts[~inside])
        return out

    @classmethod
    def zeros(cls, box: LatticeBox) -> "ScalarField":
        return cls(box, np.zeros(box.size))

    @classmethod
    def delta(cls, box: LatticeBox, x=None, scale: float = 1.0) -> "ScalarField":
        f = np.zeros(box.size)
        f[box.origin if x is None else box.index(x)] = scale
        return cls(box, f)


def _eval_boundary(boundary: Boundary, pts: np.ndarray) -> np.ndarray:
    if callable(boundary):
        vals = np.asarray(boundary(pts), dtype=float).reshape(len(pts))
    else:
        vals = np.full(len(pts), float(boundary))
    if not np.all(np.isfinite(vals)):
        raise ValueError("boundary values must be finite")
    return vals


def boundary_source(box: LatticeBox, boundary: Boundary = 0.0) -> np.ndarray:
    """Per-site sum of exterior neighbour values.

    With this array the Laplacian of a box field ``f`` is the sum over
    in-box neighbours, plus the source, minus ``2d f``.
    """
    src = np.zeros(box.size)
    if not callable(boundary) and float(boundary) == 0.0:
        return src
    c = box.coords
    for i in range(box.d):
        for sgn in (-1, 1):
            face = c[:, i] == sgn * box.N
            pts = c[face].copy()
            pts[:, i] += sgn
            src[face] += _eval_boundary(boundary, pts)
    return src


def laplacian(f: ScalarField, x) -> float:
    """``sum_{|y-x|=1} (f(y) - f(x))`` at a site of the box."""
    if not f.box.contains(np.asarray(x)):
        raise ValueError(f"site {tuple(np.ravel(x))} is outside the box")
    fx = f.values[f.box.index(x)]
    return float(np.sum(f.at(f.box.neighbors(x)) - fx))


def laplacian_field(f: ScalarField) -> np.ndarray:
    """The Laplacian at every site of the box, vectorized."""
    box = f.box
    g = f.values.reshape(box.shape)
    src = boundary_source(box, f.boundary).reshape(box.shape)
    out = src - 2 * box.d * g
    for i in range(box.d):
        sl_lo = [slice(None)] * box.d
        sl_hi = [slice(None)] * box.d
        sl_lo[i] = slice(0, -1)
        sl_hi[i] = slice(1, None)
        out[tuple(sl_lo)] += g[tuple(sl_hi)]
        out[tuple(sl_hi)] += g[tuple(sl_lo)]
    return out.reshape(-1)


def gradient(f: ScalarField, b) -> float:
    """``f(x_b) - f(y_b)`` for a nearest-neighbour bond ``b = (x, y)``."""
    b = np.asarray(b, dtype=np.int64)
    if b.shape != (2, f.box.d) or np.abs(b[0] - b[1]).sum() != 1:
        raise ValueError("a bond joins two nearest-neighbour sites")
    vx, vy = f.at(b)
    return float(vx - vy)


def weighted_norm(phi1: ScalarField, phi2: ScalarField, r: float) -> float:
    """``sqrt(sum_i sum_x |phi_i(x)|^2 exp(-2 r |x|))`` with Euclidean ``|x|``.

    Only box values enter; fields are taken to vanish outside.
    """
    if not r > 0:
        raise ValueError(f"weight rate must be positive, got {r}")
    if phi1.box != phi2.box:
        raise ValueError("both layers must live on the same box")
    w = np.exp(-2.0 * r * np.linalg.norm(phi1.box.coords, axis=1))
    return float(np.sqrt(np.sum(w * (phi1.values**2 + phi2.values**2))))
