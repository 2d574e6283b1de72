"""Quadratic penalties, their mollified versions and the pair potentials.

The mollified penalty is

    chi_{a,d}(u) = int rho_d(y) chi_a(u + d - y) dy,   rho_d(y) = rho(y/d)/d,

with the bump ``rho(z) = c exp(-1/(1 - z^2))`` on ``(-1, 1)``.  Substituting
``y = d z`` and ``s = u/d`` reduces everything to two one-parameter functions
of ``s``::

    chi_{a,d}(u)  = (d^2 / a) S(s),   S(s) = int rho(z) ((s + 1 - z)^-)^2 / 2 dz
    chi'_{a,d}(u) = (d / a)   T(s),   T(s) = -int rho(z) (s + 1 - z)^- dz

Both vanish for ``s >= 0`` and are explicit for ``s <= -2``, where the
mollifier no longer straddles the kink:
``S(s) = ((s + 1)^2 + m2) / 2`` and ``T(s) = s + 1`` with ``m2 = int z^2 rho``.
Only ``[-2, 0]`` needs quadrature, so a single table of ``T`` serves every
``(a, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np
from scipy import integrate

__all__ = [
    "PenaltyParams",
    "MollifiedPenalty",
    "chi",
    "chi_prime",
    "chi_smoothed",
    "chi_smoothed_prime",
    "w_eps",
    "w_eps_delta",
    "grad_w_eps",
    "grad_w_eps_delta",
    "bump",
    "BUMP_MASS",
    "BUMP_M2",
    "TABLE_SIZE",
]

TABLE_SIZE = 4096
GL_ORDER = 96


def _bump_raw(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    m = np.abs(z) < 1
    out[m] = np.exp(-1.0 / (1.0 - z[m] ** 2))
    return out


BUMP_MASS = integrate.quad(lambda z: float(_bump_raw(z)), -1, 1, epsabs=0, epsrel=1e-13)[0]
BUMP_M2 = integrate.quad(lambda z: z * z * float(_bump_raw(z)), -1, 1, epsabs=0, epsrel=1e-13)[0] / BUMP_MASS


def bump(z):
    """Unit-mass smooth mollifier supported in ``[-1, 1]``."""
    return _bump_raw(z) / BUMP_MASS


@dataclass(frozen=True)
class PenaltyParams:
    """Penalty scales ``eps1`` (wall), ``eps2`` (exclusion) and mollifier width."""

    eps1: float
    eps2: float
    delta: float | None = None

    def __post_init__(self):
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise ValueError(f"penalty scales must be positive, got ({self.eps1}, {self.eps2})")
        if self.delta is not None and not 0 < self.delta <= 1:
            raise ValueError(f"mollifier width must lie in (0, 1], got {self.delta}")


def _check_alpha(alpha):
    if not alpha > 0:
        raise ValueError(f"penalty scale must be positive, got {alpha}")


def _check_delta(delta):
    if not 0 < delta <= 1:
        raise ValueError(f"mollifier width must lie in (0, 1], got {delta}")


def chi(alpha, u):
    """``(u^-)^2 / (2 alpha)``."""
    _check_alpha(alpha)
    un = np.maximum(-np.asarray(u, dtype=float), 0.0)
    return un * un / (2.0 * alpha)


def chi_prime(alpha, u):
    """``-u^- / alpha``."""
    _check_alpha(alpha)
    return -np.maximum(-np.asarray(u, dtype=float), 0.0) / alpha


@lru_cache(maxsize=None)
def _gl(order):
    return np.polynomial.legendre.leggauss(order)


def _kink_quad(s, fn, order):
    """``int_{max(-1, s+1)}^{1} rho(z) fn(s + 1 - z) dz`` for each ``s``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    lo = np.clip(s + 1.0, -1.0, 1.0)
    x, w = _gl(order)
    half = 0.5 * (1.0 - lo)
    z = lo[:, None] + half[:, None] * (x[None, :] + 1.0)
    vals = bump(z) * fn(s[:, None] + 1.0 - z)
    return np.sum(vals * w[None, :], axis=1) * half


def unit_S(s, order=GL_ORDER):
    """``S(s)`` by Gauss-Legendre on the part of the support beyond the kink."""
    s = np.asarray(s, dtype=float)
    flat = np.atleast_1d(s)
    res = np.zeros(flat.shape)
    deep = flat <= -2.0
    res[deep] = 0.5 * ((flat[deep] + 1.0) ** 2 + BUMP_M2)
    mid = (flat > -2.0) & (flat < 0.0)
    if mid.any():
        res[mid] = _kink_quad(flat[mid], lambda w: 0.5 * w * w, order)
    out = res.reshape(np.shape(s))
    return out if np.ndim(s) else float(out)


def unit_T(s, order=GL_ORDER):
    """``T(s)``, the derivative of ``S``."""
    s = np.asarray(s, dtype=float)
    flat = np.atleast_1d(s)
    res = np.zeros(flat.shape)
    deep = flat <= -2.0
    res[deep] = flat[deep] + 1.0
    mid = (flat > -2.0) & (flat < 0.0)
    if mid.any():
        res[mid] = _kink_quad(flat[mid], lambda w: w, order)
    out = res.reshape(np.shape(s))
    return out if np.ndim(s) else float(out)


def unit_T_prime(s, order=GL_ORDER):
    """``T'(s) = int_{z > s+1} rho(z) dz``, the mollifier survival function."""
    s = np.asarray(s, dtype=float)
    flat = np.atleast_1d(s)
    res = np.zeros(flat.shape)
    res[flat <= -2.0] = 1.0
    mid = (flat > -2.0) & (flat < 0.0)
    if mid.any():
        res[mid] = _kink_quad(flat[mid], np.ones_like, order)
    out = res.reshape(np.shape(s))
    return out if np.ndim(s) else float(out)


def chi_smoothed(alpha, delta, u):
    """``chi_{alpha,delta}(u)`` by quadrature."""
    _check_alpha(alpha)
    _check_delta(delta)
    return delta * delta / alpha * unit_S(np.asarray(u, dtype=float) / delta)


def chi_smoothed_prime(alpha, delta, u):
    """``chi'_{alpha,delta}(u)`` by quadrature."""
    _check_alpha(alpha)
    _check_delta(delta)
    return delta / alpha * unit_T(np.asarray(u, dtype=float) / delta)


def _build_table():
    grid = np.linspace(-2.0, 0.0, TABLE_SIZE)
    f = unit_T(grid)
    m = unit_T_prime(grid)
    # endpoints are known exactly
    f[0], m[0] = -1.0, 1.0
    f[-1], m[-1] = 0.0, 0.0
    # flush the exponentially flat end so the interpolant cannot wiggle there
    flat = np.abs(f) < 1e-20
    f[flat] = 0.0
    m[flat] = 0.0
    return f, m, float(grid[1] - grid[0])


TABLE_F, TABLE_M, TABLE_H = _build_table()


@nb.njit(inline="always", cache=True)
def unit_T_interp(s, f, m, h):
    """Cubic Hermite interpolation of ``T`` with exact nodal slopes."""
    if s >= 0.0:
        return 0.0
    if s <= -2.0:
        return s + 1.0
    x = (s + 2.0) / h
    i = int(x)
    if i >= f.shape[0] - 1:
        i = f.shape[0] - 2
    t = x - i
    t2 = t * t
    t3 = t2 * t
    return ((2 * t3 - 3 * t2 + 1) * f[i] + (t3 - 2 * t2 + t) * h * m[i]
            + (-2 * t3 + 3 * t2) * f[i + 1] + (t3 - t2) * h * m[i + 1])


@nb.njit(cache=True)
def _interp_many(s, f, m, h, out):
    for i in range(s.shape[0]):
        out[i] = unit_T_interp(s[i], f, m, h)


class MollifiedPenalty:
    """Tabulated ``chi'_{alpha,delta}`` for use inside drift evaluation."""

    def __init__(self, alpha: float, delta: float):
        _check_alpha(alpha)
        _check_delta(delta)
        self.alpha = float(alpha)
        self.delta = float(delta)

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        s = np.ascontiguousarray(u.reshape(-1) / self.delta)
        out = np.empty_like(s)
        _interp_many(s, TABLE_F, TABLE_M, TABLE_H, out)
        return (self.delta / self.alpha * out).reshape(u.shape)

    def __call__(self, u):
        return chi_smoothed(self.alpha, self.delta, u)


def w_eps(eps, u, v):
    """``chi_{eps1}(u) + chi_{eps2}(v - u)``."""
    e1, e2 = _pair(eps)
    return chi(e1, u) + chi(e2, np.asarray(v) - np.asarray(u))


def grad_w_eps(eps, u, v):
    e1, e2 = _pair(eps)
    g = chi_prime(e2, np.asarray(v) - np.asarray(u))
    return chi_prime(e1, u) - g, g


def w_eps_delta(params: PenaltyParams, u, v):
    """``chi_{eps1,delta}(u) + chi_{eps2,delta}(v - u)``."""
    _need_delta(params)
    return chi_smoothed(params.eps1, params.delta, u) + chi_smoothed(
        params.eps2, params.delta, np.asarray(v) - np.asarray(u))


def grad_w_eps_delta(params: PenaltyParams, u, v):
    """Partial derivatives ``(dW/du, dW/dv)``."""
    _need_delta(params)
    g = chi_smoothed_prime(params.eps2, params.delta, np.asarray(v) - np.asarray(u))
    return chi_smoothed_prime(params.eps1, params.delta, u) - g, g


def _pair(eps):
    if isinstance(eps, PenaltyParams):
        return eps.eps1, eps.eps2
    e1, e2 = eps
    PenaltyParams(e1, e2)
    return float(e1), float(e2)


def _need_delta(params):
    if not isinstance(params, PenaltyParams) or params.delta is None:
        raise ValueError("mollified potential needs PenaltyParams with a width delta")
