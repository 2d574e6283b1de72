"""Heat kernels of the walk generated by ``2 Lap`` and the derived constants.

On the full lattice each coordinate performs an independent walk jumping to
each neighbour at rate 2, so

    p_t(x, y) = prod_i exp(-4t) I_{|x_i - y_i|}(4t).

On a box with absorbing exterior the 1-d Dirichlet Laplacian on ``M = 2N + 1``
points is diagonal in the sine basis with eigenvalues
``-4 sin^2(k pi / (2(M + 1)))``, and the box kernel is the product of 1-d
kernels over coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .lattice import LatticeBox

__all__ = [
    "HeatKernel",
    "DirichletKernel",
    "kernel_infinite",
    "kernel_1d",
    "kernel_dirichlet",
    "dirichlet_matrix",
    "truncation_radius",
    "return_probability",
    "heat_integral",
    "green_constant",
    "log_rate_2d",
    "log_rate_quotient",
    "extrapolate_log_rate",
    "c2_constant",
    "variance_bound",
    "log_d",
]

# e^{-z} I_0(z) ~ (2 pi z)^{-1/2} (1 + 1/(8z) + 9/(128 z^2) + 75/(1024 z^3))
_ASYMP = (1.0, 1.0 / 8, 9.0 / 128, 75.0 / 1024)
_SPLIT = 1000.0  # quadrature to here, asymptotic series beyond


def _check_t(t):
    if not t >= 0:
        raise ValueError(f"time must be non-negative, got {t}")


def kernel_1d(t: float, k) -> np.ndarray:
    """``exp(-4t) I_|k|(4t)``, the 1-d transition probability over distance ``k``."""
    _check_t(t)
    return special.ive(np.abs(np.asarray(k)), 4.0 * t)


def kernel_infinite(d: int, t: float, x, y) -> float:
    """``p_t(x, y)`` on the full lattice ``Z^d``."""
    _check_t(t)
    diff = np.abs(np.asarray(x, dtype=np.int64) - np.asarray(y, dtype=np.int64)).reshape(-1)
    if diff.shape != (d,):
        raise ValueError(f"expected {d}-dimensional sites")
    return float(np.prod(kernel_1d(t, diff)))


def truncation_radius(t: float) -> int:
    """Per-coordinate radius beyond which the kernel mass is negligible (< 1e-12)."""
    _check_t(t)
    return int(math.ceil(4 * t + 12 * math.sqrt(4 * t) + 20))


@dataclass(frozen=True)
class HeatKernel:
    """``p_t`` on ``Z^d`` as a callable of ``(x, y)``."""

    d: int
    t: float

    def __post_init__(self):
        _check_t(self.t)

    def __call__(self, x, y) -> float:
        return kernel_infinite(self.d, self.t, x, y)

    def profile(self, R: int | None = None) -> np.ndarray:
        """``p_t(0, y)`` on the cube ``|y_i| <= R`` as a d-dimensional array."""
        R = truncation_radius(self.t) if R is None else R
        k = kernel_1d(self.t, np.arange(-R, R + 1))
        out = k
        for _ in range(self.d - 1):
            out = np.multiply.outer(out, k)
        return out


@lru_cache(maxsize=64)
def _sine_basis(M: int):
    k = np.arange(1, M + 1)
    i = np.arange(1, M + 1)
    V = math.sqrt(2.0 / (M + 1)) * np.sin(np.pi * np.outer(i, k) / (M + 1))
    lam = -4.0 * np.sin(k * np.pi / (2.0 * (M + 1))) ** 2
    return V, lam


def _dirichlet_1d(M: int, t: float) -> np.ndarray:
    V, lam = _sine_basis(M)
    return (V * np.exp(2.0 * t * lam)) @ V.T


def kernel_dirichlet(box: LatticeBox, t: float, x, y) -> float:
    """``p^box_t(x, y)``: the walk killed on leaving the box."""
    _check_t(t)
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if not (box.contains(x) and box.contains(y)):
        raise ValueError("Dirichlet kernel is defined for sites inside the box")
    K1 = _dirichlet_1d(box.L, t)
    return float(np.prod(K1[x + box.N, y + box.N]))


def dirichlet_matrix(box: LatticeBox, t: float) -> np.ndarray:
    """The full matrix ``p^box_t`` in the box's site order (Kronecker product)."""
    _check_t(t)
    K1 = _dirichlet_1d(box.L, t)
    out = K1
    for _ in range(box.d - 1):
        out = np.kron(out, K1)
    return out


@dataclass(frozen=True)
class DirichletKernel:
    box: LatticeBox
    t: float

    def __post_init__(self):
        _check_t(self.t)

    def __call__(self, x, y) -> float:
        return kernel_dirichlet(self.box, self.t, x, y)

    @property
    def matrix(self) -> np.ndarray:
        return dirichlet_matrix(self.box, self.t)


def return_probability(t, d: int):
    """``p_t(0, 0) = (exp(-4t) I_0(4t))^d``."""
    return special.ive(0, 4.0 * np.asarray(t, dtype=float)) ** d


def _tail_coeffs(d: int):
    # (1 + a1/z + a2/z^2 + a3/z^3)^d in powers of 1/t with z = 4t
    poly = np.array([1.0])
    base = np.array([_ASYMP[k] / 4.0**k for k in range(4)])
    for _ in range(d):
        poly = np.convolve(poly, base)[:4]
    return poly


def _tail_integral(d: int, T0: float) -> float:
    """``int_T0^inf p_t(0,0) dt`` from the asymptotic series (d >= 3)."""
    c = _tail_coeffs(d)
    pref = (8.0 * math.pi) ** (-d / 2.0)
    return pref * sum(c[k] * T0 ** (1.0 - d / 2.0 - k) / (d / 2.0 + k - 1.0) for k in range(4))


def _quad(f, a, b):
    # geometric subintervals keep the adaptive rule efficient on a long range
    edges = [a] + [e for e in (1.0, 10.0, 100.0, 1000.0, 1e4, 1e5, 1e6) if a < e < b] + [b]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return total


def heat_integral(t: float, d: int) -> float:
    """``int_0^t p_s(0, 0) ds``."""
    _check_t(t)
    if t == 0:
        return 0.0
    return _quad(lambda s: float(return_probability(s, d)), 0.0, float(t))


def green_constant(d: int) -> float:
    """``C_1 = int_0^inf p_t(0, 0) dt`` for ``d >= 3``."""
    if d <= 2:
        raise ValueError("the integral diverges for d <= 2; use log_rate_2d")
    return heat_integral(_SPLIT, d) + _tail_integral(d, _SPLIT)


def log_rate_2d() -> float:
    """``lim (1/log t) int_0^t p_s(0,0) ds`` in d = 2, equal to ``1/(8 pi)``."""
    return 1.0 / (8.0 * math.pi)


def log_rate_quotient(t: float) -> float:
    """The finite-t quotient ``(1/log t) int_0^t p_s(0,0) ds`` in d = 2."""
    if not t > 1:
        raise ValueError("need t > 1")
    return heat_integral(t, 2) / math.log(t)


def extrapolate_log_rate(ts=(1e3, 1e4, 1e5)) -> float:
    """Least-squares fit ``q(t) = a + b / log t`` and return ``a``.

    The integral grows like ``log(t)/(8 pi) + const``, so this form is exact
    up to ``O(1/t)``.
    """
    ts = np.asarray(ts, dtype=float)
    q = np.array([log_rate_quotient(t) for t in ts])
    A = np.column_stack([np.ones_like(ts), 1.0 / np.log(ts)])
    coef, *_ = np.linalg.lstsq(A, q, rcond=None)
    return float(coef[0])


def c2_constant(d: int) -> float:
    """``C_2 = (sqrt2 + 1)^2 C_1``; in d = 2 ``C_1`` is the logarithmic rate."""
    if d < 2:
        raise ValueError("defined for d >= 2")
    c1 = log_rate_2d() if d == 2 else green_constant(d)
    return (3.0 + 2.0 * math.sqrt(2.0)) * c1


def variance_bound(t: float, d: int) -> float:
    """``4 int_0^t p_{2r}(0, 0) dr = 2 int_0^{2t} p_s(0, 0) ds``."""
    _check_t(t)
    return 2.0 * heat_integral(2.0 * t, d)


def log_d(t, d: int):
    """``(log t)^2`` for d = 2 and ``log t`` for d >= 3."""
    if d < 2:
        raise ValueError("log_d is defined for d >= 2")
    lt = np.log(np.asarray(t, dtype=float))
    return lt**2 if d == 2 else lt
