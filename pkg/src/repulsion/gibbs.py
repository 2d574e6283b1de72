"""Exact stationary laws on one- and two-site sets, by quadrature.

The dynamics ``d phi = Lap phi dt + sqrt(2) dw`` (zero exterior) is reversible
for ``exp((1/2) sum_x phi Lap phi)`` per layer, that is for the Gaussian with
precision ``A = 2d I - adjacency``.  The two layers are then coupled through
the constraint:

``reflected``  indicator of ``0 <= phi1(x) <= phi2(x)`` at every site
``penalized``  ``exp(-sum_x W_eps(phi1(x), phi2(x)))``
``smoothed``   ``exp(-sum_x W_{eps,delta}(phi1(x), phi2(x)))``

Integrals are taken in the coordinates ``u = phi1(x)``, ``g = phi2(x) - phi1(x)``
per site, where every constraint or penalty kink is axis aligned; each axis is
split at its kinks and integrated by tensor Gauss-Legendre.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import interpolate, special

from .dynamics import Ensemble, SimConfig
from .penalty import PenaltyParams, chi, chi_smoothed

__all__ = [
    "SmallGibbs",
    "StationarityReport",
    "stationary_density",
    "stationarity_test",
    "ks_distance",
    "reflected_site_cdf",
]

VARIANTS = ("reflected", "penalized", "smoothed")
TRUNCATION_SIGMAS = 8.0
GL_POINTS = 40
MIN_SAMPLES = 1000


@dataclass
class SmallGibbs:
    """Stationary law of both layers on at most two sites (zero exterior)."""

    sites: np.ndarray
    variant: str = "reflected"
    params: PenaltyParams | None = None
    gl_points: int = GL_POINTS

    def __post_init__(self):
        self.sites = np.atleast_2d(np.asarray(self.sites, dtype=np.int64))
        k, d = self.sites.shape
        if not 1 <= k <= 2:
            raise ValueError(f"quadrature oracle supports at most 2 sites, got {k}")
        if k == 2 and np.all(self.sites[0] == self.sites[1]):
            raise ValueError("sites must be distinct")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant != "reflected":
            if self.params is None:
                raise ValueError(f"{self.variant} variant needs penalty parameters")
            if self.variant == "smoothed" and self.params.delta is None:
                raise ValueError("smoothed variant needs a mollifier width")
        self.d = d
        self.k = k
        adj = np.zeros((k, k))
        if k == 2 and np.abs(self.sites[0] - self.sites[1]).sum() == 1:
            adj[0, 1] = adj[1, 0] = 1.0
        self.precision = 2.0 * d * np.eye(k) - adj
        self.sigma = float(np.sqrt(np.max(np.diag(np.linalg.inv(self.precision)))))

    # density

    def log_density(self, phi1: np.ndarray, phi2: np.ndarray) -> np.ndarray:
        """Unnormalized log density; ``phi*`` have shape ``(m, k)``."""
        A = self.precision
        q = 0.5 * (np.einsum("mi,ij,mj->m", phi1, A, phi1) + np.einsum("mi,ij,mj->m", phi2, A, phi2))
        if self.variant == "reflected":
            ok = np.all((phi1 >= 0) & (phi2 >= phi1), axis=1)
            return np.where(ok, -q, -np.inf)
        p = self.params
        if self.variant == "penalized":
            w = chi(p.eps1, phi1) + chi(p.eps2, phi2 - phi1)
        else:
            w = chi_smoothed(p.eps1, p.delta, phi1) + chi_smoothed(p.eps2, p.delta, phi2 - phi1)
        return -q - w.sum(axis=1)

    def density(self, phi1, phi2):
        phi1 = np.atleast_2d(phi1)
        phi2 = np.atleast_2d(phi2)
        return np.exp(self.log_density(phi1, phi2))

    # quadrature

    def _breaks(self):
        """Per-axis breakpoints for ``u`` and ``g``."""
        hi_u = TRUNCATION_SIGMAS * self.sigma
        hi_g = 2 * TRUNCATION_SIGMAS * self.sigma
        if self.variant == "reflected":
            return [0.0, 0.5 * hi_u, hi_u], [0.0, 0.25 * hi_g, hi_g]
        p = self.params
        # below the kink the penalty adds curvature 1/eps
        lo_u = -TRUNCATION_SIGMAS / math.sqrt(2 * self.d + 1.0 / p.eps1)
        lo_g = -TRUNCATION_SIGMAS / math.sqrt(1.0 / p.eps2)
        bu = [lo_u, 0.0, 0.5 * hi_u, hi_u]
        bg = [lo_g, 0.0, 0.25 * hi_g, hi_g]
        if self.variant == "smoothed":
            # mollified kink occupies [-2 delta, 0]
            bu = sorted(set(bu + [-2 * p.delta, -p.delta]))
            bg = sorted(set(bg + [-2 * p.delta, -p.delta]))
            bu = [b for b in bu if b >= lo_u - 2 * p.delta]
            bg = [b for b in bg if b >= lo_g - 2 * p.delta]
            bu[0] = min(bu[0], lo_u - 2 * p.delta)
            bg[0] = min(bg[0], lo_g - 2 * p.delta)
        return bu, bg

    def _axis_nodes(self, breaks):
        x, w = np.polynomial.legendre.leggauss(self.gl_points)
        nodes, weights = [], []
        for a, b in zip(breaks[:-1], breaks[1:]):
            nodes.append(0.5 * (b - a) * (x + 1) + a)
            weights.append(0.5 * (b - a) * w)
        return np.concatenate(nodes), np.concatenate(weights)

    @cached_property
    def _grid(self):
        bu, bg = self._breaks()
        nu, wu = self._axis_nodes(bu)
        ng, wg = self._axis_nodes(bg)
        axes = [(nu, wu), (ng, wg)] * self.k
        pts = np.stack(np.meshgrid(*[a[0] for a in axes], indexing="ij"), -1).reshape(-1, 2 * self.k)
        wts = np.ones(1)
        for _, w in axes:
            wts = np.multiply.outer(wts, w)
        wts = wts.reshape(-1)
        u = pts[:, 0::2]
        g = pts[:, 1::2]
        dens = np.exp(self.log_density(u, u + g))
        return u, g, wts * dens

    @cached_property
    def normalizer(self) -> float:
        return float(self._grid[2].sum())

    def expectation(self, fn) -> float:
        """``E[fn(phi1, phi2)]`` with ``phi*`` of shape ``(m, k)``."""
        u, g, w = self._grid
        return float(np.sum(w * fn(u, u + g)) / self.normalizer)

    def moments(self, site: int = 0) -> dict:
        out = {}
        for name, fn in (("phi1", lambda a, b: a[:, site]), ("phi2", lambda a, b: b[:, site]),
                         ("gap", lambda a, b: b[:, site] - a[:, site])):
            m1 = self.expectation(fn)
            m2 = self.expectation(lambda a, b, f=fn: f(a, b) ** 2)
            out[name] = (m1, m2 - m1 * m1)
        return out

    def _other_nodes(self, site):
        """Tensor nodes and weights over the variables of the other site."""
        if self.k == 1:
            return np.zeros((1, 0)), np.zeros((1, 0)), np.ones(1)
        bu, bg = self._breaks()
        nu, wu = self._axis_nodes(bu)
        ng, wg = self._axis_nodes(bg)
        U, G = np.meshgrid(nu, ng, indexing="ij")
        return U.reshape(-1, 1), G.reshape(-1, 1), np.multiply.outer(wu, wg).reshape(-1)

    def marginal_density(self, which: str, x, site: int = 0) -> np.ndarray:
        """Normalized density of ``phi1``, ``phi2`` or ``gap`` at one site."""
        if which not in ("phi1", "phi2", "gap"):
            raise ValueError(f"unknown marginal {which!r}")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        bu, bg = self._breaks()
        ou, og, ow = self._other_nodes(site)
        xg, wg = np.polynomial.legendre.leggauss(self.gl_points)
        out = np.empty(len(x))
        for j, xv in enumerate(x):
            if which == "phi1":
                breaks = bg
            elif which == "gap":
                breaks = bu
            else:
                # u = x - g; kinks of u translate into g = x - b
                lo, hi = bg[0], bg[-1]
                breaks = sorted({lo, hi, *[xv - b for b in bu if lo < xv - b < hi], *bg})
            nodes, wts = [], []
            for a, b in zip(breaks[:-1], breaks[1:]):
                nodes.append(0.5 * (b - a) * (xg + 1) + a)
                wts.append(0.5 * (b - a) * wg)
            t = np.concatenate(nodes)
            tw = np.concatenate(wts)
            if which == "phi1":
                u0, g0 = np.full_like(t, xv), t
            elif which == "gap":
                u0, g0 = t, np.full_like(t, xv)
            else:
                u0, g0 = xv - t, t
            m, q = len(t), len(ow)
            u = np.empty((m, q, self.k))
            g = np.empty((m, q, self.k))
            u[:, :, site] = u0[:, None]
            g[:, :, site] = g0[:, None]
            if self.k == 2:
                u[:, :, 1 - site] = ou[None, :, 0]
                g[:, :, 1 - site] = og[None, :, 0]
            u = u.reshape(-1, self.k)
            g = g.reshape(-1, self.k)
            dens = np.exp(self.log_density(u, u + g)).reshape(m, q)
            out[j] = tw @ dens @ ow
        return out / self.normalizer

    def marginal_cdf(self, which: str, site: int = 0, panels: int | None = None):
        """CDF of ``phi1``, ``phi2`` or ``gap`` at one site, as a callable.

        The density is integrated exactly panel by panel and the CDF is then
        cubic-Hermite interpolated with the density as its slope.
        """
        if panels is None:
            panels = 4000 if self.k == 1 else 200
        bu, bg = self._breaks()
        if which == "phi1":
            lo, hi, kinks = bu[0], bu[-1], bu
        elif which == "gap":
            lo, hi, kinks = bg[0], bg[-1], bg
        else:
            lo, hi = bu[0] + bg[0], bu[-1]
            kinks = sorted({*bu, *bg, *[a + b for a in bu for b in bg]})
        kinks = [k for k in kinks if lo <= k <= hi]
        nodes = np.unique(np.concatenate([np.linspace(lo, hi, panels + 1), kinks]))
        f = self.marginal_density(which, nodes, site)
        xg, wg = np.polynomial.legendre.leggauss(8)
        a, b = nodes[:-1], nodes[1:]
        pts = (0.5 * (b - a)[:, None] * (xg + 1)[None, :] + a[:, None]).reshape(-1)
        fp = self.marginal_density(which, pts, site).reshape(len(a), -1)
        mass = 0.5 * (b - a) * (fp @ wg)
        F = np.concatenate([[0.0], np.cumsum(mass)])
        spline = interpolate.CubicHermiteSpline(nodes, F, f)
        return _SplineCDF(spline, lo, hi)

    # sampling

    def sample(self, n: int, rng: np.random.Generator, batch: int = 1 << 18) -> tuple:
        """Exact draws by rejection from the unconstrained Gaussian.

        Acceptance probability is the indicator (reflected) or ``exp(-W)``
        (penalty variants), both at most 1.
        """
        L = np.linalg.cholesky(np.linalg.inv(self.precision))
        out1, out2 = [], []
        got = 0
        while got < n:
            z1 = rng.standard_normal((batch, self.k)) @ L.T
            z2 = rng.standard_normal((batch, self.k)) @ L.T
            if self.variant == "reflected":
                acc = np.all((z1 >= 0) & (z2 >= z1), axis=1)
            else:
                q = 0.5 * (np.einsum("mi,ij,mj->m", z1, self.precision, z1)
                           + np.einsum("mi,ij,mj->m", z2, self.precision, z2))
                logw = self.log_density(z1, z2) + q
                acc = rng.random(batch) < np.exp(logw)
            out1.append(z1[acc])
            out2.append(z2[acc])
            got += int(acc.sum())
        return np.concatenate(out1)[:n], np.concatenate(out2)[:n]


class _SplineCDF:
    def __init__(self, spline, lo, hi):
        self.spline = spline
        self.lo = lo
        self.hi = hi

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        return np.clip(self.spline(np.clip(q, self.lo, self.hi)), 0.0, 1.0)


def reflected_site_cdf(which: str, d: int = 1):
    """Closed-form marginals of the single-site reflected law.

    On one site the law is that of ``(|X|, |Y|)`` sorted, ``X, Y`` iid
    ``N(0, 1/(2d))``; so ``P(|X| > a) = erfc(a sqrt d)``.
    """
    s = math.sqrt(d)
    if which == "phi1":
        return lambda a: np.where(np.asarray(a) < 0, 0.0, 1.0 - special.erfc(np.asarray(a) * s) ** 2)
    if which == "phi2":
        return lambda a: np.where(np.asarray(a) < 0, 0.0, special.erf(np.asarray(a) * s) ** 2)
    raise ValueError("closed form available for phi1 and phi2 only")


def stationary_density(sites, variant: str = "reflected", params: PenaltyParams | None = None) -> SmallGibbs:
    """Build the quadrature oracle on ``sites`` (one or two lattice points)."""
    return SmallGibbs(np.atleast_2d(sites), variant, params)


def ks_distance(sample: np.ndarray, cdf) -> float:
    """Two-sided Kolmogorov-Smirnov distance between a sample and a CDF."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("empty sample")
    F = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


@dataclass
class StationarityReport:
    ks: dict
    samples: int
    dt: float
    burn_in_steps: int
    tolerance: float | None = None
    flagged: bool = False
    moments: dict = field(default_factory=dict)

    @property
    def max_ks(self) -> float:
        return max(self.ks.values())

    @property
    def passed(self) -> bool:
        return not self.flagged and (self.tolerance is None or self.max_ks <= self.tolerance)


def stationarity_test(config: SimConfig, variant: str = "reflected", burn_in: int = 1000,
                      samples: int = 10**6, seed: int = 0, tolerance: float | None = None,
                      chunk: int = 1 << 17) -> StationarityReport:
    """Run the single-site dynamics from exact oracle draws and compare marginals.

    Each replica starts from an independent exact sample, runs ``burn_in``
    steps and contributes its final state, so the samples are independent.
    """
    if config.N != 0:
        raise ValueError("stationarity oracle is single-site: use N = 0")
    if any(b != 0 for b in config.boundary):
        raise ValueError("oracle assumes zero exterior values")
    oracle = SmallGibbs(np.zeros((1, config.d), dtype=np.int64), variant, config.penalty)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x61BB5]))
    x1 = np.empty(samples)
    x2 = np.empty(samples)
    for start in range(0, samples, chunk):
        m = min(chunk, samples - start)
        s1, s2 = oracle.sample(m, rng)
        ens = Ensemble(config, seed, m, first_replica=start, phi1=s1, phi2=s2)
        ens.advance(burn_in)
        ens.check_finite()
        f1, f2 = ens.layers()
        x1[start:start + m] = f1[:, 0]
        x2[start:start + m] = f2[:, 0]
    ks = {
        "phi1": ks_distance(x1, oracle.marginal_cdf("phi1")),
        "phi2": ks_distance(x2, oracle.marginal_cdf("phi2")),
        "gap": ks_distance(x2 - x1, oracle.marginal_cdf("gap")),
    }
    mom = {"phi1": (x1.mean(), x1.var()), "phi2": (x2.mean(), x2.var()), "gap": ((x2 - x1).mean(), (x2 - x1).var())}
    return StationarityReport(ks, samples, config.dt, burn_in, tolerance, samples < MIN_SAMPLES, mom)
