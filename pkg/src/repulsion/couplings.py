"""Pathwise comparisons under common noise.

Each check runs two or more ensembles that share the seed, hence identical
Gaussian increments at every (replica, layer, site, step), and records the
largest signed violation of the claimed ordering over all replicas, sites,
layers and sampled steps.  A check passes when that maximum is at most the
tolerance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import Ensemble, SimConfig, steps_for
from .heatkernel import kernel_1d
from .lattice import LatticeBox
from .penalty import PenaltyParams

__all__ = [
    "CouplingReport",
    "check_box_monotonicity",
    "check_infinite_comparison",
    "check_initial_monotonicity",
    "check_eps1_monotonicity",
    "check_eps2_rotated",
    "check_aux_ordering",
    "check_penalized_convergence",
    "check_law_identity",
    "ConvergenceReport",
    "LawReport",
    "embed",
    "contraction_kernel",
    "euler_kernel",
]

TOLERANCE = 1e-8


@dataclass
class CouplingReport:
    experiment: str
    samples: int
    max_violation: float
    violation_rate: float
    tolerance: float = TOLERANCE
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_violation <= self.tolerance)

    def row(self, seed: int) -> dict:
        return {"experiment": self.experiment, "seed": seed, "max_violation": self.max_violation,
                "tolerance": self.tolerance, "pass": self.passed}


class _Tracker:
    """Running maximum and exceedance count of ``lhs - rhs``."""

    def __init__(self, tol):
        self.tol = tol
        self.max = -np.inf
        self.bad = 0
        self.count = 0

    def update(self, diff: np.ndarray):
        if diff.size:
            self.max = max(self.max, float(diff.max()))
            self.bad += int(np.count_nonzero(diff > self.tol))
            self.count += diff.size

    def report(self, name, **details) -> CouplingReport:
        rate = self.bad / self.count if self.count else 0.0
        return CouplingReport(name, self.count, self.max, rate, self.tol, details)


def _sample_steps(n_steps: int, every: int) -> list:
    if every < 1:
        raise ValueError("sampling stride must be at least one step")
    steps = list(range(every, n_steps + 1, every))
    if not steps or steps[-1] != n_steps:
        steps.append(n_steps)
    return [s for s in steps if s > 0]


def embed(small: LatticeBox, big: LatticeBox, values: np.ndarray) -> np.ndarray:
    """Place fields of ``small`` (last axis = sites) into ``big``, zero elsewhere."""
    if small.d != big.d or small.N > big.N:
        raise ValueError("boxes must be nested")
    idx = np.ravel_multi_index(tuple((small.coords + big.N).T), big.shape)
    out = np.zeros(values.shape[:-1] + (big.size,))
    out[..., idx] = values
    return out


def _small_index(small: LatticeBox, big: LatticeBox) -> np.ndarray:
    return np.ravel_multi_index(tuple((small.coords + big.N).T), big.shape)


def check_box_monotonicity(config: SimConfig, N_big: int, seed: int = 0, replicas: int = 50,
                           every: int = 1, tolerance: float = TOLERANCE, name: str = "box_monotonicity"
                           ) -> CouplingReport:
    """``Phi^small <= Phi^big`` on the small box, initial data supported in it."""
    if N_big < config.N:
        raise ValueError("the second box must contain the first")
    if any(b != 0 for b in config.boundary):
        raise ValueError("initial data must be supported in the small box (zero exterior)")
    small = Ensemble(config, seed, replicas)
    big_cfg = config.with_(N=N_big)
    big = Ensemble(big_cfg, seed, replicas, phi1=embed(small.box, big_cfg.box, small.p1),
                   phi2=embed(small.box, big_cfg.box, small.p2))
    idx = _small_index(small.box, big.box)
    tr = _Tracker(tolerance)
    for s in _sample_steps(config.n_steps, every):
        small.advance(s - small.step)
        big.advance(s - big.step)
        tr.update(small.p1 - big.p1[:, idx])
        tr.update(small.p2 - big.p2[:, idx])
    small.check_finite()
    big.check_finite()
    return tr.report(name, N=config.N, N_big=N_big, scheme=config.scheme)


def check_infinite_comparison(config: SimConfig, factor: int = 4, seed: int = 0, replicas: int = 50,
                              every: int = 1, tolerance: float = TOLERANCE) -> CouplingReport:
    """``Phi^box <= Phi`` with the full-lattice system proxied by a box ``factor`` times wider.

    Valid while ``T <= N_proxy^2 / 8`` so the proxy's own boundary stays
    out of reach of the diffusion.
    """
    if factor < 4:
        raise ValueError("the proxy box must be at least 4 times wider")
    N_big = max(factor * config.N, factor)
    if config.T > N_big**2 / 8:
        raise ValueError(f"horizon {config.T} too long for a proxy of half-width {N_big}")
    return check_box_monotonicity(config, N_big, seed, replicas, every, tolerance, "infinite_comparison")


def contraction_kernel(d: int, t: float, R: int) -> np.ndarray:
    """Profile ``q_t(0, z)``, ``|z_i| <= R``, of the semigroup generated by ``Lap``.

    Differences of two solutions are transported by the drift ``Lap``, so the
    bound uses ``exp(t Lap)``; in terms of the ``2 Lap`` kernel this is
    ``p_{t/2}``.
    """
    k = kernel_1d(t / 2.0, np.arange(-R, R + 1))
    out = k
    for _ in range(d - 1):
        out = np.multiply.outer(out, k)
    return out


def euler_kernel(d: int, dt: float, n: int, R: int) -> np.ndarray:
    """Profile of ``(I + dt Lap)^n`` on the full lattice, ``|z_i| <= R``.

    Computed exactly by repeated stencil application on a grid wide enough
    that the finite propagation speed keeps it from touching the edge.
    """
    W = max(R, n) + 1
    shape = (2 * W + 1,) * d
    f = np.zeros(shape)
    f[(W,) * d] = 1.0
    for _ in range(n):
        g = (1.0 - 2 * d * dt) * f
        for i in range(d):
            g += dt * (np.roll(f, 1, axis=i) + np.roll(f, -1, axis=i))
        f = g
    sl = tuple(slice(W - R, W + R + 1) for _ in range(d))
    return f[sl]


def _apply_profile(box: LatticeBox, profile: np.ndarray, field_: np.ndarray) -> np.ndarray:
    """``sum_y K(x - y) f(y)`` over the box for each replica row of ``field_``."""
    R = (profile.shape[0] - 1) // 2
    diff = box.coords[:, None, :] - box.coords[None, :, :] + R
    Kmat = profile[tuple(diff[..., i] for i in range(box.d))]
    return field_ @ Kmat.T


def check_initial_monotonicity(config: SimConfig, phi0: tuple, phi0_tilde: tuple, seed: int = 0,
                               replicas: int = 50, every: int = 1, tolerance: float = TOLERANCE,
                               kernel: str = "euler") -> CouplingReport:
    """Ordering ``Phi <= Phi~`` from ordered data, and the contraction bound

        sum_i (phi~_i - phi_i)_t(x) <= sum_y q_t(x, y) sum_i (phi~_i - phi_i)_0(y)

    with ``q_t`` from :func:`contraction_kernel` (``kernel="continuum"``) or
    the time-discrete :func:`euler_kernel` (``kernel="euler"``).  The
    violation reported is the larger of the two checks.
    """
    if config.scheme != "smoothed":
        raise ValueError("initial monotonicity is stated for the smoothed scheme")
    if kernel not in ("continuum", "euler"):
        raise ValueError("kernel must be 'continuum' or 'euler'")
    p1, p2 = (np.asarray(a, dtype=float) for a in phi0)
    q1, q2 = (np.asarray(a, dtype=float) for a in phi0_tilde)
    if np.any(p1 > q1) or np.any(p2 > q2):
        raise ValueError("initial data must be ordered: phi0 <= phi0_tilde")
    lo = Ensemble(config, seed, replicas, phi1=p1, phi2=p2)
    hi = Ensemble(config, seed, replicas, phi1=q1, phi2=q2)
    D0 = (hi.p1 - lo.p1) + (hi.p2 - lo.p2)
    order = _Tracker(tolerance)
    bound = _Tracker(tolerance)
    box = config.box
    R = 2 * box.N
    slack_min = np.inf
    for s in _sample_steps(config.n_steps, every):
        lo.advance(s - lo.step)
        hi.advance(s - hi.step)
        order.update(lo.p1 - hi.p1)
        order.update(lo.p2 - hi.p2)
        if kernel == "continuum":
            prof = contraction_kernel(box.d, s * config.dt, R)
        else:
            prof = euler_kernel(box.d, config.dt, s, R)
        rhs = _apply_profile(box, prof, D0)
        lhs = (hi.p1 - lo.p1) + (hi.p2 - lo.p2)
        bound.update(lhs - rhs)
        slack_min = min(slack_min, float((rhs - lhs).min()))
    rep = order.report("initial_monotonicity")
    rep.samples += bound.count
    rep.details = {"order_violation": order.max, "bound_violation": bound.max,
                   "min_slack": slack_min, "kernel": kernel}
    rep.max_violation = max(order.max, bound.max)
    rep.violation_rate = (order.bad + bound.bad) / max(order.count + bound.count, 1)
    return rep


def _chain_check(name, configs: Sequence[SimConfig], seed, replicas, every, tolerance, rotated=False):
    ens = [Ensemble(c, seed, replicas) for c in configs]
    tr = _Tracker(tolerance)
    n = configs[0].n_steps
    for s in _sample_steps(n, every):
        for e in ens:
            e.advance(s - e.step)
        for a, b in zip(ens[:-1], ens[1:]):
            tr.update(a.p1 - b.p1)
            tr.update(a.p2 - b.p2)
    for e in ens:
        e.check_finite()
    return tr


def check_eps1_monotonicity(config: SimConfig, eps1: Sequence[float], seed: int = 0, replicas: int = 50,
                            every: int = 1, tolerance: float = TOLERANCE) -> CouplingReport:
    """``Phi^eps <= Phi^eps'`` for wall scales ``eps1 >= eps1'`` at fixed ``eps2``."""
    if config.scheme != "penalized" or config.penalty is None:
        raise ValueError("eps1 monotonicity is stated for the penalized scheme")
    eps1 = [float(e) for e in eps1]
    if any(a < b for a, b in zip(eps1[:-1], eps1[1:])):
        raise ValueError("eps1 values must be non-increasing")
    cfgs = [config.with_(penalty=PenaltyParams(e, config.penalty.eps2, config.penalty.delta)) for e in eps1]
    tr = _chain_check("eps1", cfgs, seed, replicas, every, tolerance)
    return tr.report("eps1_monotonicity", eps1=eps1, eps2=config.penalty.eps2)


def check_eps2_rotated(config: SimConfig, eps2: Sequence[float], seed: int = 0, replicas: int = 50,
                       every: int = 1, tolerance: float = TOLERANCE) -> CouplingReport:
    """``Psi^eps <= Psi^eps'`` (rotated coordinates) for ``eps2 >= eps2'``."""
    if config.scheme != "rotated" or config.penalty is None:
        raise ValueError("eps2 monotonicity is stated for the rotated scheme")
    eps2 = [float(e) for e in eps2]
    if any(a < b for a, b in zip(eps2[:-1], eps2[1:])):
        raise ValueError("eps2 values must be non-increasing")
    cfgs = [config.with_(penalty=PenaltyParams(config.penalty.eps1, e, config.penalty.delta)) for e in eps2]
    tr = _chain_check("eps2", cfgs, seed, replicas, every, tolerance)
    return tr.report("eps2_rotated", eps1=config.penalty.eps1, eps2=eps2)


def check_aux_ordering(config: SimConfig, seed: int = 0, replicas: int = 50, every: int = 1,
                       tolerance: float = TOLERANCE) -> CouplingReport:
    """``Phi <= Phi~`` (reflected vs wall-only) and ``psi~ <= psi^`` (gaps of
    wall-only vs no-wall), all three systems on common noise and data."""
    refl = Ensemble(config.with_(scheme="reflected"), seed, replicas)
    wall = Ensemble(config.with_(scheme="wall_only"), seed, replicas, phi1=refl.p1, phi2=refl.p2)
    free = Ensemble(config.with_(scheme="no_wall"), seed, replicas, phi1=refl.p1, phi2=refl.p2)
    t_phi = _Tracker(tolerance)
    t_gap = _Tracker(tolerance)
    for s in _sample_steps(config.n_steps, every):
        for e in (refl, wall, free):
            e.advance(s - e.step)
        t_phi.update(refl.p1 - wall.p1)
        t_phi.update(refl.p2 - wall.p2)
        t_gap.update((wall.p2 - wall.p1) - (free.p2 - free.p1))
    rep = t_phi.report("aux_ordering")
    rep.samples += t_gap.count
    rep.max_violation = max(t_phi.max, t_gap.max)
    rep.violation_rate = (t_phi.bad + t_gap.bad) / max(t_phi.count + t_gap.count, 1)
    rep.details = {"wall_only_violation": t_phi.max, "gap_violation": t_gap.max}
    return rep


@dataclass
class ConvergenceReport:
    params: list
    dts: list
    mean_sq: list
    stderr_sq: list

    @property
    def l2(self) -> list:
        return [math.sqrt(m) for m in self.mean_sq]

    @property
    def l2_stderr(self) -> list:
        # delta method for sqrt of a mean
        return [s / (2 * math.sqrt(m)) if m > 0 else 0.0 for m, s in zip(self.mean_sq, self.stderr_sq)]

    def decreasing(self, z: float = 2.0, allowed: int = 1) -> bool:
        """Mean squared distances decrease along the sequence, up to ``allowed``
        increases each within ``z`` combined stderrs."""
        m, s = self.mean_sq, self.stderr_sq
        ups = [i for i in range(len(m) - 1) if m[i + 1] > m[i]]
        return len(ups) <= allowed and all(m[i + 1] - m[i] <= z * math.hypot(s[i], s[i + 1]) for i in ups)


def check_penalized_convergence(config: SimConfig, params: Sequence[PenaltyParams], seed: int = 0,
                                replicas: int = 2000, dt_factor: float = 1 / 8) -> ConvergenceReport:
    """Mean squared distance ``E sum_{x,i} |phi_i - phi_i^eps|^2`` at time ``config.T``.

    For each parameter set both the reflected scheme and ``config.scheme``
    (``penalized`` or ``smoothed``) run with ``dt = dt_factor * min(eps)`` and
    common noise.
    """
    if config.scheme not in ("penalized", "smoothed"):
        raise ValueError("convergence compares a penalized or smoothed scheme to the reflected one")
    if dt_factor > 0.25:
        raise ValueError("dt must be refined with eps: dt_factor above 1/4 is unstable")
    out = ConvergenceReport([], [], [], [])
    for p in params:
        dt = min(dt_factor * min(p.eps1, p.eps2), 1.0 / (8 * config.d))
        n = max(1, round(config.T / dt))
        dt = config.T / n
        pen = Ensemble(config.with_(penalty=p, dt=dt), seed, replicas)
        ref = Ensemble(config.with_(scheme="reflected", penalty=None, dt=dt), seed, replicas,
                       phi1=pen.p1, phi2=pen.p2)
        pen.advance(n)
        ref.advance(n)
        pen.check_finite()
        sq = ((pen.p1 - ref.p1) ** 2 + (pen.p2 - ref.p2) ** 2).sum(axis=1)
        out.params.append(p)
        out.dts.append(dt)
        out.mean_sq.append(float(sq.mean()))
        out.stderr_sq.append(float(sq.std(ddof=1) / math.sqrt(len(sq))) if len(sq) > 1 else 0.0)
    return out


@dataclass
class LawReport:
    times: list
    mean_gap: list
    mean_rho: list
    var_gap: list
    var_rho: list
    se_mean: list
    se_var: list
    z_mean: list
    z_var: list

    @property
    def passed(self) -> bool:
        return all(abs(z) <= 3 for z in self.z_mean + self.z_var)


def _var_stderr(x: np.ndarray) -> float:
    n = len(x)
    c = x - x.mean()
    m2 = np.mean(c**2)
    m4 = np.mean(c**4)
    return math.sqrt(max(m4 - m2 * m2, 0.0) / n)


def check_law_identity(config: SimConfig, times: Sequence[float], seed: int = 0, replicas: int = 10**4,
                       rho_seed: int | None = None) -> LawReport:
    """Compare the no-wall gap ``phi2 - phi1`` with ``sqrt2 rho`` in law at the origin.

    The two systems use independent noise (``rho_seed``, default derived from
    ``seed``) and start from zero.
    """
    if rho_seed is None:
        rho_seed = (seed * 0x9E3779B97F4A7C15 + 1) % 2**64
    if rho_seed == seed:
        raise ValueError("the law comparison needs independent noise")
    gap = Ensemble(config.with_(scheme="no_wall"), seed, replicas)
    rho = Ensemble(config.with_(scheme="single"), rho_seed, replicas)
    o = gap.box.origin
    rep = LawReport([], [], [], [], [], [], [], [], [])
    for t in times:
        gap.advance_to(t)
        rho.advance_to(t)
        x = gap.p2[:, o] - gap.p1[:, o]
        y = math.sqrt(2.0) * rho.p1[:, o]
        n = len(x)
        se_m = math.sqrt(x.var(ddof=1) / n + y.var(ddof=1) / n) if n > 1 else 0.0
        se_v = math.hypot(_var_stderr(x), _var_stderr(y))
        rep.times.append(float(t))
        rep.mean_gap.append(float(x.mean()))
        rep.mean_rho.append(float(y.mean()))
        rep.var_gap.append(float(x.var(ddof=1)) if n > 1 else 0.0)
        rep.var_rho.append(float(y.var(ddof=1)) if n > 1 else 0.0)
        rep.se_mean.append(se_m)
        rep.se_var.append(se_v)
        dm = rep.mean_gap[-1] - rep.mean_rho[-1]
        dv = rep.var_gap[-1] - rep.var_rho[-1]
        rep.z_mean.append(dm / se_m if se_m > 0 else (0.0 if dm == 0 else math.inf))
        rep.z_var.append(dv / se_v if se_v > 0 else (0.0 if dv == 0 else math.inf))
    return rep
