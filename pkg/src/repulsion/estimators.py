"""Monte Carlo estimators for height growth and the variance bound.

Heights are pooled over replicas and over a sub-grid of sites spaced
``stride`` apart.  Uncertainties come from a blocked bootstrap whose units
are (replica, spatial block) pairs, resampled jointly across observation
times so that fits over time see the correct correlations.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import Ensemble, SimConfig, steps_for
from .heatkernel import log_d, variance_bound

__all__ = [
    "HeightSeries",
    "GrowthFit",
    "RatioEstimate",
    "VarianceReport",
    "pooled_sites",
    "estimate_heights",
    "fit_growth",
    "height_ratio",
    "gap_coefficient",
    "variance_check",
    "bootstrap_indices",
]

N_BOOT = 2000
MAX_BATCH_SITES = 1 << 22  # replicas per compiled batch are capped by this many sites


@dataclass
class HeightSeries:
    """Pooled mean heights per time and layer.

    ``units`` holds the per-unit means, shape ``(times, 2, units)``; a unit
    is one spatial block of one replica.
    """

    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    replicas: int
    n_sites: int
    d: int
    units: np.ndarray | None = None
    boot: np.ndarray | None = field(default=None, repr=False)

    def index(self, t: float) -> int:
        hit = np.flatnonzero(np.isclose(self.times, t, rtol=1e-12, atol=1e-12))
        if not len(hit):
            raise ValueError(f"time {t} not in series")
        return int(hit[0])

    def rows(self):
        """CSV rows ``(time, layer, mean, stderr, n_replicas, n_sites)``."""
        for i, t in enumerate(self.times):
            for layer in (1, 2):
                yield (float(t), layer, float(self.mean[i, layer - 1]), float(self.stderr[i, layer - 1]),
                       self.replicas, self.n_sites)


def bootstrap_indices(n_units: int, n_boot: int = N_BOOT, seed: int = 0) -> np.ndarray:
    """Resampling indices, shape ``(n_boot, n_units)``; deterministic in ``seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB007]))
    return rng.integers(0, n_units, size=(n_boot, n_units))


def pooled_sites(box, stride: int, margin: int | None = None) -> np.ndarray:
    """Indices of sites whose coordinates are multiples of ``stride`` and whose
    distance to the exterior is at least ``margin`` (default ``stride``)."""
    if stride < 1:
        raise ValueError("stride must be positive")
    margin = stride if margin is None else int(margin)
    c = box.coords
    ok = np.all(c % stride == 0, axis=1) & (np.abs(c).max(axis=1) <= box.N + 1 - margin)
    idx = np.flatnonzero(ok)
    if not len(idx):
        raise ValueError(f"no site of a box with N={box.N} is {margin} away from the boundary")
    return idx


def _block_labels(coords: np.ndarray, stride: int, block: int) -> np.ndarray:
    g = np.floor_divide(coords // stride, block)
    _, labels = np.unique(g, axis=0, return_inverse=True)
    return labels.reshape(-1)


def _batches(replicas: int, size: int):
    per = max(1, MAX_BATCH_SITES // size)
    start = 0
    while start < replicas:
        n = min(per, replicas - start)
        yield start, n
        start += n


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _height_units(job):
    config, seed, start, n, steps, idx, labels, nb = job
    counts = np.bincount(labels, minlength=nb)
    out = np.empty((len(steps), 2, n, nb))
    ens = Ensemble(config, seed, n, first_replica=start)
    for i, s in enumerate(steps):
        ens.advance(s - ens.step)
        ens.check_finite()
        for layer, f in enumerate(ens.layers()):
            sums = np.zeros((n, nb))
            np.add.at(sums.T, labels, f[:, idx].T)
            out[i, layer] = sums / counts
    return out


def _origin_values(job):
    config, seed, start, n, steps = job
    o = config.box.origin
    out = np.empty((len(steps), 2, n))
    ens = Ensemble(config, seed, n, first_replica=start)
    for i, s in enumerate(steps):
        ens.advance(s - ens.step)
        ens.check_finite()
        f1, f2 = ens.layers()
        out[i, 0] = f1[:, o]
        out[i, 1] = f2[:, o]
    return out


def estimate_heights(config: SimConfig, times: Sequence[float], replicas: int, stride: int | None = None,
                     seed: int = 0, margin: int | None = None, block: int | None = None,
                     check_horizon: bool = True, n_boot: int = N_BOOT, workers: int = 1) -> HeightSeries:
    """Mean heights of both layers pooled over replicas and a sub-grid.

    Parameters
    ----------
    stride
        Sub-grid spacing; default ``ceil(2 sqrt(T))`` with ``T = max(times)``.
    margin
        Minimum distance of pooled sites to the exterior; default ``stride``.
    block
        Spatial block edge in sub-grid sites for the bootstrap; default puts
        all pooled sites of a replica in one block.
    check_horizon
        Enforce ``stride >= 2 sqrt(T)`` and ``N >= 2 sqrt(T) + stride``.
    workers
        Processes for replica batches; results do not depend on it.
    """
    times = np.asarray(sorted(float(t) for t in times))
    if not len(times) or times[0] < 0:
        raise ValueError("need non-negative observation times")
    if times[-1] > config.T + 1e-12:
        raise ValueError(f"observation times must not exceed T = {config.T}")
    if replicas < 1:
        raise ValueError("need at least one replica")
    horizon = 2.0 * math.sqrt(times[-1])
    stride = int(math.ceil(horizon)) if stride is None else int(stride)
    stride = max(stride, 1)
    if check_horizon and (stride < horizon or config.N < horizon + stride):
        raise ValueError(f"box too small for the horizon: need stride >= {horizon:.3g} and "
                         f"N >= {horizon + stride:.3g} (got stride {stride}, N {config.N})")
    box = config.box
    idx = pooled_sites(box, stride, margin)
    labels = _block_labels(box.coords[idx], stride, block) if block else np.zeros(len(idx), dtype=np.int64)
    nb = int(labels.max()) + 1
    steps = [steps_for(t, config.dt) for t in times]
    units = np.empty((len(times), 2, replicas, nb))
    jobs = [(config, seed, start, n, steps, idx, labels, nb) for start, n in _batches(replicas, box.size)]
    for (_, _, start, n, *_), part in zip(jobs, _map(_height_units, jobs, workers)):
        units[:, :, start:start + n] = part
    units = units.reshape(len(times), 2, replicas * nb)
    mean = units.mean(axis=2)
    boot = None
    if units.shape[2] > 1:
        ix = bootstrap_indices(units.shape[2], n_boot, seed)
        boot = units[:, :, ix].mean(axis=3)  # (times, 2, n_boot)
        stderr = boot.std(axis=2, ddof=1)
    else:
        stderr = np.zeros_like(mean)
    return HeightSeries(times, mean, stderr, replicas, len(idx), config.d, units, boot)


@dataclass
class GrowthFit:
    layer: int
    slope: float
    intercept: float
    slope_stderr: float
    window: tuple
    n_points: int
    target: float | None = None

    @property
    def ratio_to_target(self) -> float | None:
        return None if not self.target else self.slope / self.target


def _ols(x, y):
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def fit_growth(series: HeightSeries, layer: int, d: int | None = None, window: tuple | None = None,
               target: float | None = None) -> GrowthFit:
    """Least squares of ``mean^2`` against ``log_d(t)`` over ``window``.

    The default window is ``[T/10, T]``.  The slope estimates ``C_i / 2``.
    Its stderr is bootstrapped when the series carries bootstrap means and
    falls back to the OLS formula otherwise.
    """
    if layer not in (1, 2):
        raise ValueError("layer must be 1 or 2")
    d = series.d if d is None else d
    T = float(series.times[-1])
    lo, hi = window if window is not None else (T / 10.0, T)
    sel = (series.times >= lo) & (series.times <= hi) & (series.times > 1.0)
    if np.count_nonzero(sel) < 4:
        raise ValueError(f"need at least 4 points with t > 1 in the window [{lo}, {hi}]")
    x = log_d(series.times[sel], d)
    if np.ptp(x) == 0:
        raise ValueError("degenerate fit window")
    y = series.mean[sel, layer - 1] ** 2
    b0, b1 = _ols(x, y)
    if series.boot is not None:
        Y = series.boot[sel, layer - 1, :] ** 2
        A = np.column_stack([np.ones_like(x), x])
        coef = np.linalg.lstsq(A, Y, rcond=None)[0]
        se = float(coef[1].std(ddof=1))
    elif len(x) > 2:
        resid = y - (b0 + b1 * x)
        se = float(math.sqrt(resid @ resid / (len(x) - 2) / np.sum((x - x.mean()) ** 2)))
    else:
        se = math.nan
    return GrowthFit(layer, float(b1), float(b0), se, (lo, hi), int(np.count_nonzero(sel)), target)


@dataclass
class RatioEstimate:
    t: float
    ratio: float | None
    stderr: float | None
    flagged: bool
    reason: str = ""


def height_ratio(series: HeightSeries, t: float, z: float = 2.0) -> RatioEstimate:
    """``mean_2 / mean_1`` at time ``t``; flagged when ``mean_1`` is not
    ``z`` stderrs above zero."""
    i = series.index(t)
    m1, m2 = series.mean[i]
    s1 = series.stderr[i, 0]
    if not (m1 > z * s1 and m1 > 0):
        return RatioEstimate(float(t), None, None, True, "lower layer mean not significantly positive")
    r = m2 / m1
    if series.boot is not None:
        b = series.boot[i]
        se = float((b[1] / b[0]).std(ddof=1))
    else:
        s2 = series.stderr[i, 1]
        se = float(abs(r) * math.hypot(s1 / m1, s2 / m2 if m2 else 0.0))
    return RatioEstimate(float(t), float(r), se, False)


def gap_coefficient(series: HeightSeries, d: int | None = None):
    """``(mean_2 - mean_1) / sqrt(log_d t)`` at times ``t > 1``.

    Returns ``(times, coefficient, stderr)``.
    """
    d = series.d if d is None else d
    sel = series.times > 1.0
    t = series.times[sel]
    norm = np.sqrt(log_d(t, d))
    c = (series.mean[sel, 1] - series.mean[sel, 0]) / norm
    if series.boot is not None:
        b = series.boot[sel]
        se = ((b[:, 1] - b[:, 0]) / norm[:, None]).std(axis=1, ddof=1)
    else:
        se = np.hypot(series.stderr[sel, 0], series.stderr[sel, 1]) / norm
    return t, c, se


@dataclass
class VarianceReport:
    times: np.ndarray
    var: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    replicas: int
    z: float = 3.0

    @property
    def margin(self) -> np.ndarray:
        """``bound - (var + z stderr)`` per time and layer; non-negative passes."""
        return self.bound[:, None] - (self.var + self.z * self.stderr)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margin >= 0))


def _var_and_stderr(x: np.ndarray):
    n = len(x)
    c = x - x.mean()
    m2 = float(np.mean(c**2))
    m4 = float(np.mean(c**4))
    var = m2 * n / (n - 1)
    return var, math.sqrt(max(m4 - m2 * m2, 0.0) / n)


def variance_check(config: SimConfig, times: Sequence[float], replicas: int, seed: int = 0,
                   z: float = 3.0, workers: int = 1) -> VarianceReport:
    """Empirical ``Var(phi_t^(i)(0))`` against ``4 int_0^t p_{2r}(0,0) dr``."""
    if replicas < 1000:
        raise ValueError("the variance check needs at least 1000 replicas")
    times = np.asarray(sorted(float(t) for t in times))
    if times[-1] > config.T + 1e-12:
        raise ValueError(f"observation times must not exceed T = {config.T}")
    box = config.box
    vals = np.empty((len(times), 2, replicas))
    steps = [steps_for(t, config.dt) for t in times]
    jobs = [(config, seed, start, n, steps) for start, n in _batches(replicas, box.size)]
    for (_, _, start, n, _), part in zip(jobs, _map(_origin_values, jobs, workers)):
        vals[:, :, start:start + n] = part
    var = np.empty((len(times), 2))
    se = np.empty((len(times), 2))
    for i in range(len(times)):
        for layer in range(2):
            var[i, layer], se[i, layer] = _var_and_stderr(vals[i, layer])
    bound = np.array([variance_bound(t, config.d) for t in times])
    return VarianceReport(times, var, se, bound, replicas, z)
