"""Time stepping for the two-layer interface and its auxiliary systems.

Every scheme is explicit Euler for ``d phi = Lap phi dt + sqrt(2) dw`` followed
by the scheme's constraint handling:

``reflected``
    nearest-point projection onto the cone ``0 <= phi1 <= phi2``.
``fold``
    mirror images into the same cone (``|a|, |b|`` then sort).  Same
    constraint, but exact in law for a free single-site pair; used for
    long-run stationarity checks.
``penalized`` / ``smoothed``
    restoring drifts ``(phi1)^- / eps1`` and ``(phi2 - phi1)^- / eps2``, or the
    mollified ``-chi'`` versions, evaluated at the start of the step.
``wall_only``
    phi1 reflected at 0, then phi2 reflected above the new phi1.
``no_wall``
    phi1 free, phi2 reflected above it.
``single``
    one layer (phi1) reflected at 0; phi2 is carried along untouched.
``rotated``
    the penalized system written in ``psi1 = (phi1 + phi2)/sqrt 2``,
    ``psi2 = (phi2 - phi1)/sqrt 2`` with correspondingly rotated noise.
``free``
    no constraint at all.

Local-time increments are the constraint displacements decomposed along
``(1, 0)`` (wall) and ``(-1, 1)`` (exclusion); the ``wall_only`` system uses
``(1, 0)`` and ``(0, 1)`` since its lower layer is never pushed down.

Two engines are provided.  The ``step_*`` functions advance a single
:class:`InterfacePair` with plain numpy and serve as the readable reference.
:class:`Ensemble` advances a batch of replicas with the compiled kernel and
is what experiments use.  Both draw identical noise.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .lattice import Boundary, LatticeBox, ScalarField, boundary_source, laplacian_field
from .noise import INIT_STEP, ZIG_FI, ZIG_KI, ZIG_WI, NoiseStream, batch_normals, replica_keys
from .penalty import TABLE_F, TABLE_H, TABLE_M, PenaltyParams, chi_smoothed_prime

__all__ = [
    "SCHEMES",
    "InitialLaw",
    "SimConfig",
    "InterfacePair",
    "RotatedPair",
    "Ensemble",
    "TrajectoryRecord",
    "NumericalError",
    "project_cone",
    "fold_cone",
    "step_reflected",
    "step_fold",
    "step_penalized",
    "step_smoothed",
    "step_wall_only",
    "step_no_wall",
    "step_single_reflected",
    "step_rotated",
    "initial_sample",
    "run_trajectory",
    "rotate",
    "unrotate",
]

SCHEMES = tuple(K.SCHEME_CODES)
PENALTY_SCHEMES = ("penalized", "smoothed", "rotated")
CONE_SCHEMES = ("reflected", "fold")
SQRT2 = math.sqrt(2.0)


class NumericalError(RuntimeError):
    """A non-finite value appeared in a field."""

    def __init__(self, message, replica=None, site=None, step=None):
        super().__init__(message)
        self.replica = replica
        self.site = site
        self.step = step


def project_cone(a, b):
    """Euclidean projection of ``(a, b)`` onto ``{0 <= u <= v}``.

    Returns ``(u, v, dl1, dl2)`` with ``(u, v) = (a, b) + dl1 (1, 0) + dl2 (-1, 1)``
    and ``dl1, dl2 >= 0``.  The complementarity ``u dl1 = 0`` and
    ``(v - u) dl2 = 0`` holds exactly in floating point.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h = 0.5 * (a + b)
    u = np.maximum(0.0, np.minimum(a, h))
    v = np.maximum(0.0, np.maximum(b, h))
    dl2 = v - b
    dl1 = np.where(u == 0.0, (u - a) + dl2, 0.0)
    return _maybe_scalar(u, v, dl1, dl2)


def fold_cone(a, b):
    """Mirror ``(a, b)`` into the cone: ``(min(|a|,|b|), max(|a|,|b|))``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u = np.minimum(np.abs(a), np.abs(b))
    v = np.maximum(np.abs(a), np.abs(b))
    dl2 = v - b
    dl1 = (u - a) + dl2
    return _maybe_scalar(u, v, dl1, dl2)


def _maybe_scalar(*arrs):
    if arrs[0].ndim == 0:
        return tuple(float(x) for x in arrs)
    return arrs


@dataclass(frozen=True)
class InitialLaw:
    """Product law ``phi1 = s1 |g1|``, ``phi2 = phi1 + s2 |g2|`` at each box site."""

    sigma1: float = 0.0
    sigma2: float = 0.0

    def __post_init__(self):
        if not (self.sigma1 >= 0 and self.sigma2 >= 0) or not (
                math.isfinite(self.sigma1) and math.isfinite(self.sigma2)):
            raise ValueError(f"initial scales must be finite and non-negative, got {self.sigma1}, {self.sigma2}")


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a trajectory except the seed."""

    d: int
    N: int
    dt: float
    T: float
    scheme: str = "reflected"
    penalty: PenaltyParams | None = None
    init: InitialLaw = field(default_factory=InitialLaw)
    boundary: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.scheme not in K.SCHEME_CODES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        LatticeBox(self.d, self.N)
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"time step must be positive, got {self.dt}")
        if not self.T >= 0:
            raise ValueError(f"horizon must be non-negative, got {self.T}")
        if self.dt > 1.0 / (8 * self.d) * (1 + 1e-12):
            raise ValueError(
                f"unstable time step: dt = {self.dt} exceeds 1/(8d) = {1 / (8 * self.d):.6g}")
        if self.scheme in PENALTY_SCHEMES:
            if self.penalty is None:
                raise ValueError(f"scheme {self.scheme!r} needs penalty parameters")
            lim = min(self.penalty.eps1, self.penalty.eps2) / 4
            if self.dt > lim * (1 + 1e-12):
                raise ValueError(
                    f"unstable time step: dt = {self.dt} exceeds min(eps1, eps2)/4 = {lim:.6g}")
            if self.scheme == "smoothed" and self.penalty.delta is None:
                raise ValueError("smoothed scheme needs a mollifier width delta")
        if len(self.boundary) != 2:
            raise ValueError("boundary must give one exterior value per layer")
        self.n_steps  # validates T / dt

    @property
    def box(self) -> LatticeBox:
        return LatticeBox(self.d, self.N)

    @property
    def n_steps(self) -> int:
        return steps_for(self.T, self.dt)

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


def steps_for(t: float, dt: float) -> int:
    """Number of steps reaching time ``t``; ``t`` must be a multiple of ``dt``."""
    n = round(t / dt)
    if n < 0 or abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not a non-negative multiple of dt = {dt}")
    return int(n)


@dataclass
class InterfacePair:
    """Two layers with their local times on a box."""

    box: LatticeBox
    phi1: np.ndarray
    phi2: np.ndarray
    l1: np.ndarray | None = None
    l2: np.ndarray | None = None
    t: float = 0.0
    step: int = 0
    boundary: tuple = (0.0, 0.0)

    def __post_init__(self):
        n = self.box.size
        self.phi1 = np.array(self.phi1, dtype=float).reshape(n)
        self.phi2 = np.array(self.phi2, dtype=float).reshape(n)
        self.l1 = np.zeros(n) if self.l1 is None else np.array(self.l1, dtype=float)
        self.l2 = np.zeros(n) if self.l2 is None else np.array(self.l2, dtype=float)

    @classmethod
    def zeros(cls, box: LatticeBox, **kw) -> "InterfacePair":
        return cls(box, np.zeros(box.size), np.zeros(box.size), **kw)

    def fields(self):
        return (ScalarField(self.box, self.phi1, self.boundary[0]),
                ScalarField(self.box, self.phi2, self.boundary[1]))

    def in_cone(self) -> bool:
        return bool(np.all(self.phi1 >= 0) and np.all(self.phi2 >= self.phi1))


@dataclass
class RotatedPair:
    """Rotated coordinates ``psi1 = (phi1+phi2)/sqrt2``, ``psi2 = (phi2-phi1)/sqrt2``."""

    box: LatticeBox
    psi1: np.ndarray
    psi2: np.ndarray
    l1: np.ndarray | None = None
    l2: np.ndarray | None = None
    t: float = 0.0
    step: int = 0
    boundary: tuple = (0.0, 0.0)

    def __post_init__(self):
        n = self.box.size
        self.psi1 = np.array(self.psi1, dtype=float).reshape(n)
        self.psi2 = np.array(self.psi2, dtype=float).reshape(n)
        self.l1 = np.zeros(n) if self.l1 is None else np.array(self.l1, dtype=float)
        self.l2 = np.zeros(n) if self.l2 is None else np.array(self.l2, dtype=float)


def rotate(state: InterfacePair) -> RotatedPair:
    """Rotate an interface pair (local times start afresh)."""
    b1, b2 = state.boundary
    return RotatedPair(state.box, (state.phi1 + state.phi2) / SQRT2, (state.phi2 - state.phi1) / SQRT2,
                       t=state.t, step=state.step, boundary=_rotate_boundary(b1, b2))


def unrotate(state: RotatedPair) -> InterfacePair:
    b1, b2 = state.boundary
    return InterfacePair(state.box, (state.psi1 - state.psi2) / SQRT2, (state.psi1 + state.psi2) / SQRT2,
                         t=state.t, step=state.step, boundary=_unrotate_boundary(b1, b2))


def _rotate_boundary(b1: Boundary, b2: Boundary):
    if callable(b1) or callable(b2):
        f1 = b1 if callable(b1) else (lambda p, c=float(b1): np.full(len(p), c))
        f2 = b2 if callable(b2) else (lambda p, c=float(b2): np.full(len(p), c))
        return (lambda p: (f1(p) + f2(p)) / SQRT2, lambda p: (f2(p) - f1(p)) / SQRT2)
    return ((b1 + b2) / SQRT2, (b2 - b1) / SQRT2)


def _unrotate_boundary(b1: Boundary, b2: Boundary):
    if callable(b1) or callable(b2):
        f1 = b1 if callable(b1) else (lambda p, c=float(b1): np.full(len(p), c))
        f2 = b2 if callable(b2) else (lambda p, c=float(b2): np.full(len(p), c))
        return (lambda p: (f1(p) - f2(p)) / SQRT2, lambda p: (f1(p) + f2(p)) / SQRT2)
    return ((b1 - b2) / SQRT2, (b1 + b2) / SQRT2)


# reference single-replica steppers

def _tentative(box, x1, x2, boundary, noise: NoiseStream, step, dt, rotate_noise=False):
    lap1 = laplacian_field(ScalarField(box, x1, boundary[0]))
    lap2 = laplacian_field(ScalarField(box, x2, boundary[1]))
    g1, g2 = noise.normals(box.coords, step)
    if rotate_noise:
        g1, g2 = (g1 + g2) / SQRT2, (g2 - g1) / SQRT2
    sig = math.sqrt(2.0 * dt)
    return x1 + dt * lap1 + sig * g1, x2 + dt * lap2 + sig * g2


def _advance(state: InterfacePair, u, v, dl1, dl2, dt) -> InterfacePair:
    return InterfacePair(state.box, u, v, state.l1 + dl1, state.l2 + dl2,
                         t=state.t + dt, step=state.step + 1, boundary=state.boundary)


def _require_cone(state: InterfacePair):
    if not state.in_cone():
        raise RuntimeError("state left the cone before a reflected step")


def step_reflected(state: InterfacePair, noise: NoiseStream, dt: float) -> InterfacePair:
    """Euler step followed by sitewise projection onto the cone."""
    _require_cone(state)
    a, b = _tentative(state.box, state.phi1, state.phi2, state.boundary, noise, state.step, dt)
    u, v, dl1, dl2 = project_cone(a, b)
    return _advance(state, u, v, dl1, dl2, dt)


def step_fold(state: InterfacePair, noise: NoiseStream, dt: float) -> InterfacePair:
    """Euler step followed by mirroring into the cone."""
    _require_cone(state)
    a, b = _tentative(state.box, state.phi1, state.phi2, state.boundary, noise, state.step, dt)
    u, v, dl1, dl2 = fold_cone(a, b)
    return _advance(state, u, v, dl1, dl2, dt)


def _check_penalty_dt(dt, eps):
    if dt > min(eps.eps1, eps.eps2) / 4 * (1 + 1e-12) or dt > 0.125:
        raise ValueError(f"unstable time step {dt} for penalty scales ({eps.eps1}, {eps.eps2})")


def step_penalized(state: InterfacePair, noise: NoiseStream, dt: float, eps: PenaltyParams) -> InterfacePair:
    """Euler step with drifts ``(phi1)^-/eps1`` and ``(phi2-phi1)^-/eps2``."""
    _check_penalty_dt(dt, eps)
    a, b = _tentative(state.box, state.phi1, state.phi2, state.boundary, noise, state.step, dt)
    dl1 = dt * np.maximum(-state.phi1, 0.0) / eps.eps1
    dl2 = dt * np.maximum(state.phi1 - state.phi2, 0.0) / eps.eps2
    return _advance(state, a + dl1 - dl2, b + dl2, dl1, dl2, dt)


def step_smoothed(state: InterfacePair, noise: NoiseStream, dt: float, eps: PenaltyParams) -> InterfacePair:
    """Euler step with drifts ``-chi'_{eps_i, delta}`` evaluated by quadrature."""
    if eps.delta is None:
        raise ValueError("smoothed step needs a mollifier width delta")
    _check_penalty_dt(dt, eps)
    a, b = _tentative(state.box, state.phi1, state.phi2, state.boundary, noise, state.step, dt)
    dl1 = -dt * chi_smoothed_prime(eps.eps1, eps.delta, state.phi1)
    dl2 = -dt * chi_smoothed_prime(eps.eps2, eps.delta, state.phi2 - state.phi1)
    return _advance(state, a + dl1 - dl2, b + dl2, dl1, dl2, dt)


def step_wall_only(state: InterfacePair, noise: NoiseStream, dt: float) -> InterfacePair:
    """Lower layer reflected at 0, then upper layer reflected above it."""
    a, b = _tentative(state.box, state.phi1, state.phi2, state.boundary, noise, state.step, dt)
    u = np.maximum(a, 0.0)
    v = np.maximum(b, u)
    return _advance(state, u, v, u - a, v - b, dt)


def step_no_wall(state: InterfacePair, noise: NoiseStream, dt: float) -> InterfacePair:
    """Lower layer free, upper layer reflected above it."""
    a, b = _tentative(state.box, state.phi1, state.phi2, state.boundary, noise, state.step, dt)
    v = np.maximum(b, a)
    return _advance(state, a, v, np.zeros_like(a), v - b, dt)


def step_single_reflected(state: InterfacePair, noise: NoiseStream, dt: float) -> InterfacePair:
    """One layer (``phi1``) reflected at 0, driven by the layer-1 noise."""
    a, _ = _tentative(state.box, state.phi1, state.phi2, state.boundary, noise, state.step, dt)
    u = np.maximum(a, 0.0)
    return _advance(state, u, state.phi2.copy(), u - a, np.zeros_like(a), dt)


def step_rotated(state: RotatedPair, noise: NoiseStream, dt: float, eps: PenaltyParams) -> RotatedPair:
    """Penalized system in rotated coordinates.

    Forcing ``dt (psi1 - psi2)^- / (2 eps1)`` is added to ``psi1`` and removed
    from ``psi2``; forcing ``2 dt (psi2)^- / eps2`` is added to ``psi2``.
    """
    _check_penalty_dt(dt, eps)
    a, b = _tentative(state.box, state.psi1, state.psi2, state.boundary, noise, state.step, dt,
                      rotate_noise=True)
    dl1 = 0.5 * dt * np.maximum(state.psi2 - state.psi1, 0.0) / eps.eps1
    dl2 = 2.0 * dt * np.maximum(-state.psi2, 0.0) / eps.eps2
    return RotatedPair(state.box, a + dl1, b + dl2 - dl1, state.l1 + dl1, state.l2 + dl2,
                       t=state.t + dt, step=state.step + 1, boundary=state.boundary)


def initial_sample(box: LatticeBox, law: InitialLaw, noise: NoiseStream,
                   boundary=(0.0, 0.0)) -> InterfacePair:
    """Draw ``phi1 = s1 |g1|``, ``phi2 = phi1 + s2 |g2|`` from the reserved init counter."""
    if not isinstance(law, InitialLaw):
        law = InitialLaw(*law)
    g1, g2 = noise.normals(box.coords, INIT_STEP)
    phi1 = law.sigma1 * np.abs(g1)
    return InterfacePair(box, phi1, phi1 + law.sigma2 * np.abs(g2), boundary=boundary)


# compiled batch engine

class Ensemble:
    """A batch of independent replicas advanced by the compiled kernel.

    Replica ``r`` of the batch is global replica ``first_replica + r``; its
    noise depends only on ``(seed, first_replica + r)``, so batches can be
    split across workers without changing any trajectory.  For the rotated
    scheme the stored fields are ``psi1, psi2``.
    """

    def __init__(self, config: SimConfig, seed: int, replicas: int = 1, first_replica: int = 0,
                 phi1=None, phi2=None, noise: bool = True):
        if replicas < 1:
            raise ValueError("need at least one replica")
        self.config = config
        self.seed = int(seed)
        self.box = config.box
        self.code = K.SCHEME_CODES[config.scheme]
        self.noise = bool(noise)
        R, n = int(replicas), self.box.size
        self.replica_ids = np.arange(first_replica, first_replica + R, dtype=np.int64)
        self.key0, self.key1 = replica_keys(self.seed, self.replica_ids)
        if phi1 is None and phi2 is None:
            law = config.init
            if law.sigma1 == 0 and law.sigma2 == 0:
                p1 = np.zeros((R, n))
                p2 = np.zeros((R, n))
            else:
                g1, g2 = batch_normals(self.seed, self.replica_ids, self.box.keys, INIT_STEP)
                p1 = law.sigma1 * np.abs(g1)
                p2 = p1 + law.sigma2 * np.abs(g2)
        else:
            p1 = np.broadcast_to(np.asarray(phi1, dtype=float), (R, n)).copy()
            p2 = np.broadcast_to(np.asarray(phi2, dtype=float), (R, n)).copy()
        b1, b2 = config.boundary
        if self.code == K.ROTATED:
            p1, p2 = (p1 + p2) / SQRT2, (p2 - p1) / SQRT2
            b1, b2 = _rotate_boundary(b1, b2)
        self.p1 = np.ascontiguousarray(p1)
        self.p2 = np.ascontiguousarray(p2)
        self._q1 = np.empty_like(self.p1)
        self._q2 = np.empty_like(self.p2)
        self.l1 = np.zeros((R, n))
        self.l2 = np.zeros((R, n))
        self.dl1 = np.zeros((R, n))
        self.dl2 = np.zeros((R, n))
        self.src1 = boundary_source(self.box, b1)
        self.src2 = boundary_source(self.box, b2)
        self.step = 0
        pen = config.penalty
        self._ie1 = 1.0 / pen.eps1 if pen is not None else 0.0
        self._ie2 = 1.0 / pen.eps2 if pen is not None else 0.0
        self._delta = pen.delta if pen is not None and pen.delta is not None else 1.0

    @property
    def replicas(self) -> int:
        return self.p1.shape[0]

    @property
    def t(self) -> float:
        return self.step * self.config.dt

    def advance(self, nsteps: int = 1, record_increments: bool = False) -> None:
        """Take ``nsteps`` steps.  With ``record_increments`` the last step's
        local-time increments are kept in ``dl1, dl2``."""
        if nsteps < 0:
            raise ValueError("cannot step backwards")
        if nsteps == 0:
            return
        if self.step + nsteps >= INIT_STEP:
            raise ValueError("step counter exhausted")
        if self.box.size == 1:
            K.advance_site(self.p1, self.p2, self.l1, self.l2, self.dl1, self.dl2, self.src1,
                           self.src2, self.box.keys[0], self.box.d, self.key0, self.key1, self.step,
                           nsteps, self.code, self.config.dt, self.noise, self._ie1, self._ie2,
                           self._delta, TABLE_F, TABLE_M, TABLE_H, ZIG_KI, ZIG_WI, ZIG_FI,
                           record_increments)
            self.step += nsteps
            return
        K.advance(self.p1, self.p2, self._q1, self._q2, self.l1, self.l2, self.dl1, self.dl2,
                  self.src1, self.src2, self.box.row_neighbors, self.box.row_keys, self.box.L,
                  self.box.d, self.key0, self.key1, self.step, nsteps, self.code, self.config.dt,
                  self.noise, self._ie1, self._ie2, self._delta, TABLE_F, TABLE_M, TABLE_H,
                  ZIG_KI, ZIG_WI, ZIG_FI, record_increments)
        self.step += nsteps

    def advance_to(self, t: float, record_increments: bool = False) -> None:
        n = steps_for(t, self.config.dt)
        if n < self.step:
            raise ValueError(f"time {t} is in the past (now {self.t})")
        self.advance(n - self.step, record_increments)

    def layers(self):
        """``(phi1, phi2)`` in original coordinates (rotating back if needed)."""
        if self.code == K.ROTATED:
            return (self.p1 - self.p2) / SQRT2, (self.p1 + self.p2) / SQRT2
        return self.p1, self.p2

    def check_finite(self) -> None:
        for name, arr in (("phi1", self.p1), ("phi2", self.p2)):
            bad = ~np.isfinite(arr)
            if bad.any():
                r, i = np.argwhere(bad)[0]
                raise NumericalError(
                    f"non-finite {name} at replica {self.replica_ids[r]}, site "
                    f"{tuple(self.box.coords[i])}, step {self.step}",
                    replica=int(self.replica_ids[r]), site=tuple(int(c) for c in self.box.coords[i]),
                    step=self.step)

    def state(self, r: int = 0) -> InterfacePair | RotatedPair:
        """Snapshot of one replica as a reference-engine state."""
        cls = RotatedPair if self.code == K.ROTATED else InterfacePair
        bnd = self.config.boundary
        if self.code == K.ROTATED:
            bnd = _rotate_boundary(*bnd)
        return cls(self.box, self.p1[r].copy(), self.p2[r].copy(), self.l1[r].copy(),
                   self.l2[r].copy(), t=self.t, step=self.step, boundary=bnd)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.p1, self.p2, self.l1, self.l2):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


OBSERVABLES = ("origin", "field", "local_times", "norm")


@dataclass
class TrajectoryRecord:
    """Observations at the requested times plus a digest of the final state."""

    config: SimConfig
    seed: int
    times: list
    observables: tuple
    data: dict
    checksum: str

    def rows(self):
        """CSV rows ``(time, replica, observable, site, layer, value)``."""
        for obs in self.observables:
            for ti, t in enumerate(self.times):
                arr = self.data[obs][ti]
                for r in range(arr.shape[0]):
                    for layer in (1, 2):
                        vals = arr[r, layer - 1]
                        for s, v in enumerate(np.atleast_1d(vals)):
                            yield (t, r, obs, s, layer, v)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("time,replica,observable,site,layer,value\n")
            for t, r, obs, s, layer, v in self.rows():
                fh.write(f"{t!r},{r},{obs},{s},{layer},{float(v)!r}\n")


def run_trajectory(config: SimConfig, seed: int, times: Sequence[float] = (),
                   observables: Iterable[str] = (), replicas: int = 1,
                   first_replica: int = 0, phi1=None, phi2=None, r: float = 1.0) -> TrajectoryRecord:
    """Run ``replicas`` trajectories to ``config.T`` recording observables.

    ``origin`` records both layers at the origin, ``field`` the whole box,
    ``local_times`` the accumulated local times, ``norm`` the weighted norm
    with rate ``r``.  Memory grows with the number of observations only.
    """
    observables = tuple(observables)
    for obs in observables:
        if obs not in OBSERVABLES:
            raise ValueError(f"unknown observable {obs!r}; choose from {', '.join(OBSERVABLES)}")
    steps = [steps_for(t, config.dt) for t in times]
    if any(s > config.n_steps for s in steps):
        raise ValueError(f"observation times must lie in [0, {config.T}]")
    if steps != sorted(steps):
        raise ValueError("observation times must be increasing")
    ens = Ensemble(config, seed, replicas, first_replica, phi1, phi2)
    data = {obs: [] for obs in observables}
    w = np.exp(-2.0 * r * np.linalg.norm(ens.box.coords, axis=1))
    o = ens.box.origin
    for s in steps:
        ens.advance(s - ens.step)
        ens.check_finite()
        f1, f2 = ens.layers()
        for obs in observables:
            if obs == "origin":
                data[obs].append(np.stack([f1[:, o], f2[:, o]], axis=1))
            elif obs == "field":
                data[obs].append(np.stack([f1, f2], axis=1).copy())
            elif obs == "local_times":
                data[obs].append(np.stack([ens.l1, ens.l2], axis=1).copy())
            else:
                data[obs].append(np.stack([np.sqrt(f1**2 @ w), np.sqrt(f2**2 @ w)], axis=1))
    ens.advance(config.n_steps - ens.step)
    ens.check_finite()
    return TrajectoryRecord(config, int(seed), [float(t) for t in times], observables, data,
                            ens.checksum())
