"""Counter-based Gaussian increments.

Every increment is a pure function of ``(seed, replica, layer, site, step)``:
a Philox4x32-10 block is computed from the counter
``(step, stream, site_key_lo, site_key_hi)`` under the 64-bit key derived from
``(seed, replica)``.  Words 0-1 feed layer 1 and words 2-3 feed layer 2, each
turned into a standard normal by a 256-layer ziggurat.  Rejected ziggurat
candidates draw fresh blocks on ``stream >= 2`` so the primary stream 0 is
never reused.

Sites are keyed by their absolute lattice coordinates, so two boxes of
different size see identical noise at the sites they share.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

__all__ = [
    "NoiseStream",
    "philox4x32",
    "replica_key",
    "replica_keys",
    "batch_normals",
    "site_keys",
    "standard_normal",
    "KEY_OFFSET",
    "MAX_DIM",
]

MAX_DIM = 4
KEY_OFFSET = 1 << 15  # coordinates are stored as unsigned 16-bit after this shift
INIT_STEP = 0xFFFFFFFF  # step counter reserved for initial-law sampling

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)
_M52 = np.uint64(0x000FFFFFFFFFFFFF)
_TWO53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always", cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 block function on uint32 words."""
    for _ in range(10):
        p0 = np.uint64(c0) * _M0
        p1 = np.uint64(c2) * _M1
        hi0 = np.uint32(p0 >> _SH32)
        lo0 = np.uint32(p0 & _LO)
        hi1 = np.uint32(p1 >> _SH32)
        lo1 = np.uint32(p1 & _LO)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = np.uint32(k0 + _W0)
        k1 = np.uint32(k1 + _W1)
    return c0, c1, c2, c3


def _ziggurat_tables():
    # Marsaglia & Tsang (2000), 256 layers, 52-bit mantissa.
    m1 = 2.0**52
    dn = 3.6541528853610088
    tn = dn
    vn = 0.00492867323399
    ki = np.zeros(256, dtype=np.uint64)
    wi = np.zeros(256)
    fi = np.zeros(256)
    q = vn / math.exp(-0.5 * dn * dn)
    ki[0] = np.uint64((dn / q) * m1)
    ki[1] = 0
    wi[0] = q / m1
    wi[255] = dn / m1
    fi[0] = 1.0
    fi[255] = math.exp(-0.5 * dn * dn)
    for i in range(254, 0, -1):
        dn = math.sqrt(-2.0 * math.log(vn / dn + math.exp(-0.5 * dn * dn)))
        ki[i + 1] = np.uint64((dn / tn) * m1)
        tn = dn
        fi[i] = math.exp(-0.5 * dn * dn)
        wi[i] = dn / m1
    return ki, wi, fi


ZIG_KI, ZIG_WI, ZIG_FI = _ziggurat_tables()
ZIG_R = 3.6541528853610088
ZIG_INV_R = 1.0 / ZIG_R


@nb.njit(inline="always", cache=True)
def _word(lo, hi):
    return (np.uint64(hi) << _SH32) | np.uint64(lo)


@nb.njit(inline="always", cache=True)
def _unit(word):
    # 53-bit uniform on the open interval (0, 1)
    return (float(word >> np.uint64(11)) + 0.5) * _TWO53


@nb.njit(inline="always", cache=True)
def zig_fast(word, ki, wi):
    """Fast ziggurat path; NaN marks a candidate that needs :func:`zig_slow`."""
    idx = word & np.uint64(0xFF)
    r = word >> np.uint64(8)
    rabs = (r >> np.uint64(1)) & _M52
    x = float(rabs) * wi[idx]
    if r & np.uint64(1):
        x = -x
    if rabs < ki[idx]:
        return x
    return np.nan


@nb.njit(cache=True)
def zig_slow(word, layer, step, c2, c3, k0, k1, ki, wi, fi):
    """Full ziggurat starting from a rejected primary candidate."""
    attempt = 0
    r = word
    while True:
        idx = r & np.uint64(0xFF)
        rr = r >> np.uint64(8)
        rabs = (rr >> np.uint64(1)) & _M52
        x = float(rabs) * wi[idx]
        if rr & np.uint64(1):
            x = -x
        if rabs < ki[idx]:
            return x
        attempt += 1
        stream = np.uint32(2 * attempt + layer)
        a0, a1, a2, a3 = philox4x32(np.uint32(step), stream, c2, c3, k0, k1)
        u1 = _unit(_word(a0, a1))
        w2 = _word(a2, a3)
        if idx == 0:
            while True:
                xx = -ZIG_INV_R * math.log1p(-u1)
                yy = -math.log1p(-_unit(w2))
                if yy + yy > xx * xx:
                    return -(ZIG_R + xx) if x < 0 else ZIG_R + xx
                attempt += 1
                stream = np.uint32(2 * attempt + layer)
                a0, a1, a2, a3 = philox4x32(np.uint32(step), stream, c2, c3, k0, k1)
                u1 = _unit(_word(a0, a1))
                w2 = _word(a2, a3)
        if (fi[idx - 1] - fi[idx]) * u1 + fi[idx] < math.exp(-0.5 * x * x):
            return x
        r = w2


@nb.njit(cache=True)
def fill_normals(g1, g2, keys, step, stream, k0, k1, ki, wi, fi):
    """Standard normals for both layers at every key, one Philox block each.

    Split into three loops so the Philox and fast-ziggurat loops vectorize.
    """
    n = keys.shape[0]
    w1 = np.empty(n, dtype=np.uint64)
    w2 = np.empty(n, dtype=np.uint64)
    st = np.uint32(step)
    sm = np.uint32(stream)
    for i in range(n):
        key = keys[i]
        a0, a1, a2, a3 = philox4x32(st, sm, np.uint32(key & _LO), np.uint32(key >> _SH32), k0, k1)
        w1[i] = _word(a0, a1)
        w2[i] = _word(a2, a3)
    for i in range(n):
        g1[i] = zig_fast(w1[i], ki, wi)
        g2[i] = zig_fast(w2[i], ki, wi)
    for i in range(n):
        if g1[i] != g1[i]:
            key = keys[i]
            g1[i] = zig_slow(w1[i], 0, step, np.uint32(key & _LO), np.uint32(key >> _SH32), k0, k1, ki, wi, fi)
        if g2[i] != g2[i]:
            key = keys[i]
            g2[i] = zig_slow(w2[i], 1, step, np.uint32(key & _LO), np.uint32(key >> _SH32), k0, k1, ki, wi, fi)


@nb.njit(cache=True)
def fill_normals_batch(g1, g2, keys, step, k0s, k1s, ki, wi, fi):
    """:func:`fill_normals` for each replica key; ``g1, g2`` have shape ``(R, n)``."""
    for r in range(g1.shape[0]):
        fill_normals(g1[r], g2[r], keys, step, 0, np.uint32(k0s[r]), np.uint32(k1s[r]), ki, wi, fi)


def batch_normals(seed: int, replicas, keys: np.ndarray, step: int):
    """Normals for many replicas at once, shape ``(R, n)`` per layer."""
    k0, k1 = replica_keys(seed, replicas)
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    g1 = np.empty((len(k0), keys.shape[0]))
    g2 = np.empty_like(g1)
    fill_normals_batch(g1, g2, keys, step, k0, k1, ZIG_KI, ZIG_WI, ZIG_FI)
    return g1, g2


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def replica_keys(seed: int, replicas) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`replica_key` over an array of replica indices."""
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 bits, got {seed}")
    r = np.asarray(replicas, dtype=np.int64)
    if np.any(r < 0):
        raise ValueError("replica index must be non-negative")
    with np.errstate(over="ignore"):
        k = _splitmix64_vec(np.uint64(seed) ^ _splitmix64_vec(r.astype(np.uint64)))
    return (k & np.uint64(0xFFFFFFFF)).astype(np.uint32), (k >> np.uint64(32)).astype(np.uint32)


def _splitmix64_vec(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def replica_key(seed: int, replica: int = 0) -> tuple[int, int]:
    """Philox key words for one replica of a seeded experiment."""
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 bits, got {seed}")
    if replica < 0:
        raise ValueError("replica index must be non-negative")
    k = _splitmix64(seed ^ _splitmix64(replica))
    return k & 0xFFFFFFFF, k >> 32


def site_keys(coords: np.ndarray) -> np.ndarray:
    """Pack absolute site coordinates (shape ``(n, d)``) into uint64 keys.

    The last axis occupies the low 16 bits, so consecutive sites of a row have
    consecutive keys.
    """
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        coords = coords[:, None]
    d = coords.shape[1]
    if d > MAX_DIM:
        raise ValueError(f"site keys support d <= {MAX_DIM}")
    if np.any(np.abs(coords) >= KEY_OFFSET):
        raise ValueError("site coordinates out of key range")
    keys = np.zeros(coords.shape[0], dtype=np.uint64)
    for i in range(d):
        shift = np.uint64(16 * (d - 1 - i))
        keys |= (coords[:, i] + KEY_OFFSET).astype(np.uint64) << shift
    return keys


def standard_normal(seed: int, replica: int, keys: np.ndarray, step: int, stream: int = 0):
    """Normals ``(g1, g2)`` for layers 1 and 2 at the given site keys."""
    if not 0 <= step < 2**32:
        raise ValueError("step index must fit in 32 bits")
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    k0, k1 = replica_key(seed, replica)
    g1 = np.empty(keys.shape[0])
    g2 = np.empty(keys.shape[0])
    fill_normals(g1, g2, keys, step, stream, np.uint32(k0), np.uint32(k1), ZIG_KI, ZIG_WI, ZIG_FI)
    return g1, g2


class NoiseStream:
    """Deterministic Brownian increments keyed by (layer, site, step).

    ``increment(layer, coords, step, dt)`` returns ``sqrt(2*dt) * g``, the
    increment of ``sqrt(2) w`` over one step.
    """

    def __init__(self, seed: int, replica: int = 0):
        self.seed = int(seed)
        self.replica = int(replica)
        self.key = replica_key(self.seed, self.replica)

    def normals(self, coords, step: int, stream: int = 0):
        return standard_normal(self.seed, self.replica, site_keys(coords), step, stream)

    def gaussian(self, layer: int, coords, step: int) -> np.ndarray:
        if layer not in (1, 2):
            raise ValueError("layer must be 1 or 2")
        return self.normals(coords, step)[layer - 1]

    def increment(self, layer: int, coords, step: int, dt: float) -> np.ndarray:
        return math.sqrt(2.0 * dt) * self.gaussian(layer, coords, step)

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, replica={self.replica})"
