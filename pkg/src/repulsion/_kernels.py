"""Compiled batch stepper shared by every scheme.

A field batch has shape ``(R, n)``: ``R`` independent replicas on one box, each
row-major over the box sites.  The box is swept one lattice row (last axis) at
a time; per row the kernel fills Philox words, converts them with the fast
ziggurat path, repairs the rare rejects, builds the Laplacian from the
neighbouring rows, and applies the scheme's update.  Keeping these as separate
inner loops lets the first two and the last vectorize.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .noise import _LO, _SH32, _word, philox4x32, zig_fast, zig_slow
from .penalty import unit_T_interp

REFLECTED = 0
PENALIZED = 1
SMOOTHED = 2
WALL_ONLY = 3
NO_WALL = 4
SINGLE = 5
ROTATED = 6
FOLD = 7
FREE = 8

SCHEME_CODES = {
    "reflected": REFLECTED,
    "penalized": PENALIZED,
    "smoothed": SMOOTHED,
    "wall_only": WALL_ONLY,
    "no_wall": NO_WALL,
    "single": SINGLE,
    "rotated": ROTATED,
    "fold": FOLD,
    "free": FREE,
}

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@nb.njit(inline="always", cache=True)
def _row_noise(g1, g2, w1, w2, key0, L, step, k0, k1, rotate, ki, wi, fi):
    st = np.uint32(step)
    zero = np.uint32(0)
    for k in range(L):
        key = key0 + np.uint64(k)
        a0, a1, a2, a3 = philox4x32(st, zero, np.uint32(key & _LO), np.uint32(key >> _SH32), k0, k1)
        w1[k] = _word(a0, a1)
        w2[k] = _word(a2, a3)
    for k in range(L):
        g1[k] = zig_fast(w1[k], ki, wi)
        g2[k] = zig_fast(w2[k], ki, wi)
    for k in range(L):
        if g1[k] != g1[k] or g2[k] != g2[k]:
            key = key0 + np.uint64(k)
            c2 = np.uint32(key & _LO)
            c3 = np.uint32(key >> _SH32)
            if g1[k] != g1[k]:
                g1[k] = zig_slow(w1[k], 0, step, c2, c3, k0, k1, ki, wi, fi)
            if g2[k] != g2[k]:
                g2[k] = zig_slow(w2[k], 1, step, c2, c3, k0, k1, ki, wi, fi)
    if rotate:
        for k in range(L):
            x = g1[k]
            y = g2[k]
            g1[k] = (x + y) * _INV_SQRT2
            g2[k] = (y - x) * _INV_SQRT2


@nb.njit(inline="always", cache=True)
def _row_laplacian(acc, P, src, base, L, twod, nbr, row):
    for k in range(L):
        acc[k] = src[base + k] - twod * P[base + k]
    for k in range(1, L):
        acc[k] += P[base + k - 1]
    for k in range(L - 1):
        acc[k] += P[base + k + 1]
    for m in range(nbr.shape[1]):
        j = nbr[row, m]
        if j >= 0:
            jb = j * L
            for k in range(L):
                acc[k] += P[jb + k]


@nb.njit(cache=True)
def advance(p1, p2, q1, q2, l1, l2, dl1, dl2, src1, src2, nbr, rowkey, L, d,
            key0, key1, step0, nsteps, scheme, dt, noise_on, ie1, ie2, delta,
            tf, tm, th, ki, wi, fi, want_dl):
    """Advance every replica by ``nsteps`` explicit steps in place.

    ``p*`` hold the state on entry and exit, ``q*`` are scratch of the same
    shape.  Local times ``l*`` accumulate; ``dl*`` receive the last step's
    increments when ``want_dl`` is set.
    """
    R = p1.shape[0]
    n = p1.shape[1]
    nrows = n // L
    twod = 2.0 * d
    sig = math.sqrt(2.0 * dt) if noise_on else 0.0
    g1 = np.zeros(L)
    g2 = np.zeros(L)
    w1 = np.empty(L, dtype=np.uint64)
    w2 = np.empty(L, dtype=np.uint64)
    acc1 = np.empty(L)
    acc2 = np.empty(L)
    e1 = np.empty(L)
    e2 = np.empty(L)
    rotate = scheme == ROTATED
    a_p1, a_p2, a_q1, a_q2 = p1, p2, q1, q2
    for s in range(nsteps):
        step = step0 + s
        for r in range(R):
            P1 = a_p1[r]
            P2 = a_p2[r]
            Q1 = a_q1[r]
            Q2 = a_q2[r]
            k0 = np.uint32(key0[r])
            k1 = np.uint32(key1[r])
            for row in range(nrows):
                base = row * L
                if noise_on:
                    _row_noise(g1, g2, w1, w2, rowkey[row], L, step, k0, k1, rotate, ki, wi, fi)
                _row_laplacian(acc1, P1, src1, base, L, twod, nbr, row)
                if scheme != SINGLE:
                    _row_laplacian(acc2, P2, src2, base, L, twod, nbr, row)
                if scheme == REFLECTED:
                    for k in range(L):
                        a = P1[base + k] + dt * acc1[k] + sig * g1[k]
                        b = P2[base + k] + dt * acc2[k] + sig * g2[k]
                        h = 0.5 * (a + b)
                        u = max(0.0, min(a, h))
                        v = max(0.0, max(b, h))
                        e2[k] = v - b
                        e1[k] = (u - a) + (v - b) if u == 0.0 else 0.0
                        Q1[base + k] = u
                        Q2[base + k] = v
                elif scheme == FOLD:
                    for k in range(L):
                        a = P1[base + k] + dt * acc1[k] + sig * g1[k]
                        b = P2[base + k] + dt * acc2[k] + sig * g2[k]
                        u = min(abs(a), abs(b))
                        v = max(abs(a), abs(b))
                        e2[k] = v - b
                        e1[k] = (u - a) + (v - b)
                        Q1[base + k] = u
                        Q2[base + k] = v
                elif scheme == PENALIZED:
                    for k in range(L):
                        x1 = P1[base + k]
                        x2 = P2[base + k]
                        c1 = dt * ie1 * max(-x1, 0.0)
                        c2 = dt * ie2 * max(x1 - x2, 0.0)
                        e1[k] = c1
                        e2[k] = c2
                        Q1[base + k] = x1 + dt * acc1[k] + sig * g1[k] + c1 - c2
                        Q2[base + k] = x2 + dt * acc2[k] + sig * g2[k] + c2
                elif scheme == SMOOTHED:
                    for k in range(L):
                        x1 = P1[base + k]
                        x2 = P2[base + k]
                        c1 = -dt * delta * ie1 * unit_T_interp(x1 / delta, tf, tm, th)
                        c2 = -dt * delta * ie2 * unit_T_interp((x2 - x1) / delta, tf, tm, th)
                        e1[k] = c1
                        e2[k] = c2
                        Q1[base + k] = x1 + dt * acc1[k] + sig * g1[k] + c1 - c2
                        Q2[base + k] = x2 + dt * acc2[k] + sig * g2[k] + c2
                elif scheme == WALL_ONLY:
                    for k in range(L):
                        a = P1[base + k] + dt * acc1[k] + sig * g1[k]
                        b = P2[base + k] + dt * acc2[k] + sig * g2[k]
                        u = max(a, 0.0)
                        v = max(b, u)
                        e1[k] = u - a
                        e2[k] = v - b
                        Q1[base + k] = u
                        Q2[base + k] = v
                elif scheme == NO_WALL:
                    for k in range(L):
                        a = P1[base + k] + dt * acc1[k] + sig * g1[k]
                        b = P2[base + k] + dt * acc2[k] + sig * g2[k]
                        v = max(b, a)
                        e1[k] = 0.0
                        e2[k] = v - b
                        Q1[base + k] = a
                        Q2[base + k] = v
                elif scheme == SINGLE:
                    for k in range(L):
                        a = P1[base + k] + dt * acc1[k] + sig * g1[k]
                        u = max(a, 0.0)
                        e1[k] = u - a
                        e2[k] = 0.0
                        Q1[base + k] = u
                        Q2[base + k] = P2[base + k]
                elif scheme == ROTATED:
                    for k in range(L):
                        y1 = P1[base + k]
                        y2 = P2[base + k]
                        c1 = 0.5 * dt * ie1 * max(y2 - y1, 0.0)
                        c2 = 2.0 * dt * ie2 * max(-y2, 0.0)
                        e1[k] = c1
                        e2[k] = c2
                        Q1[base + k] = y1 + dt * acc1[k] + sig * g1[k] + c1
                        Q2[base + k] = y2 + dt * acc2[k] + sig * g2[k] + c2 - c1
                else:
                    for k in range(L):
                        e1[k] = 0.0
                        e2[k] = 0.0
                        Q1[base + k] = P1[base + k] + dt * acc1[k] + sig * g1[k]
                        Q2[base + k] = P2[base + k] + dt * acc2[k] + sig * g2[k]
                for k in range(L):
                    l1[r, base + k] += e1[k]
                    l2[r, base + k] += e2[k]
                if want_dl:
                    for k in range(L):
                        dl1[r, base + k] = e1[k]
                        dl2[r, base + k] = e2[k]
        a_p1, a_q1 = a_q1, a_p1
        a_p2, a_q2 = a_q2, a_p2
    if nsteps % 2 == 1:
        p1[:, :] = q1
        p2[:, :] = q2


@nb.njit(inline="always", cache=True)
def _site_update(scheme, x1, x2, a, b, ie1, ie2, dt, delta, tf, tm, th):
    """Scheme update at one site from the old values and tentative values."""
    if scheme == REFLECTED:
        h = 0.5 * (a + b)
        u = max(0.0, min(a, h))
        v = max(0.0, max(b, h))
        c2 = v - b
        c1 = (u - a) + c2 if u == 0.0 else 0.0
        return u, v, c1, c2
    if scheme == FOLD:
        u = min(abs(a), abs(b))
        v = max(abs(a), abs(b))
        return u, v, (u - a) + (v - b), v - b
    if scheme == PENALIZED:
        c1 = dt * ie1 * max(-x1, 0.0)
        c2 = dt * ie2 * max(x1 - x2, 0.0)
        return a + c1 - c2, b + c2, c1, c2
    if scheme == SMOOTHED:
        c1 = -dt * delta * ie1 * unit_T_interp(x1 / delta, tf, tm, th)
        c2 = -dt * delta * ie2 * unit_T_interp((x2 - x1) / delta, tf, tm, th)
        return a + c1 - c2, b + c2, c1, c2
    if scheme == WALL_ONLY:
        u = max(a, 0.0)
        v = max(b, u)
        return u, v, u - a, v - b
    if scheme == NO_WALL:
        v = max(b, a)
        return a, v, 0.0, v - b
    if scheme == SINGLE:
        u = max(a, 0.0)
        return u, x2, u - a, 0.0
    if scheme == ROTATED:
        c1 = 0.5 * dt * ie1 * max(x2 - x1, 0.0)
        c2 = 2.0 * dt * ie2 * max(-x2, 0.0)
        return a + c1, b + c2 - c1, c1, c2
    return a, b, 0.0, 0.0


@nb.njit(cache=True)
def advance_site(p1, p2, l1, l2, dl1, dl2, src1, src2, sitekey, d, key0, key1, step0,
                 nsteps, scheme, dt, noise_on, ie1, ie2, delta, tf, tm, th, ki, wi, fi, want_dl):
    """:func:`advance` for a one-site box; replicas outer, steps inner."""
    R = p1.shape[0]
    twod = 2.0 * d
    sig = math.sqrt(2.0 * dt) if noise_on else 0.0
    s1 = src1[0]
    s2 = src2[0]
    c2 = np.uint32(sitekey & _LO)
    c3 = np.uint32(sitekey >> _SH32)
    zero = np.uint32(0)
    for r in range(R):
        k0 = np.uint32(key0[r])
        k1 = np.uint32(key1[r])
        x1 = p1[r, 0]
        x2 = p2[r, 0]
        acc1 = 0.0
        acc2 = 0.0
        c1_last = 0.0
        c2_last = 0.0
        for s in range(nsteps):
            step = step0 + s
            g1 = 0.0
            g2 = 0.0
            if noise_on:
                a0, a1, a2, a3 = philox4x32(np.uint32(step), zero, c2, c3, k0, k1)
                w1 = _word(a0, a1)
                w2 = _word(a2, a3)
                g1 = zig_fast(w1, ki, wi)
                g2 = zig_fast(w2, ki, wi)
                if g1 != g1:
                    g1 = zig_slow(w1, 0, step, c2, c3, k0, k1, ki, wi, fi)
                if g2 != g2:
                    g2 = zig_slow(w2, 1, step, c2, c3, k0, k1, ki, wi, fi)
                if scheme == ROTATED:
                    g1, g2 = (g1 + g2) * _INV_SQRT2, (g2 - g1) * _INV_SQRT2
            a = x1 + dt * (s1 - twod * x1) + sig * g1
            b = x2 + dt * (s2 - twod * x2) + sig * g2
            x1, x2, c1_last, c2_last = _site_update(scheme, x1, x2, a, b, ie1, ie2, dt, delta, tf, tm, th)
            acc1 += c1_last
            acc2 += c2_last
        p1[r, 0] = x1
        p2[r, 0] = x2
        l1[r, 0] += acc1
        l2[r, 0] += acc2
        if want_dl:
            dl1[r, 0] = c1_last
            dl2[r, 0] = c2_last
