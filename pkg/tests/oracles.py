"""Independent reference computations shared by the test modules."""

import mpmath
import numpy as np


def watson_g3() -> float:
    """Lattice Green function of the discrete-time walk on Z^3 at the origin,
    from the closed form in Gamma functions (independent of any quadrature)."""
    mpmath.mp.dps = 30
    g = mpmath.gamma
    return float(mpmath.sqrt(6) / (32 * mpmath.pi**3) * g(mpmath.mpf(1) / 24) * g(mpmath.mpf(5) / 24)
                 * g(mpmath.mpf(7) / 24) * g(mpmath.mpf(11) / 24))


def _cone_dist2(a, b, s, w):
    # cone point (s, s + w) with s, w >= 0
    return (s - a) ** 2 + (s + w - b) ** 2


def brute_cone_projection(a, b, tol: float = 1e-4, polish_iters: int = 400):
    """Nearest point of ``{0 <= u <= v}`` by brute force.

    A shrinking 11 x 11 grid search in the parametrization ``(s, s + w)``,
    ``s, w >= 0`` runs until the spacing is below ``tol``; projected gradient
    descent on the same box-constrained quadratic then polishes the result.
    No region formulas are used.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    span = np.maximum(np.abs(a), np.abs(b)) * 2 + 1
    s = span / 2
    w = span / 2
    h = span / 2
    offs = np.linspace(-1.0, 1.0, 11)
    while True:
        S = np.maximum(s[:, None, None] + h[:, None, None] * offs[None, :, None], 0.0)
        W = np.maximum(w[:, None, None] + h[:, None, None] * offs[None, None, :], 0.0)
        S, W = np.broadcast_arrays(S, W)
        f = _cone_dist2(a[:, None, None], b[:, None, None], S, W).reshape(len(a), -1)
        k = np.argmin(f, axis=1)
        s = S.reshape(len(a), -1)[np.arange(len(a)), k]
        w = W.reshape(len(a), -1)[np.arange(len(a)), k]
        if np.all(h * 0.2 < tol):
            break
        h = h * 0.4
    # gradient of the quadratic; Lipschitz constant 3 + sqrt(5)
    step = 1.0 / (3.0 + np.sqrt(5.0))
    for _ in range(polish_iters):
        r = s + w - b
        gs = 2 * (s - a) + 2 * r
        gw = 2 * r
        s = np.maximum(s - step * gs, 0.0)
        w = np.maximum(w - step * gw, 0.0)
    return s, s + w
