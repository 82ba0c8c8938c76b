"""
Riccati-Bessel functions at unit wavenumber.

    u_l(r) = sqrt(pi r / 2) J_{l+1/2}(r)      ~ sin(r - l pi / 2)
    v_l(r) = -sqrt(pi r / 2) Y_{l+1/2}(r)     ~ cos(r - l pi / 2)

u_l is the regular free radial solution, v_l the irregular one.  Both
satisfy  y'' + y - l(l+1)/r^2 y = 0  and  u_l' v_l - u_l v_l' = 1.

u_l comes from Miller's downward recurrence normalised against u_0 or u_1
(ascending series for r < 0.1); v_l from upward recurrence, which is the
stable direction for the irregular solution.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from .numerics_core import InvalidArgument

L_MAX_SUPPORTED = 60
SERIES_RADIUS = 0.1
_SERIES_TERMS = 12
_RESCALE = 1e200


class AccuracyLoss(RuntimeWarning):
    """v_l overflowed or lost significance (r much smaller than l)."""


def _check_l(l, l_max):
    if isinstance(l, (bool, np.bool_)) or int(l) != l or l < 0:
        raise InvalidArgument(f"angular momentum must be a non-negative integer, got {l!r}")
    if l > l_max:
        raise InvalidArgument(f"l = {l} exceeds supported maximum {l_max}")
    return int(l)


def _check_r(r):
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise InvalidArgument("radius must be finite and > 0")
    return r


def log_double_factorial(n: int) -> float:
    """log(n!!) for odd n >= -1."""
    if n <= 0:
        return 0.0
    k = (n + 1) // 2
    return math.lgamma(2 * k + 1) - k * math.log(2.0) - math.lgamma(k + 1)


def _series_table(L, r):
    out = np.empty((L + 1, r.size))
    x = -0.5 * r * r
    logr = np.log(r)
    for l in range(L + 1):
        term = np.ones_like(r)
        total = np.ones_like(r)
        for k in range(1, _SERIES_TERMS):
            term = term * x / (k * (2 * l + 2 * k + 1))
            total = total + term
        out[l] = np.exp((l + 1) * logr - log_double_factorial(2 * l + 1)) * total
    return out


def _miller_table(L, r):
    N = int(max(L, np.max(r))) + 30 + int(10 * np.max(r) ** (1.0 / 3.0))
    out = np.zeros((L + 1, r.size))
    above = np.zeros_like(r)
    cur = np.full_like(r, 1e-300)
    if N <= L:
        out[N] = cur
    for l in range(N, 0, -1):
        below = (2 * l + 1) / r * cur - above
        above, cur = cur, below
        big = np.abs(cur) > _RESCALE
        if np.any(big):
            above[big] /= _RESCALE
            cur[big] /= _RESCALE
            out[:, big] /= _RESCALE
        if l - 1 <= L:
            out[l - 1] = cur
    # cur = y_0, above = y_1 (unnormalised)
    s, c = np.sin(r), np.cos(r)
    u1 = s / r - c
    use0 = np.abs(s) >= np.abs(u1)
    scale = np.where(use0, s / np.where(use0, cur, 1.0), u1 / np.where(use0, 1.0, above))
    return out * scale


def riccati_u_table(L: int, r) -> np.ndarray:
    """u_0..u_L at every radius in ``r``; shape (L+1, len(r))."""
    L = _check_l(L, np.inf)
    r = np.atleast_1d(_check_r(r)).ravel()
    out = np.empty((L + 1, r.size))
    small = r < SERIES_RADIUS
    if np.any(small):
        out[:, small] = _series_table(L, r[small])
    if np.any(~small):
        out[:, ~small] = _miller_table(L, r[~small])
    return out


def riccati_v_table(L: int, r) -> np.ndarray:
    """v_0..v_L at every radius in ``r``; shape (L+1, len(r))."""
    L = _check_l(L, np.inf)
    r = np.atleast_1d(_check_r(r)).ravel()
    out = np.empty((L + 1, r.size))
    with np.errstate(over="ignore", invalid="ignore"):
        out[0] = np.cos(r)
        if L >= 1:
            out[1] = np.cos(r) / r + np.sin(r)
        for l in range(1, L):
            out[l + 1] = (2 * l + 1) / r * out[l] - out[l - 1]
    if not np.all(np.isfinite(out)) or np.any(np.abs(out) > 1e280):
        warnings.warn(
            f"irregular Riccati-Bessel values overflow for L={L} at r={r.min():.3g}",
            AccuracyLoss, stacklevel=2,
        )
    return out


def _scalar_or_array(values, r):
    return float(values[0]) if np.ndim(r) == 0 else values.reshape(np.shape(r))


def riccati_bessel_u(l: int, r, l_max: int = L_MAX_SUPPORTED):
    l = _check_l(l, l_max)
    _check_r(r)
    return _scalar_or_array(riccati_u_table(l, r)[l], r)


def riccati_bessel_v(l: int, r, l_max: int = L_MAX_SUPPORTED):
    l = _check_l(l, l_max)
    _check_r(r)
    return _scalar_or_array(riccati_v_table(l, r)[l], r)


def riccati_bessel_du(l: int, r, l_max: int = L_MAX_SUPPORTED):
    """d u_l / dr via u_l' = u_{l-1} - l u_l / r."""
    l = _check_l(l, l_max)
    rr = np.atleast_1d(_check_r(r)).ravel()
    if l == 0:
        return _scalar_or_array(np.cos(rr), r)
    t = riccati_u_table(l, rr)
    return _scalar_or_array(t[l - 1] - l * t[l] / rr, r)


def riccati_bessel_dv(l: int, r, l_max: int = L_MAX_SUPPORTED):
    l = _check_l(l, l_max)
    rr = np.atleast_1d(_check_r(r)).ravel()
    if l == 0:
        return _scalar_or_array(-np.sin(rr), r)
    t = riccati_v_table(l, rr)
    return _scalar_or_array(t[l - 1] - l * t[l] / rr, r)


def u_asymptotic(l: int, r):
    """Large-r form sin(r - l pi / 2)."""
    return np.sin(np.asarray(r, dtype=float) - 0.5 * l * np.pi)


def v_asymptotic(l: int, r):
    return np.cos(np.asarray(r, dtype=float) - 0.5 * l * np.pi)


def riccati_uv_scalar(l: int, r: float):
    """(u_l(r), v_l(r)) for one radius in plain floats.

    Same recurrences as the table routines; upward recurrence for u_l is
    used where it is stable (l <= r). Meant for ODE right-hand sides where
    per-call overhead dominates.
    """
    s, c = math.sin(r), math.cos(r)
    # v: upward
    v_prev, v = c, c / r + s
    if l == 0:
        v = c
    else:
        for k in range(1, l):
            v_prev, v = v, (2 * k + 1) / r * v - v_prev
    if r < SERIES_RADIUS:
        x = -0.5 * r * r
        term = total = 1.0
        for k in range(1, _SERIES_TERMS):
            term *= x / (k * (2 * l + 2 * k + 1))
            total += term
        u = math.exp((l + 1) * math.log(r) - log_double_factorial(2 * l + 1)) * total
        return u, v
    u0, u1 = s, s / r - c
    if l == 0:
        return u0, v
    if l <= r:
        a, b = u0, u1
        for k in range(1, l):
            a, b = b, (2 * k + 1) / r * b - a
        return b, v
    N = l + 30 + int(10 * r ** (1.0 / 3.0))
    above, cur, ul = 0.0, 1e-300, 0.0
    for k in range(N, 0, -1):
        above, cur = cur, (2 * k + 1) / r * cur - above
        if abs(cur) > _RESCALE:
            above /= _RESCALE
            cur /= _RESCALE
            ul /= _RESCALE
        if k - 1 == l:
            ul = cur
    scale = u0 / cur if abs(u0) >= abs(u1) else u1 / above
    return ul * scale, v
