"""Closed-form and high-precision references shared by the tests."""
import functools

import mpmath
import numpy as np
import sympy as sp


def rank_one_I_mp(r):
    mpmath.mp.dps = 30
    return mpmath.quad(lambda t: mpmath.sin(t) ** 2 / t**2, [0, r])


def rank_one_root_mp(c0):
    """Root of 1 + c0 I(r) by high-precision quadrature and secant iteration."""
    mpmath.mp.dps = 30
    g = lambda r: 1 + c0 * rank_one_I_mp(r)
    lo, hi = mpmath.mpf("1e-6"), mpmath.mpf(1)
    while g(hi) > 0:
        lo, hi = hi, 2 * hi
    return float(mpmath.findroot(g, (lo, hi), solver="anderson"))


@functools.lru_cache(maxsize=None)
def _rank_one_symbolic(c0):
    r = sp.symbols("r", positive=True)
    c = sp.nsimplify(c0)
    I = sp.Si(2 * r) - sp.sin(r) ** 2 / r
    A = c * sp.sin(r) / (1 + c * I)
    trace = A * sp.sin(r)
    q1 = -2 / r * sp.diff(trace / r, r)
    mods = ["scipy", "numpy"]
    return sp.lambdify(r, A, modules=mods), sp.lambdify(r, trace, modules=mods), sp.lambdify(r, q1, modules=mods)


def rank_one_kernel(c0, r, s):
    """K(r, s) = A(r) sin s."""
    A = _rank_one_symbolic(c0)[0]
    return A(np.asarray(r, dtype=float)) * np.sin(s)


def rank_one_trace(c0, r):
    return _rank_one_symbolic(c0)[1](np.asarray(r, dtype=float))


def rank_one_q1(c0, r):
    return _rank_one_symbolic(c0)[2](np.asarray(r, dtype=float))
