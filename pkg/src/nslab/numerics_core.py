"""
Shared numerical primitives: Gauss-Legendre rules, dense solves with
conditioning data, grid differentiation, bracketed roots and nonlinear
least squares.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.optimize


class InvalidArgument(ValueError):
    pass


class SingularSystem(ArithmeticError):
    """Raised when a dense system is numerically singular.

    Carries the smallest-singular-value and condition estimates so callers
    can report *how* singular the system was.
    """

    def __init__(self, smallest_singular, condition, norm):
        self.smallest_singular = float(smallest_singular)
        self.condition = float(condition)
        self.norm = float(norm)
        super().__init__(
            f"numerically singular system: sigma_min ~ {self.smallest_singular:.3e}, "
            f"cond ~ {self.condition:.3e}, |A|_inf = {self.norm:.3e}"
        )


class NoBracket(ValueError):
    pass


class FitStepFailed(RuntimeError):
    """A residual evaluation inside the least-squares loop raised.

    The original exception is kept on ``inner`` (and chained as ``__cause__``).
    """

    def __init__(self, inner: BaseException, params=None):
        self.inner = inner
        self.params = None if params is None else np.array(params, dtype=float)
        super().__init__(f"residual evaluation failed: {inner}")


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True)
class LinearSolveReport:
    solution: np.ndarray
    condition_estimate: float
    smallest_singular_value_estimate: float
    residual_inf: float = 0.0


@lru_cache(maxsize=512)
def _leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int, a: float, b: float) -> QuadratureRule:
    """n-point Gauss-Legendre rule mapped to [a, b]; exact to degree 2n-1."""
    if int(n) != n or n < 1:
        raise InvalidArgument(f"n must be a positive integer, got {n!r}")
    if not (np.isfinite(a) and np.isfinite(b)):
        raise InvalidArgument("integration bounds must be finite")
    if not a < b:
        raise InvalidArgument(f"need a < b, got [{a}, {b}]")
    x, w = _leggauss(int(n))
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b) + half * x
    return QuadratureRule(nodes=nodes, weights=half * w)


def composite_gauss_legendre(edges, n_per_panel: int = 20) -> QuadratureRule:
    """Gauss-Legendre rule repeated over consecutive panels ``edges``."""
    edges = np.asarray(edges, dtype=float)
    rules = [gauss_legendre(n_per_panel, lo, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
    return QuadratureRule(
        nodes=np.concatenate([q.nodes for q in rules]),
        weights=np.concatenate([q.weights for q in rules]),
    )


def solve_dense(A, b, rtol: Optional[float] = None, exact_svd_max: int = 200) -> LinearSolveReport:
    """Solve ``A x = b`` by LU and report conditioning.

    For n <= ``exact_svd_max`` the singular values are computed exactly;
    above that the 1-norm condition number is estimated from the LU factors
    (LAPACK ``gecon``) and sigma_min is taken as ``|A|_1 / cond``.

    ``rtol`` is the singularity threshold relative to ``|A|_inf``; the
    default is the machine threshold ``n * eps``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgument(f"A must be square, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise InvalidArgument("dimension mismatch between A and b")
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)):
        raise InvalidArgument("non-finite entries in linear system")
    n = A.shape[0]
    if rtol is None:
        rtol = max(n, 1) * np.finfo(float).eps
    norm_inf = np.linalg.norm(A, np.inf)

    if n <= exact_svd_max:
        sv = np.linalg.svd(A, compute_uv=False)
        smin = sv[-1]
        cond = np.inf if smin == 0 else sv[0] / smin
    else:
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
        anorm = np.linalg.norm(A, 1)
        gecon, = scipy.linalg.get_lapack_funcs(("gecon",), (lu,))
        rcond, _ = gecon(lu, anorm, norm="1")
        cond = np.inf if rcond == 0 else 1.0 / rcond
        smin = anorm * rcond

    if smin < rtol * norm_inf:
        raise SingularSystem(smin, cond, norm_inf)

    if n <= exact_svd_max:
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    res = np.max(np.abs(A @ x - b)) if n else 0.0
    return LinearSolveReport(
        solution=x,
        condition_estimate=max(float(cond), 1.0),
        smallest_singular_value_estimate=float(smin),
        residual_inf=float(res),
    )


def fd_weights(z: float, x, m: int = 1) -> np.ndarray:
    """Finite-difference weights for the m-th derivative at ``z`` from nodes ``x``.

    Fornberg's recursion; returns an array of shape (len(x),).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def differentiate_grid(xs, ys, width: int = 5) -> np.ndarray:
    """First derivative of sampled data with ``width``-point stencils.

    Interior points use centred stencils; the first and last ``width // 2``
    points use one-sided stencils of the same width, so the error is
    O(h^(width-1)) everywhere on smooth data. Non-uniform grids are handled
    through Fornberg weights.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    n = len(xs)
    if ys.shape != xs.shape:
        raise InvalidArgument("xs and ys must have the same shape")
    if n < width:
        raise InvalidArgument(f"need at least {width} samples, got {n}")
    if np.any(np.diff(xs) <= 0):
        raise InvalidArgument("xs must be strictly increasing")

    half = width // 2
    h = np.diff(xs)
    uniform = np.allclose(h, h[0], rtol=1e-12, atol=0.0)
    out = np.empty(n)
    if uniform and width == 5:
        out[2:-2] = (ys[:-4] - 8 * ys[1:-3] + 8 * ys[3:-1] - ys[4:]) / (12 * h[0])
        edges = list(range(half)) + list(range(n - half, n))
    else:
        edges = range(n)
    for i in edges:
        lo = min(max(i - half, 0), n - width)
        sl = slice(lo, lo + width)
        out[i] = fd_weights(xs[i], xs[sl]) @ ys[sl]
    return out


def find_root_bracketed(f: Callable[[float], float], a: float, b: float, tol: float = 1e-12) -> float:
    fa, fb = f(a), f(b)
    if fa == 0:
        return float(a)
    if fb == 0:
        return float(b)
    if not np.sign(fa) * np.sign(fb) < 0:
        raise NoBracket(f"no sign change on [{a}, {b}]: f(a)={fa:.3e}, f(b)={fb:.3e}")
    return float(scipy.optimize.brentq(f, a, b, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))


@dataclass
class FitResult:
    x: np.ndarray
    residual_norm: float
    initial_residual_norm: float
    iterations: int
    n_evaluations: int
    success: bool
    message: str


def least_squares_fit(
    residual: Callable[[np.ndarray], np.ndarray],
    initial,
    xtol: float = 1e-14,
    ftol: float = 1e-14,
    gtol: float = 1e-14,
    max_nfev: Optional[int] = None,
    diff_step: Optional[float] = None,
) -> FitResult:
    """Minimise ``|residual(x)|_2`` starting from ``initial``.

    Trust-region reflective iterations from scipy. Any exception raised by
    ``residual`` is re-raised as :class:`FitStepFailed`. The returned point
    never has a larger residual than ``initial``.
    """
    x0 = np.atleast_1d(np.asarray(initial, dtype=float))
    counter = {"n": 0}

    def wrapped(x):
        counter["n"] += 1
        try:
            return np.atleast_1d(np.asarray(residual(x), dtype=float))
        except Exception as exc:  # noqa: BLE001 - every inner failure is a failed step
            raise FitStepFailed(exc, x) from exc

    r0 = wrapped(x0)
    if not np.all(np.isfinite(r0)):
        raise InvalidArgument("residual is not finite at the initial point")
    if r0.size < x0.size:
        raise InvalidArgument(f"need at least as many residuals ({r0.size}) as parameters ({x0.size})")
    norm0 = float(np.linalg.norm(r0))

    if norm0 == 0.0:
        return FitResult(x0, 0.0, 0.0, 0, counter["n"], True, "initial point is an exact solution")

    sol = scipy.optimize.least_squares(
        wrapped, x0, method="trf", xtol=xtol, ftol=ftol, gtol=gtol,
        max_nfev=max_nfev, diff_step=diff_step,
    )
    norm = float(np.linalg.norm(sol.fun))
    x = sol.x
    if norm > norm0:
        x, norm = x0, norm0
    return FitResult(
        x=np.array(x),
        residual_norm=norm,
        initial_residual_norm=norm0,
        iterations=int(getattr(sol, "njev", 0) or 0),
        n_evaluations=counter["n"],
        success=bool(sol.success),
        message=str(sol.message),
    )
