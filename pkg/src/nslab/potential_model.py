"""
Radial potentials q(r), their weighted moment Q = int_0^inf r q dr and the
L_{1,1} norm int_0^inf r |q| dr.

Analytic families carry closed-form tails; tabulated potentials are cubic
splines of r*q(r) with a declared power tail (or a hard cut-off).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.integrate
from scipy.interpolate import CubicSpline

from .numerics_core import InvalidArgument

DEFAULT_TRUNCATION_RADIUS = 80.0


class NotInL11(ValueError):
    pass


@dataclass(frozen=True)
class MomentReport:
    Q: float
    norm: float
    truncation_radius: float
    quadrature_error_estimate: float


class Potential:
    """Base class. Subclasses implement ``_eval`` and ``tail``."""

    name = "potential"
    analytic = True
    breakpoints: tuple = ()
    sign_changes: tuple = ()
    support_end = math.inf

    def __init__(self, **params):
        self.params = {k: float(v) for k, v in params.items()}

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self._eval(r)

    def _eval(self, r):
        raise NotImplementedError

    def tail(self, R):
        """(int_R^inf r q dr, int_R^inf r |q| dr), closed form."""
        raise NotImplementedError

    def effective_range(self, tol: float = 1e-8) -> float:
        """Smallest radius beyond which the L_{1,1} tail is below ``tol``."""
        if math.isfinite(self.support_end):
            return self.support_end
        lo, hi = 0.0, 1.0
        while self.tail(hi)[1] > tol:
            lo, hi = hi, 2 * hi
            if hi > 1e6:
                raise NotInL11(f"{self.name}: tail does not fall below {tol}")
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if self.tail(mid)[1] > tol else (lo, mid)
        return hi

    def describe(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}

    def __add__(self, other):
        return LinearCombination([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return LinearCombination([(1.0, self), (-1.0, other)])

    def __rmul__(self, alpha):
        return LinearCombination([(float(alpha), self)])

    def __repr__(self):
        args = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"


class Zero(Potential):
    name = "zero"

    def _eval(self, r):
        return np.zeros_like(r)

    def tail(self, R):
        return 0.0, 0.0

    def effective_range(self, tol=1e-8):
        return 0.0


class Exponential(Potential):
    """depth * exp(-r / range)."""

    name = "exponential"

    def __init__(self, depth=1.0, range=1.0):
        if range <= 0:
            raise InvalidArgument("range must be > 0")
        super().__init__(depth=depth, range=range)

    def _eval(self, r):
        return self.params["depth"] * np.exp(-r / self.params["range"])

    def tail(self, R):
        d, a = self.params["depth"], self.params["range"]
        t = d * a * (R + a) * math.exp(-R / a)
        return t, abs(t)


class SquareWell(Potential):
    """-V0 on (0, a), zero beyond; attractive for V0 > 0."""

    name = "square-well"
    analytic = False

    def __init__(self, V0=2.0, a=1.0):
        if a <= 0:
            raise InvalidArgument("a must be > 0")
        super().__init__(V0=V0, a=a)
        self.breakpoints = (float(a),)
        self.support_end = float(a)

    def _eval(self, r):
        return np.where(r < self.params["a"], -self.params["V0"], 0.0)

    def tail(self, R):
        a, V0 = self.params["a"], self.params["V0"]
        if R >= a:
            return 0.0, 0.0
        t = -V0 * (a * a - R * R) / 2
        return t, abs(t)


class ZeroMoment(Potential):
    """depth * (exp(-r) - (4/9) exp(-2r/3)); int_0^inf r q dr = 0 exactly."""

    name = "zero-moment"
    beta = 4.0 / 9.0

    def __init__(self, depth=1.0):
        super().__init__(depth=depth)
        self.sign_changes = (3.0 * math.log(1.0 / self.beta),)

    def _eval(self, r):
        return self.params["depth"] * (np.exp(-r) - self.beta * np.exp(-2.0 * r / 3.0))

    def tail(self, R):
        d = self.params["depth"]
        t = d * ((R + 1.0) * math.exp(-R) - self.beta * 1.5 * (R + 1.5) * math.exp(-2.0 * R / 3.0))
        if R >= self.sign_changes[0]:
            return t, abs(t)
        # |q| tail straddles the sign change
        r0 = self.sign_changes[0]
        t0 = self.tail(r0)[0]
        return t, abs(t - t0) + abs(t0)


class TruncatedExponential(Potential):
    """depth * exp(-r) on (0, a), zero beyond (value jump at r = a)."""

    name = "truncated-exponential"
    analytic = False

    def __init__(self, depth=1.0, a=3.0):
        if a <= 0:
            raise InvalidArgument("a must be > 0")
        super().__init__(depth=depth, a=a)
        self.breakpoints = (float(a),)
        self.support_end = float(a)

    def _eval(self, r):
        return np.where(r < self.params["a"], self.params["depth"] * np.exp(-r), 0.0)

    def tail(self, R):
        d, a = self.params["depth"], self.params["a"]
        if R >= a:
            return 0.0, 0.0
        t = d * ((R + 1.0) * math.exp(-R) - (a + 1.0) * math.exp(-a))
        return t, abs(t)


class Kink(Potential):
    """depth * exp(-|r - a|): continuous, slope jumps by 2*depth at r = a."""

    name = "kink"
    analytic = False

    def __init__(self, depth=1.0, a=2.0):
        if a <= 0:
            raise InvalidArgument("a must be > 0")
        super().__init__(depth=depth, a=a)
        self.breakpoints = (float(a),)

    def _eval(self, r):
        return self.params["depth"] * np.exp(-np.abs(r - self.params["a"]))

    def tail(self, R):
        d, a = self.params["depth"], self.params["a"]
        if R >= a:
            t = d * (R + 1.0) * math.exp(-(R - a))
        else:
            inner = math.exp(-a) * ((a - 1.0) * math.exp(a) - (R - 1.0) * math.exp(R))
            t = d * (inner + a + 1.0)
        return t, abs(t)


class Tabulated(Potential):
    """Spline of r*q(r) through samples, with a power tail beyond the grid.

    Beyond the last node ``q(r) = q_end * (r_end / r)**tail_exponent``;
    ``tail_exponent = inf`` cuts the potential to zero. Below the first node
    the spline of r*q is extrapolated, which keeps Coulomb-like 1/r heads
    integrable in the L_{1,1} sense.
    """

    name = "tabulated"
    analytic = False

    def __init__(self, r, values, tail_exponent=math.inf):
        r = np.asarray(r, dtype=float)
        values = np.asarray(values, dtype=float)
        if r.ndim != 1 or r.shape != values.shape or r.size < 4:
            raise InvalidArgument("tabulated potential needs >= 4 matching (r, q) samples")
        if np.any(np.diff(r) <= 0) or r[0] < 0:
            raise InvalidArgument("tabulated r-grid must be non-negative and strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("tabulated values must be finite")
        if not tail_exponent > 2:
            raise NotInL11(f"tail exponent {tail_exponent} <= 2: int r|q| dr diverges")
        super().__init__(tail_exponent=tail_exponent)
        self.r = r
        self.values = values
        self.tail_exponent = float(tail_exponent)
        self._spline = CubicSpline(r, r * values, extrapolate=True)
        self.r_end = float(r[-1])
        self.q_end = float(values[-1])
        if math.isinf(self.tail_exponent):
            self.support_end = self.r_end
            self.breakpoints = (self.r_end,)

    def _eval(self, r):
        inside = r <= self.r_end
        out = np.empty_like(r)
        ri = r[inside]
        with np.errstate(divide="ignore", invalid="ignore"):
            out[inside] = np.where(ri > 0, self._spline(ri) / np.where(ri > 0, ri, 1.0), 0.0)
            if math.isinf(self.tail_exponent):
                out[~inside] = 0.0
            else:
                out[~inside] = self.q_end * (self.r_end / r[~inside]) ** self.tail_exponent
        return out

    def tail(self, R):
        if R < self.r_end:
            raise InvalidArgument("closed-form tail only available beyond the tabulated grid")
        if math.isinf(self.tail_exponent):
            return 0.0, 0.0
        p = self.tail_exponent
        t = self.q_end * self.r_end ** p * R ** (2.0 - p) / (p - 2.0)
        return t, abs(t)

    def describe(self):
        return {"name": self.name, "params": {"tail_exponent": self.tail_exponent,
                                              "n_samples": int(self.r.size),
                                              "r_end": self.r_end}}


class LinearCombination(Potential):
    name = "combination"

    def __init__(self, terms):
        super().__init__()
        flat = []
        for a, p in terms:
            if isinstance(p, LinearCombination):
                flat.extend((a * b, q) for b, q in p.terms)
            else:
                flat.append((a, p))
        self.terms = flat
        self.analytic = all(p.analytic for _, p in flat)
        self.breakpoints = tuple(sorted({b for _, p in flat for b in p.breakpoints}))
        self.sign_changes = tuple(sorted({b for _, p in flat for b in p.sign_changes}))
        self.support_end = max(p.support_end for _, p in flat)

    def _eval(self, r):
        return sum(a * p(r) for a, p in self.terms)

    def tail(self, R):
        # signed tail is exact; the |q| tail is an upper bound
        q = sum(a * p.tail(R)[0] for a, p in self.terms)
        n = sum(abs(a) * p.tail(R)[1] for a, p in self.terms)
        return q, n

    def describe(self):
        return {"name": self.name, "terms": [[a, p.describe()] for a, p in self.terms]}


_CATALOG = {
    "zero": Zero,
    "exponential": Exponential,
    "square-well": SquareWell,
    "zero-moment": ZeroMoment,
    "truncated-exponential": TruncatedExponential,
    "kink": Kink,
}


def catalog_names():
    return sorted(_CATALOG)


def catalog(name: str, **params) -> Potential:
    key = name.strip().lower().replace("_", "-")
    try:
        cls = _CATALOG[key]
    except KeyError:
        raise InvalidArgument(f"unknown potential {name!r}; known: {', '.join(catalog_names())}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise InvalidArgument(f"bad parameters for {key}: {exc}") from None


def _quad(f, a, b, points):
    pts = sorted(p for p in points if a < p < b)
    edges = [a, *pts, b]
    total, err = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, e = scipy.integrate.quad(f, lo, hi, limit=200, epsabs=1e-13, epsrel=1e-12)
        total += val
        err += e
    return total, err


def weighted_moment(q: Potential, truncation_radius: float = DEFAULT_TRUNCATION_RADIUS) -> MomentReport:
    """Q = int_0^inf r q dr and the L_{1,1} norm of ``q``.

    Quadrature on (0, R) split at the potential's breakpoints and sign
    changes, plus the closed-form tail beyond R.
    """
    if isinstance(q, Tabulated):
        if not q.tail_exponent > 2:
            raise NotInL11("tabulated tail exponent must exceed 2")
        R = max(truncation_radius, q.r_end)
    else:
        R = truncation_radius
    R = min(R, q.support_end) if math.isfinite(q.support_end) else R
    points = [*q.breakpoints, *q.sign_changes]
    if isinstance(q, Tabulated):
        points.extend(q.r[:: max(1, q.r.size // 50)])

    Qi, eQ = _quad(lambda r: r * float(q(r)), 0.0, R, points)
    Ni, eN = _quad(lambda r: r * abs(float(q(r))), 0.0, R, points)
    tQ, tN = q.tail(R)
    norm = Ni + tN
    if not math.isfinite(norm):
        raise NotInL11(f"{q!r}: L_1,1 norm is not finite")
    Q = Qi + tQ
    return MomentReport(Q=Q, norm=norm, truncation_radius=R, quadrature_error_estimate=eQ + eN)


def load_tabulated_csv(path, tail_exponent=math.inf) -> Tabulated:
    """Two-column (r, q) CSV; a non-numeric first line is treated as a header."""
    rows = []
    with open(Path(path), newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                if i == 0 or not rows:
                    continue
                raise InvalidArgument(f"{path}: malformed row {i + 1}: {row}") from None
    if not rows:
        raise InvalidArgument(f"{path}: no samples")
    arr = np.array(rows)
    return Tabulated(arr[:, 0], arr[:, 1], tail_exponent=tail_exponent)
