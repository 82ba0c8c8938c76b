"""
Fixed-energy (k = 1) radial scattering for a given potential.

The regular solution of

    phi'' + phi - l(l+1)/r^2 phi - q(r) phi = 0,    phi ~ u_l(r) as r -> 0

is integrated in variation-of-constants form, phi = a(r) u_l + b(r) v_l
with a' = v_l q phi and b' = -u_l q phi.  The coefficients are constant
wherever q vanishes, so the free problem is reproduced to rounding.  Phase
shifts and Jost magnitudes come from projecting phi onto (u_l, v_l) at two
radii:  phi ~ |F_l| sin(r - l pi/2 + delta_l).

``phase_shifts_variable_phase`` integrates the first-order phase equation
delta' = -q (cos delta u_l + sin delta v_l)^2 and serves as an independent
check.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from .numerics_core import InvalidArgument, gauss_legendre, composite_gauss_legendre
from .potential_model import Potential
from .special_functions import riccati_u_table, riccati_uv_scalar, riccati_v_table, _check_l

RTOL = 1e-9
ATOL = 1e-10
PROJECTION_OFFSET = 0.5 * math.pi
MATCH_DET_TOL = 1e-8


class IntegrationFailure(RuntimeError):
    pass


class MatchFailure(RuntimeError):
    pass


@dataclass
class PhaseShiftSet:
    deltas: np.ndarray
    jost_magnitudes: np.ndarray
    L: int
    match_radius: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=float)
        self.jost_magnitudes = np.asarray(self.jost_magnitudes, dtype=float)
        if self.deltas.shape != (self.L + 1,) or self.jost_magnitudes.shape != (self.L + 1,):
            raise InvalidArgument("PhaseShiftSet arrays must have L+1 entries")

    @property
    def tan_deltas(self):
        return np.tan(self.deltas)

    def truncated(self, L):
        return PhaseShiftSet(self.deltas[: L + 1], self.jost_magnitudes[: L + 1], L, self.match_radius, dict(self.meta))


@dataclass
class RegularSolution:
    l: int
    r_grid: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray


def reduce_phase(delta):
    """Map angles to (-pi/2, pi/2]."""
    d = np.mod(np.asarray(delta, dtype=float) + 0.5 * np.pi, np.pi) - 0.5 * np.pi
    return np.where(d <= -0.5 * np.pi, d + np.pi, d)


def _head_coefficients(q, l, r0):
    # a, b accumulated on (0, r0) with phi ~ u_l there
    rule = gauss_legendre(12, 0.0, r0)
    t = rule.nodes
    u = riccati_u_table(l, t)[l]
    v = riccati_v_table(l, t)[l]
    qt = q(t)
    return 1.0 + rule.integrate(v * qt * u), -rule.integrate(u * qt * u)


class _CoefficientPath:
    """Piecewise dense output of (a, b) on [r0, r_end]."""

    def __init__(self, q: Potential, l: int, r_end: float, rtol=RTOL, atol=ATOL):
        self.l = l
        self.r0 = 1e-4 * (l + 1)
        if r_end <= self.r0:
            raise InvalidArgument(f"integration end {r_end} must exceed start {self.r0}")
        self.r_end = r_end

        def rhs(r, y):
            u, v = riccati_uv_scalar(l, r)
            qphi = float(q(r)) * (y[0] * u + y[1] * v)
            return [v * qphi, -u * qphi]

        edges = [self.r0, *sorted(b for b in q.breakpoints if self.r0 < b < r_end), r_end]
        y = list(_head_coefficients(q, l, self.r0))
        self.pieces = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            sol = solve_ivp(rhs, (lo, hi), y, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
            if sol.status != 0:
                raise IntegrationFailure(f"l={l}: {sol.message} on [{lo:.4g}, {hi:.4g}]")
            self.pieces.append((lo, hi, sol.sol))
            y = sol.y[:, -1]
        self.n_rhs = None

    def __call__(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty((2, r.size))
        for i, x in enumerate(r):
            if x <= self.r0:
                out[:, i] = self.pieces[0][2](self.r0)
                continue
            for lo, hi, s in self.pieces:
                if x <= hi:
                    out[:, i] = s(x)
                    break
            else:
                raise InvalidArgument(f"r={x} beyond integrated range {self.r_end}")
        return out


def _inner_solution(q, l, r0, r_sw):
    """Direct (phi, phi') integration on [r0, r_sw] where v_l is large.

    phi has no zeros there, so pure relative error control is safe; the
    (a, b) form would let the absolute tolerance on b swamp the tiny phi.
    """
    a0, b0 = _head_coefficients(q, l, r0)
    u0, v0 = riccati_u_table(l + 1, [r0])[:, 0], riccati_v_table(l + 1, [r0])[:, 0]
    if l == 0:
        du, dv = math.cos(r0), -math.sin(r0)
    else:
        du, dv = u0[l - 1] - l * u0[l] / r0, v0[l - 1] - l * v0[l] / r0
    y0 = [a0 * u0[l] + b0 * v0[l], a0 * du + b0 * dv]
    ll = l * (l + 1)

    def rhs(r, y):
        return [y[1], (ll / (r * r) + float(q(r)) - 1.0) * y[0]]

    atol = 1e-12 * min(abs(y0[0]), abs(y0[1]))
    edges = [r0, *sorted(b for b in q.breakpoints if r0 < b < r_sw), r_sw]
    pieces, y = [], y0
    for lo, hi in zip(edges[:-1], edges[1:]):
        sol = solve_ivp(rhs, (lo, hi), y, method="DOP853", rtol=1e-11, atol=atol, dense_output=True)
        if sol.status != 0:
            raise IntegrationFailure(f"l={l}: {sol.message} on [{lo:.4g}, {hi:.4g}]")
        pieces.append((hi, sol.sol))
        y = sol.y[:, -1]

    def evaluate(r):
        for hi, s in pieces:
            if r <= hi:
                return s(r)
        return pieces[-1][1](r)

    return evaluate


def regular_solution(q: Potential, l: int, r_max: float, r_grid=None, n_points: int = 2000) -> RegularSolution:
    """Regular solution phi_l on ``r_grid`` (default: uniform up to r_max).

    Normalised as phi_l ~ u_l ~ r^{l+1} / (2l+1)!! near the origin.
    """
    l = _check_l(l, np.inf)
    if r_max < 10 * (l + 1):
        raise InvalidArgument(f"r_max must be >= 10*(l+1) = {10 * (l + 1)}")
    path = _CoefficientPath(q, l, r_max)
    if r_grid is None:
        r_grid = np.linspace(path.r0, r_max, n_points)
    r_grid = np.asarray(r_grid, dtype=float)
    if np.any(r_grid <= 0) or np.any(r_grid > r_max):
        raise InvalidArgument("r_grid must lie in (0, r_max]")
    r_sw = float(l + 1)
    values, derivs = np.empty(r_grid.size), np.empty(r_grid.size)
    outer = r_grid > r_sw
    if np.any(outer):
        ro = r_grid[outer]
        ab = path(ro)
        U = riccati_u_table(l + 1, ro)
        V = riccati_v_table(l + 1, ro)
        u, v = U[l], V[l]
        if l == 0:
            du, dv = np.cos(ro), -np.sin(ro)
        else:
            du = U[l - 1] - l * u / ro
            dv = V[l - 1] - l * v / ro
        values[outer] = ab[0] * u + ab[1] * v
        derivs[outer] = ab[0] * du + ab[1] * dv
    inner = np.flatnonzero(~outer)
    if inner.size:
        mid = _inner_solution(q, l, path.r0, r_sw)
        for i in inner:
            r = r_grid[i]
            if r <= path.r0:
                y = _inner_solution_head(q, l, r)
            else:
                y = mid(r)
            values[i], derivs[i] = y[0], y[1]
    return RegularSolution(l, r_grid, values, derivs)


def _inner_solution_head(q, l, r):
    a, b = _head_coefficients(q, l, r)
    U, V = riccati_u_table(l + 1, [r])[:, 0], riccati_v_table(l + 1, [r])[:, 0]
    if l == 0:
        du, dv = math.cos(r), -math.sin(r)
    else:
        du, dv = U[l - 1] - l * U[l] / r, V[l - 1] - l * V[l] / r
    return a * U[l] + b * V[l], a * du + b * dv


def project_two_point(l: int, r1: float, r2: float, phi1: float, phi2: float, uv=None):
    """Solve phi(r_i) = A u_l(r_i) + B v_l(r_i); return (delta, |F|).

    ``uv`` optionally supplies ((u1, u2), (v1, v2)) already evaluated.
    """
    if uv is None:
        u = riccati_u_table(l, [r1, r2])[l]
        v = riccati_v_table(l, [r1, r2])[l]
    else:
        u, v = uv
    det = u[0] * v[1] - u[1] * v[0]
    scale = abs(u[0] * v[1]) + abs(u[1] * v[0])
    if not scale > 0 or abs(det) < MATCH_DET_TOL * scale:
        raise MatchFailure(f"l={l}: projection determinant {det:.3e} at r=({r1:.4g}, {r2:.4g})")
    A = (phi1 * v[1] - phi2 * v[0]) / det
    B = (u[0] * phi2 - u[1] * phi1) / det
    return float(reduce_phase(math.atan2(B, A))), math.hypot(A, B)


def _single_shift(q, l, match_radius, rtol, atol):
    r1, r2 = match_radius - PROJECTION_OFFSET, match_radius
    path = _CoefficientPath(q, l, r2, rtol=rtol, atol=atol)
    ab = path([r1, r2])
    u = riccati_u_table(l, [r1, r2])[l]
    v = riccati_v_table(l, [r1, r2])[l]
    phi = ab[0] * u + ab[1] * v
    return project_two_point(l, r1, r2, phi[0], phi[1])


def phase_shifts(q: Potential, L: int, match_radius: float = 30.0, rtol=RTOL, atol=ATOL) -> PhaseShiftSet:
    """delta_l and |F_l| for l = 0..L by two-point projection at
    (match_radius - pi/2, match_radius)."""
    L = _check_l(L, np.inf)
    if match_radius - PROJECTION_OFFSET <= 1e-4 * (L + 1):
        raise InvalidArgument("match radius too small")
    deltas, mags = np.empty(L + 1), np.empty(L + 1)
    for l in range(L + 1):
        deltas[l], mags[l] = _single_shift(q, l, match_radius, rtol, atol)
    return PhaseShiftSet(deltas, mags, L, float(match_radius), {"method": "two-point projection"})


def phase_shifts_variable_phase(q: Potential, l: int, r_max: float | None = None,
                                rtol: float = 1e-11, atol: float = 1e-13) -> float:
    """Phase shift from the variable-phase equation, reduced to (-pi/2, pi/2]."""
    l = _check_l(l, np.inf)
    if r_max is None:
        r_max = q.effective_range(1e-11)
    r0 = 1e-4 * (l + 1)
    rule = gauss_legendre(12, 0.0, r0)
    u0 = riccati_u_table(l, rule.nodes)[l]
    delta0 = -rule.integrate(q(rule.nodes) * u0 * u0)
    if r_max <= r0:
        return float(reduce_phase(delta0))

    def rhs(r, y):
        u, v = riccati_uv_scalar(l, r)
        p = math.cos(y[0]) * u + math.sin(y[0]) * v
        return [-float(q(r)) * p * p]

    y = [delta0]
    edges = [r0, *sorted(b for b in q.breakpoints if r0 < b < r_max), r_max]
    for lo, hi in zip(edges[:-1], edges[1:]):
        sol = solve_ivp(rhs, (lo, hi), y, method="LSODA", rtol=rtol, atol=atol)
        if sol.status != 0:
            raise IntegrationFailure(f"variable phase, l={l}: {sol.message}")
        y = sol.y[:, -1]
    return float(reduce_phase(y[0]))


def born_phase_shift(q: Potential, l: int, r_max: float | None = None, panels: int = 400) -> float:
    """First Born estimate -int_0^inf q u_l^2 dr."""
    if r_max is None:
        r_max = max(q.effective_range(1e-12), 1.0)
    edges = np.unique(np.concatenate([np.linspace(0.0, r_max, panels + 1),
                                      [b for b in q.breakpoints if b < r_max]]))
    rule = composite_gauss_legendre(edges, 16)
    u = riccati_u_table(l, rule.nodes)[l]
    return -rule.integrate(q(rule.nodes) * u * u)


def jost_magnitude_bound(shifts: PhaseShiftSet) -> float:
    """max_l |F_l| over the computed set; depends on L (reported, not extrapolated)."""
    return float(np.max(shifts.jost_magnitudes))


def write_shifts_csv(shifts: PhaseShiftSet, path, header: str | None = None, extra: dict | None = None):
    extra = extra or {}
    cols = ["l", "delta", "jost_magnitude", *extra]
    with open(Path(path), "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write(",".join(cols) + "\n")
        for l in range(shifts.L + 1):
            vals = [shifts.deltas[l], shifts.jost_magnitudes[l], *(extra[k][l] for k in extra)]
            fh.write(f"{l}," + ",".join(f"{x:.17g}" for x in vals) + "\n")


def read_shifts_csv(path, match_radius: float = float("nan")) -> PhaseShiftSet:
    rows = []
    with open(Path(path), newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or not {"l", "delta"} <= set(reader.fieldnames):
        raise InvalidArgument(f"{path}: expected columns l, delta[, jost_magnitude]")
    for row in reader:
        rows.append((int(row["l"]), float(row["delta"]), float(row.get("jost_magnitude") or 1.0)))
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise InvalidArgument(f"{path}: l column must be 0..L without gaps")
    arr = np.array(rows, dtype=float)
    return PhaseShiftSet(arr[:, 1], arr[:, 2], len(rows) - 1, match_radius, {"source": str(path)})
