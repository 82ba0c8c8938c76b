"""
Newton-Sabatier machinery at fixed energy k = 1.

    f(r, s)  = sum_l c_l u_l(r) u_l(s)
    K(r, s)  = f(r, s) - int_0^r K(r, t) f(t, s) dt / t^2,     0 <= s <= r
    q1(r)    = -(2 / r) d/dr [K(r, r) / r]
    phi_l(r) = u_l(r) - int_0^r K(r, t) u_l(t) dt / t^2

The integral equation is solved independently at every radius by a
Nystrom discretisation on Gauss-Legendre nodes in (0, r).  The smallest
singular value and the sign of the Nystrom determinant are tracked along a
radial sweep; the first radius where the system is singular (or where the
determinant changes sign, refined by root finding) is the breakdown radius
and stops the sweep.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .forward_scattering import PhaseShiftSet, project_two_point, PROJECTION_OFFSET, MatchFailure
from .numerics_core import (
    FitStepFailed,
    InvalidArgument,
    LinearSolveReport,
    SingularSystem,
    differentiate_grid,
    find_root_bracketed,
    gauss_legendre,
    least_squares_fit,
    solve_dense,
)
from .special_functions import riccati_u_table, riccati_v_table

SINGULAR_RTOL = 1e-10
MIN_NODES = 16
NODES_PER_PI = 8


class BasicEquationNotSolvable(ArithmeticError):
    def __init__(self, r, smallest_singular, condition=math.inf):
        self.r = float(r)
        self.smallest_singular = float(smallest_singular)
        self.condition = float(condition)
        super().__init__(f"basic equation not solvable at r = {self.r:.10g} "
                         f"(sigma_min ~ {self.smallest_singular:.3e})")


class ReconstructionImpossible(RuntimeError):
    pass


class NotAvailable(RuntimeError):
    pass


@dataclass(frozen=True)
class CoefficientSet:
    c: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float)).copy()
        if c.ndim != 1 or c.size == 0:
            raise InvalidArgument("coefficients must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(c)):
            raise InvalidArgument("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def L(self) -> int:
        return self.c.size - 1

    @property
    def sum_abs(self) -> float:
        return float(np.sum(np.abs(self.c)))

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.c)))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.c)

    @classmethod
    def zeros(cls, L):
        return cls(np.zeros(L + 1))

    @classmethod
    def rank_one(cls, c0, L=0):
        c = np.zeros(L + 1)
        c[0] = c0
        return cls(c)

    def padded(self, L):
        if L < self.L:
            raise InvalidArgument("cannot pad to a smaller L")
        c = np.zeros(L + 1)
        c[: self.c.size] = self.c
        return CoefficientSet(c, dict(self.meta))

    def to_csv(self, path, header=None):
        with open(Path(path), "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write("l,c_l\n")
            for l, v in enumerate(self.c):
                fh.write(f"{l},{v:.17g}\n")

    @classmethod
    def from_csv(cls, path):
        with open(Path(path), newline="") as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
        rows = []
        for row in csv.reader(lines):
            try:
                rows.append((int(row[0]), float(row[1])))
            except ValueError:
                if rows:
                    raise InvalidArgument(f"{path}: malformed row {row}") from None
        if not rows:
            raise InvalidArgument(f"{path}: no coefficients")
        L = max(l for l, _ in rows)
        c = np.zeros(L + 1)
        for l, v in rows:
            c[l] = v
        return cls(c)


def build_f(c: CoefficientSet, r, s):
    """f(r, s) = sum_l c_l u_l(r) u_l(s), truncated at l = L.

    Both arguments are evaluated in one batch so f(r, s) == f(s, r) bitwise.
    """
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    rb, sb = np.broadcast_arrays(r, s)
    flat = np.concatenate([rb.ravel(), sb.ravel()])
    U = riccati_u_table(c.L, flat)
    n = rb.size
    out = np.zeros(n)
    for l in range(c.L + 1):
        if c.c[l]:
            out += c.c[l] * (U[l, :n] * U[l, n:])
    return float(out[0]) if rb.ndim == 0 else out.reshape(rb.shape)


def node_count(r: float, factor: int = 1) -> int:
    """max(16, ceil(8 r / pi)), i.e. >= 8 nodes per oscillation at k = 1."""
    return factor * max(MIN_NODES, int(math.ceil(NODES_PER_PI * r / math.pi)))


@dataclass
class _System:
    r: float
    nodes: np.ndarray
    weights: np.ndarray
    U: np.ndarray        # u_l at nodes, (L+1, n)
    u_r: np.ndarray      # u_l(r), (L+1,)
    A: np.ndarray
    rhs: np.ndarray      # f(r, t_i)
    f_rr: float


@lru_cache(maxsize=8192)
def _node_table(L: int, r: float, n: int):
    rule = gauss_legendre(n, 0.0, r)
    table = riccati_u_table(L, np.append(rule.nodes, r))
    table.setflags(write=False)
    return rule, table


def _system(c: CoefficientSet, r: float, n: int) -> _System:
    rule, table = _node_table(c.L, float(r), int(n))
    t = rule.nodes
    U, u_r = table[:, :n], table[:, n]
    F = U.T @ (c.c[:, None] * U)
    omega = rule.weights / t**2
    A = np.eye(n) + F * omega[None, :]
    rhs = U.T @ (c.c * u_r)
    return _System(r, t, rule.weights, U, u_r, A, rhs, float(np.dot(c.c, u_r * u_r)))


def _det(c, r, n):
    sign, logdet = np.linalg.slogdet(_system(c, r, n).A)
    return float(sign * math.exp(logdet)) if logdet < 700 else float(sign) * math.inf


@dataclass
class BasicSolution:
    r: float
    nodes: np.ndarray
    weights: np.ndarray
    K: np.ndarray          # K(r, t_j)
    K_rr: float
    U: np.ndarray
    u_r: np.ndarray
    det_sign: float

    def phi(self, l=None):
        """phi_l(r) = u_l(r) - sum_j w_j K(r, t_j) u_l(t_j) / t_j^2 for all l (or one)."""
        wk = self.weights * self.K / self.nodes**2
        vals = self.u_r - self.U @ wk
        return vals if l is None else float(vals[l])


def solve_basic_equation(c: CoefficientSet, r: float, n_nodes: Optional[int] = None,
                         rtol: float = SINGULAR_RTOL):
    """Nystrom solution of the basic equation at one radius.

    Returns ``(BasicSolution, LinearSolveReport)``. Raises
    :class:`BasicEquationNotSolvable` if the discrete system is singular.
    """
    if not (np.isfinite(r) and r > 0):
        raise InvalidArgument(f"radius must be > 0, got {r}")
    n = node_count(r) if n_nodes is None else int(n_nodes)
    sysm = _system(c, float(r), n)
    try:
        rep = solve_dense(sysm.A, sysm.rhs, rtol=rtol)
    except SingularSystem as exc:
        raise BasicEquationNotSolvable(r, exc.smallest_singular, exc.condition) from exc
    K = rep.solution
    omega = sysm.weights / sysm.nodes**2
    K_rr = sysm.f_rr - float(np.dot(omega * K, sysm.rhs))
    sign = float(np.linalg.slogdet(sysm.A)[0])
    return BasicSolution(sysm.r, sysm.nodes, sysm.weights, K, K_rr, sysm.U, sysm.u_r, sign), rep


@dataclass
class SolvabilityReport:
    r_grid: np.ndarray
    condition: np.ndarray
    smallest_singular: np.ndarray
    first_breakdown_radius: Optional[float]
    breakdown_smallest_singular: Optional[float] = None
    threshold: float = SINGULAR_RTOL

    @property
    def solvable(self):
        return self.first_breakdown_radius is None

    def to_dict(self):
        return {
            "r_grid": self.r_grid.tolist(),
            "condition": self.condition.tolist(),
            "smallest_singular": self.smallest_singular.tolist(),
            "breakdown_radius": self.first_breakdown_radius,
            "breakdown_smallest_singular": self.breakdown_smallest_singular,
            "singular_threshold_rel": self.threshold,
        }


@dataclass
class KernelField:
    c: CoefficientSet
    r_grid: np.ndarray
    rows: list            # BasicSolution per radius
    trace: np.ndarray     # K(r, r)
    extent: float         # largest radius certified solvable
    breakdown_radius: Optional[float]
    n_factor: int = 1

    def row_at(self, r, atol=1e-12):
        i = int(np.searchsorted(self.r_grid, r))
        for j in (i - 1, i):
            if 0 <= j < self.r_grid.size and abs(self.r_grid[j] - r) <= atol:
                return self.rows[j]
        return None


def _refine_breakdown(c, lo, hi, n):
    if _det(c, lo, n) <= 0:
        lo = 1e-6
    try:
        return find_root_bracketed(lambda x: _det(c, x, n), lo, hi, tol=1e-12)
    except Exception:  # degenerate bracket; fall back to the grid point
        return hi


def solve_kernel_field(c: CoefficientSet, r_grid, n_factor: int = 1, keep_rows: bool = True):
    """Sweep the basic equation over ``r_grid``; stop at the first breakdown.

    Returns ``(KernelField, SolvabilityReport)``.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.ndim != 1 or r_grid.size == 0 or r_grid[0] <= 0 or np.any(np.diff(r_grid) <= 0):
        raise InvalidArgument("r_grid must be positive and strictly increasing")
    rows, trace, conds, smins, done = [], [], [], [], []
    breakdown, bd_smin = None, None
    prev = None
    for r in r_grid:
        n = node_count(r, n_factor)
        try:
            sol, rep = solve_basic_equation(c, r, n)
        except BasicEquationNotSolvable as exc:
            breakdown, bd_smin = float(r), exc.smallest_singular
            break
        if sol.det_sign <= 0:
            breakdown = _refine_breakdown(c, prev if prev is not None else 1e-6, r, n)
            n_b = node_count(breakdown, n_factor)
            bd_smin = float(np.linalg.svd(_system(c, breakdown, n_b).A, compute_uv=False)[-1])
            break
        rows.append(sol if keep_rows else None)
        trace.append(sol.K_rr)
        conds.append(rep.condition_estimate)
        smins.append(rep.smallest_singular_value_estimate)
        done.append(r)
        prev = r
    done = np.array(done)
    extent = float(done[-1]) if done.size else 0.0
    fld = KernelField(c, done, rows, np.array(trace), extent, breakdown, n_factor)
    rep = SolvabilityReport(done, np.array(conds), np.array(smins), breakdown, bd_smin)
    return fld, rep


def solvability_scan(c: CoefficientSet, r_max: float, step: float = 0.1, r_min: float | None = None):
    """Cheap breakdown search on (0, r_max]: determinant signs only.

    Returns the refined breakdown radius or None.
    """
    if c.is_zero:
        return None
    r_min = step if r_min is None else r_min
    grid = np.arange(r_min, r_max + 0.5 * step, step)
    prev = 1e-6
    for r in grid:
        n = node_count(r)
        rule, table = _node_table(c.L, float(r), n)
        U = table[:, :n]
        # det(I_n + F W) == det(I_{L+1} + C U W U^T)
        small = np.eye(c.L + 1) + c.c[:, None] * ((U * (rule.weights / rule.nodes**2)) @ U.T)
        sign, _ = np.linalg.slogdet(small)
        if sign <= 0:
            return _refine_breakdown(c, prev, r, n)
        prev = r
    return None


@dataclass
class ReconstructionResult:
    c: CoefficientSet
    r_grid: np.ndarray
    q1: np.ndarray
    kk_trace: np.ndarray
    moment_Q1: float            # int_0^R r q1 dr over the working interval
    norm_q1: float
    moment_Q1_inf: float        # improper-integral estimate, see extrapolate_moment
    moment_fit_residual: float
    solvability: SolvabilityReport
    partial: bool
    requested_r_max: float
    field: Optional[KernelField] = None

    @property
    def verdict(self):
        return "breakdown" if self.solvability.first_breakdown_radius is not None else "solvable"

    def q1_function(self):
        """Callable r -> q1(r) by cubic interpolation of r*q1 (extrapolated to r -> 0)."""
        spline = CubicSpline(self.r_grid, self.r_grid * self.q1, extrapolate=True)
        r_end = self.r_grid[-1]

        def q1(r):
            r = np.asarray(r, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(r > 0, spline(r) / np.where(r > 0, r, 1.0), 0.0)
            return np.where(r <= r_end, out, 0.0)

        return q1

    def summary(self):
        return {
            "verdict": self.verdict,
            "partial": self.partial,
            "L": self.c.L,
            "sum_abs_c": self.c.sum_abs,
            "c": self.c.c.tolist(),
            "r_min": float(self.r_grid[0]),
            "r_max_reached": float(self.r_grid[-1]),
            "r_max_requested": self.requested_r_max,
            "moment_Q1": self.moment_Q1,
            "moment_Q1_inf": self.moment_Q1_inf,
            "moment_fit_residual": self.moment_fit_residual,
            "norm_q1": self.norm_q1,
            "kk_consistency": kk_consistency(self),
            "solvability": self.solvability.to_dict(),
        }

    def write(self, csv_path, json_path, header=None, extra_json=None):
        with open(Path(csv_path), "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write("r,K_rr,q1\n")
            for r, k, q in zip(self.r_grid, self.kk_trace, self.q1):
                fh.write(f"{r:.17g},{k:.17g},{q:.17g}\n")
        data = self.summary()
        if header:
            data["header"] = header
        if extra_json:
            data.update(extra_json)
        Path(json_path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _spline_from_origin(r, g):
    # cubic spline of g extrapolated down to r = 0
    return CubicSpline(r, g, extrapolate=True)


def extrapolate_moment(r, M, fraction: float = 0.5):
    """Estimate lim_{R->inf} M(R) from partial moments M(R) = int_0^R s q1 ds.

    At k = 1 a bounded-or-linear trace K(R,R) makes M(R) = -2 K(R,R)/R
    behave like Q + (a + b sin 2R + c cos 2R)/R + O(1/R^2); that model is
    fitted by linear least squares over the last ``fraction`` of the grid.
    Returns (Q_estimate, max fit residual).
    """
    r = np.asarray(r, dtype=float)
    M = np.asarray(M, dtype=float)
    m = r >= (1.0 - fraction) * r[-1]
    x = r[m]
    if x.size < 8:
        return float(M[-1]), math.inf
    s2, c2 = np.sin(2 * x), np.cos(2 * x)
    X = np.column_stack([np.ones_like(x), 1 / x, s2 / x, c2 / x, 1 / x**2, s2 / x**2, c2 / x**2])
    coef, *_ = np.linalg.lstsq(X, M[m], rcond=None)
    return float(coef[0]), float(np.max(np.abs(X @ coef - M[m])))


def partial_moments(r, q1):
    """M(r_i) = int_0^{r_i} s q1(s) ds via a cubic spline of s*q1 extrapolated to 0."""
    anti = _spline_from_origin(r, r * q1).antiderivative()
    return anti(r) - anti(0.0)


def _moments(r, q1):
    g = r * q1
    sp = _spline_from_origin(r, g)
    Q = float(sp.integrate(0.0, r[-1]))
    # |g| by dense Gauss-Legendre on the spline, panel per grid interval
    x, w = np.polynomial.legendre.leggauss(6)
    edges = np.concatenate([[0.0], r])
    lo, hi = edges[:-1], edges[1:]
    pts = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * x[None, :]
    wts = 0.5 * (hi - lo)[:, None] * w[None, :]
    norm = float(np.sum(wts * np.abs(sp(pts))))
    return Q, norm


def default_r_grid(r_max: float, step: float = 0.02) -> np.ndarray:
    n = int(round(r_max / step))
    return step * np.arange(1, n + 1)


def reconstruct_potential(c: CoefficientSet, r_grid=None, r_max: float = 20.0, step: float = 0.02,
                          n_factor: int = 1) -> ReconstructionResult:
    """q1 = -(2/r) d/dr (K(r,r)/r) on ``r_grid`` (default: uniform ``step`` up to ``r_max``).

    If the basic equation breaks down the grid is cut at the last solvable
    radius and the result is marked partial.
    """
    if r_grid is None:
        r_grid = default_r_grid(r_max, step)
    r_grid = np.asarray(r_grid, dtype=float)
    fld, rep = solve_kernel_field(c, r_grid, n_factor=n_factor)
    r = fld.r_grid
    if r.size < 3:
        raise ReconstructionImpossible(
            f"basic equation breaks down at r = {rep.first_breakdown_radius:.6g}, "
            f"before the third grid point"
        )
    T = fld.trace / r
    dT = differentiate_grid(r, T) if r.size >= 5 else np.gradient(T, r, edge_order=2)
    q1 = -2.0 / r * dT
    Q, norm = _moments(r, q1)
    Q_inf, fit_res = extrapolate_moment(r, partial_moments(r, q1))
    return ReconstructionResult(
        c=c, r_grid=r, q1=q1, kk_trace=fld.trace, moment_Q1=Q, norm_q1=norm,
        moment_Q1_inf=Q_inf, moment_fit_residual=fit_res,
        solvability=rep, partial=rep.first_breakdown_radius is not None,
        requested_r_max=float(r_grid[-1]), field=fld,
    )


def kk_consistency(result: ReconstructionResult) -> float:
    """max_r |K(r,r) + (r/2) int_0^r s q1(s) ds| / (1 + |K(r,r)|)."""
    r = result.r_grid
    if not np.any(result.kk_trace) and not np.any(result.q1):
        return 0.0
    M = partial_moments(r, result.q1)
    K = result.kk_trace
    return float(np.max(np.abs(K + 0.5 * r * M) / (1.0 + np.abs(K))))


def _solution_at(c, fld: Optional[KernelField], r):
    if fld is not None:
        if fld.breakdown_radius is not None and r >= fld.breakdown_radius:
            raise NotAvailable(f"r = {r:.6g} lies beyond the breakdown radius {fld.breakdown_radius:.6g}")
        if r > fld.extent + 1e-9:
            raise NotAvailable(f"kernel field only certified up to r = {fld.extent:.6g}")
        row = fld.row_at(r)
        if row is not None:
            return row
        n_factor = fld.n_factor
    else:
        n_factor = 1
    return solve_basic_equation(c, r, node_count(r, n_factor))[0]


def phi_from_K(c: CoefficientSet, fld: Optional[KernelField], l: int, r: float) -> float:
    """phi_l(r) by Gauss-Legendre quadrature over the Nystrom nodes at radius r."""
    if l > c.L:
        sol = _solution_at(c, fld, r)
        # u_l for l beyond the coefficient range
        t = np.append(sol.nodes, r)
        Ul = riccati_u_table(l, t)[l]
        wk = sol.weights * sol.K / sol.nodes**2
        return float(Ul[-1] - np.dot(Ul[:-1], wk))
    return _solution_at(c, fld, r).phi(l)


def _phi_all(c, fld, r, L, u_r=None):
    sol = _solution_at(c, fld, r)
    U = riccati_u_table(L, sol.nodes)
    if u_r is None:
        u_r = riccati_u_table(L, [r])[:, 0]
    wk = sol.weights * sol.K / sol.nodes**2
    return u_r - U @ wk


def shifts_from_phi(c: CoefficientSet, fld: Optional[KernelField], L: int, match_radius: float) -> PhaseShiftSet:
    """delta_l, |F_l| from phi_l at (match_radius - pi/2, match_radius)."""
    r1, r2 = match_radius - PROJECTION_OFFSET, match_radius
    U12 = riccati_u_table(L, [r1, r2])
    V12 = riccati_v_table(L, [r1, r2])
    # same u_l values in phi and in the projection, so K = 0 gives delta = 0 exactly
    p1 = _phi_all(c, fld, r1, L, U12[:, 0])
    p2 = _phi_all(c, fld, r2, L, U12[:, 1])
    deltas, mags = np.empty(L + 1), np.empty(L + 1)
    for l in range(L + 1):
        deltas[l], mags[l] = project_two_point(l, r1, r2, p1[l], p2[l], (U12[l], V12[l]))
    return PhaseShiftSet(deltas, mags, L, float(match_radius), {"method": "NS phi projection"})


def ns_phase_shifts(c: CoefficientSet, L: int, match_radius: float, scan_step: float = 0.1) -> PhaseShiftSet:
    """Shifts generated by ``c``, after certifying solvability on (0, match_radius]."""
    rb = solvability_scan(c, match_radius, scan_step)
    if rb is not None:
        n = node_count(rb)
        smin = float(np.linalg.svd(_system(c, rb, n).A, compute_uv=False)[-1])
        raise BasicEquationNotSolvable(rb, smin)
    return shifts_from_phi(c, None, L, match_radius)


def fit_coefficients(target: PhaseShiftSet, L: int, initial: Optional[CoefficientSet] = None,
                     match_radius: Optional[float] = None, scan_step: float = 0.1,
                     max_nfev: Optional[int] = 200) -> CoefficientSet:
    """Least-squares c_0..c_L so that tan delta_l(c) matches the target.

    Model shifts are produced by the NS machinery itself (basic equation,
    phi_l, two-point projection).  Every target entry is used, so the target
    may carry more partial waves than there are coefficients.  A trial ``c``
    for which the basic equation breaks down inside the working radius
    aborts the fit with :class:`FitStepFailed` (``inner`` carries the
    breakdown radius).
    """
    if target.L < L:
        raise InvalidArgument(f"target has {target.L + 1} partial waves, need at least L+1 = {L + 1}")
    if match_radius is None:
        match_radius = target.match_radius if np.isfinite(target.match_radius) else 30.0
    x0 = np.zeros(L + 1) if initial is None else initial.padded(L).c
    t_target = np.tan(target.deltas)
    L_out = target.L

    def residual(x):
        shifts = ns_phase_shifts(CoefficientSet(x), L_out, match_radius, scan_step)
        return np.tan(shifts.deltas) - t_target

    fit = least_squares_fit(residual, x0, max_nfev=max_nfev)
    meta = {
        "fit_residual": fit.residual_norm,
        "initial_residual": fit.initial_residual_norm,
        "n_evaluations": fit.n_evaluations,
        "iterations": fit.iterations,
        "converged": fit.success,
        "message": fit.message,
        "match_radius": float(match_radius),
        "target_L": int(target.L),
    }
    return CoefficientSet(fit.x, meta)
