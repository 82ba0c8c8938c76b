import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from nslab.forward_scattering import PhaseShiftSet
from nslab.numerics_core import FitStepFailed, InvalidArgument
from nslab.ns_engine import (
    BasicEquationNotSolvable,
    CoefficientSet,
    NotAvailable,
    ReconstructionImpossible,
    build_f,
    extrapolate_moment,
    fit_coefficients,
    kk_consistency,
    node_count,
    ns_phase_shifts,
    phi_from_K,
    reconstruct_potential,
    shifts_from_phi,
    solvability_scan,
    solve_basic_equation,
    solve_kernel_field,
)

from oracles import rank_one_I_mp, rank_one_kernel, rank_one_q1, rank_one_root_mp, rank_one_trace


def test_coefficient_set_validation_and_csv(tmp_path):
    with pytest.raises(InvalidArgument):
        CoefficientSet([])
    with pytest.raises(InvalidArgument):
        CoefficientSet([1.0, math.nan])
    c = CoefficientSet([0.1, -0.2, 1 / 3])
    p = tmp_path / "c.csv"
    c.to_csv(p, header="h")
    back = CoefficientSet.from_csv(p)
    assert np.array_equal(back.c, c.c)
    assert c.L == 2 and c.sum_abs == pytest.approx(0.1 + 0.2 + 1 / 3)
    assert c.padded(4).c.tolist() == [0.1, -0.2, 1 / 3, 0.0, 0.0]


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=6), st.floats(0.01, 30), st.floats(0.01, 30))
def test_build_f_symmetric(cs, r, s):
    c = CoefficientSet(cs)
    assert build_f(c, r, s) == build_f(c, s, r)


def test_zero_coefficients_give_zero_kernel():
    res = reconstruct_potential(CoefficientSet.zeros(3), r_max=5.0, step=0.05)
    assert np.all(res.kk_trace == 0) and np.all(res.q1 == 0)
    assert res.verdict == "solvable"


@pytest.mark.parametrize("c0", [0.1, 0.6])
def test_rank_one_kernel_rows(c0):
    c = CoefficientSet.rank_one(c0)
    for r in (0.1, 1.3, 7.0, 19.5):
        sol, rep = solve_basic_equation(c, r)
        exact = rank_one_kernel(c0, r, sol.nodes)
        assert np.max(np.abs(sol.K - exact)) <= 1e-9 * np.max(np.abs(exact))
        assert sol.K_rr == pytest.approx(float(rank_one_trace(c0, r)), rel=1e-9, abs=1e-15)


def test_rank_one_reconstruction_against_symbolic_derivative():
    c0 = 0.3
    res = reconstruct_potential(CoefficientSet.rank_one(c0), r_max=10.0, step=0.02)
    m = res.r_grid >= 0.1
    ref = rank_one_q1(c0, res.r_grid[m])
    assert np.max(np.abs(res.q1[m] - ref)) <= 1e-5
    assert kk_consistency(res) <= 1e-5


def test_kk_identity_holds_for_multi_wave_set():
    res = reconstruct_potential(CoefficientSet([0.2, 0.1, -0.05, 0.02]), r_max=15.0, step=0.02)
    assert kk_consistency(res) <= 1e-5


@pytest.mark.parametrize("c0", [-0.7, -2.0])
def test_breakdown_radius_matches_root(c0):
    fld, rep = solve_kernel_field(CoefficientSet.rank_one(c0), np.arange(0.05, 10.0, 0.05))
    assert rep.first_breakdown_radius == pytest.approx(rank_one_root_mp(c0), abs=1e-6)
    assert fld.extent < rep.first_breakdown_radius
    assert rep.breakdown_smallest_singular < 1e-8


def test_no_breakdown_above_critical_coupling():
    # I(inf) = pi/2, so c0 > -2/pi never breaks
    mpmath.mp.dps = 30
    # sin^2 t / t^2 = 1/(2t^2) - cos(2t)/(2t^2) on [1, inf)
    I_inf = (rank_one_I_mp(1) + mpmath.mpf(1) / 2
             - mpmath.quadosc(lambda t: mpmath.cos(2 * t) / (2 * t**2), [1, mpmath.inf], omega=2))
    assert float(I_inf) == pytest.approx(math.pi / 2, abs=1e-15)
    assert solvability_scan(CoefficientSet.rank_one(-0.6), 60.0, 0.1) is None


@given(st.floats(-5.0, -0.7), st.floats(0.05, 2.0))
def test_breakdown_radius_monotone_in_coupling(c0, extra):
    r1 = solvability_scan(CoefficientSet.rank_one(c0), 30.0, 0.05)
    r2 = solvability_scan(CoefficientSet.rank_one(c0 - extra), 30.0, 0.05)
    assert r1 is not None and r2 is not None
    assert r2 <= r1 + 1e-9


def test_scan_and_sweep_agree():
    c = CoefficientSet([-1.2, 0.4, 0.3])
    rb = solvability_scan(c, 20.0, 0.05)
    _, rep = solve_kernel_field(c, np.arange(0.05, 20.0, 0.05))
    assert rb is not None
    assert rep.first_breakdown_radius == pytest.approx(rb, abs=1e-8)


def test_reconstruction_impossible_when_breaking_immediately():
    with pytest.raises(ReconstructionImpossible):
        reconstruct_potential(CoefficientSet.rank_one(-50.0), r_max=2.0, step=0.05)


def test_phi_beyond_breakdown_not_available():
    c = CoefficientSet.rank_one(-1.0)
    fld, _ = solve_kernel_field(c, np.arange(0.05, 3.0, 0.05))
    with pytest.raises(NotAvailable):
        phi_from_K(c, fld, 0, 2.0)


def test_phi_rank_one_closed_form():
    # phi_0 = sin r / (1 + c0 I(r))
    c0 = 0.4
    c = CoefficientSet.rank_one(c0)
    for r in (0.5, 3.0, 12.0):
        expected = math.sin(r) / (1 + c0 * float(rank_one_I_mp(r)))
        assert phi_from_K(c, None, 0, r) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_rank_one_shifts_from_phi():
    # phi_0 = sin r / (1 + c0 I(r)) with I -> pi/2: delta_0 -> 0 and
    # |F_0| -> 1/(1 + c0 pi/2); at finite R the amplitude is 1/(1 + c0 I(R))
    c0 = 0.2
    s = ns_phase_shifts(CoefficientSet.rank_one(c0), 3, 60.0)
    assert abs(s.deltas[0]) < 1e-3
    assert s.jost_magnitudes[0] == pytest.approx(1 / (1 + c0 * float(rank_one_I_mp(60.0))), rel=2e-4)


def test_ns_shifts_refuse_breakdown():
    with pytest.raises(BasicEquationNotSolvable):
        ns_phase_shifts(CoefficientSet.rank_one(-1.0), 2, 30.0)


def test_zero_target_fits_zero():
    target = PhaseShiftSet(np.zeros(5), np.ones(5), 4, 30.0)
    c = fit_coefficients(target, 4)
    assert c.is_zero


def test_self_target_recovered():
    truth = CoefficientSet.rank_one(0.25)
    target = ns_phase_shifts(truth, 3, 30.0)
    c = fit_coefficients(target, 0, initial=CoefficientSet([0.1]))
    assert c.c[0] == pytest.approx(0.25, abs=1e-6)
    assert c.meta["fit_residual"] < 1e-10


def test_fit_breakdown_raises_step_failure():
    target = PhaseShiftSet([1.4, 1.2], [1.0, 1.0], 1, 30.0)
    with pytest.raises(FitStepFailed):
        fit_coefficients(target, 1, initial=CoefficientSet([-0.6, -0.6]))


def test_extrapolate_moment_on_synthetic_partial_moments():
    r = np.linspace(10, 60, 1000)
    Q = 0.37
    M = Q + (0.2 + 0.5 * np.sin(2 * r) - 0.1 * np.cos(2 * r)) / r + 0.3 / r**2
    est, res = extrapolate_moment(r, M)
    assert est == pytest.approx(Q, abs=1e-10)
    assert res < 1e-10


def test_node_count_policy():
    assert node_count(0.1) == 16
    assert node_count(60.0) == math.ceil(8 * 60 / math.pi)
    assert node_count(60.0, 2) == 2 * node_count(60.0)


def test_build_f_examples():
    assert build_f(CoefficientSet([0.0, 1.0]), 1.0, 1.0) == pytest.approx((math.sin(1) - math.cos(1)) ** 2, abs=1e-15)
    assert build_f(CoefficientSet.rank_one(0.3), math.pi / 2, math.pi / 2) == pytest.approx(0.3, abs=1e-15)


@pytest.mark.parametrize("l", [0, 1, 3])
def test_phi_regular_at_small_r(l):
    c = CoefficientSet([0.3, -0.2, 0.1, 0.05])
    r = 1e-2
    ratio = phi_from_K(c, None, l, r) / r ** (l + 1)
    # the kernel correction is first order in r
    assert ratio == pytest.approx(1.0 / float(mpmath.fac2(2 * l + 1)), rel=1e-2)


def test_rank_one_shift_vanishes_at_large_radius():
    s = ns_phase_shifts(CoefficientSet.rank_one(0.3), 0, 60.0)
    assert abs(s.deltas[0]) <= 1e-4
