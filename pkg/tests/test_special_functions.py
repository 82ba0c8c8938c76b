import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import spherical_jn, spherical_yn

from nslab.numerics_core import InvalidArgument
from nslab.special_functions import (
    AccuracyLoss,
    riccati_bessel_du,
    riccati_bessel_dv,
    riccati_bessel_u,
    riccati_bessel_v,
    riccati_u_table,
    riccati_uv_scalar,
    riccati_v_table,
    u_asymptotic,
)

R = np.concatenate([np.linspace(1e-3, 0.2, 50), np.linspace(0.2, 60, 400)])


def test_low_orders_closed_form():
    assert np.max(np.abs(riccati_bessel_u(0, R) - np.sin(R))) <= 1e-12
    assert np.max(np.abs(riccati_bessel_u(1, R) - (np.sin(R) / R - np.cos(R)))) <= 1e-12
    assert np.max(np.abs(riccati_bessel_v(0, R) - np.cos(R))) <= 1e-12


@pytest.mark.parametrize("l, r", [(10, 1.0), (3, 0.05), (25, 7.5), (5, 40.0)])
def test_u_against_high_precision(l, r):
    mpmath.mp.dps = 40
    ref = mpmath.sqrt(mpmath.pi * r / 2) * mpmath.besselj(l + mpmath.mpf(1) / 2, r)
    assert riccati_bessel_u(l, r) == pytest.approx(float(ref), rel=1e-12, abs=1e-300)


def test_tables_against_scipy():
    r = np.linspace(0.3, 50, 300)
    U, V = riccati_u_table(30, r), riccati_v_table(30, r)
    for l in range(31):
        uj = r * spherical_jn(l, r)
        vy = -r * spherical_yn(l, r)
        assert np.max(np.abs(U[l] - uj) / (1 + np.abs(uj))) < 1e-12
        assert np.max(np.abs(V[l] - vy) / (1 + np.abs(vy))) < 1e-11


@given(st.integers(0, 40), st.floats(0.05, 80))
def test_wronskian(l, r):
    u, v = riccati_bessel_u(l, r), riccati_bessel_v(l, r)
    du, dv = riccati_bessel_du(l, r), riccati_bessel_dv(l, r)
    scale = abs(du * v) + abs(u * dv)
    assert abs(du * v - u * dv - 1.0) <= 1e-8 * max(1.0, scale)


@given(st.integers(1, 50), st.floats(0.05, 80))
def test_upward_recurrence(l, r):
    t = riccati_u_table(l + 1, [r])[:, 0]
    lhs = t[l + 1] + t[l - 1]
    rhs = (2 * l + 1) / r * t[l]
    assert abs(lhs - rhs) <= 1e-10 * (abs(lhs) + abs(rhs) + abs(t[l - 1]) + 1e-300)


@given(st.integers(0, 40), st.floats(0.01, 60))
def test_scalar_path_matches_tables(l, r):
    u, v = riccati_uv_scalar(l, r)
    assert u == pytest.approx(riccati_u_table(l, [r])[l, 0], rel=1e-10, abs=1e-300)
    assert v == pytest.approx(riccati_v_table(l, [r])[l, 0], rel=1e-10)


def test_asymptotic_form():
    r = np.linspace(2000, 2010, 11)
    for l in (0, 3, 7):
        assert np.max(np.abs(riccati_bessel_u(l, r) - u_asymptotic(l, r))) < l * (l + 1) / 2000 + 1e-9


def test_small_r_power_law():
    # u_l ~ r^{l+1}/(2l+1)!!
    assert riccati_bessel_u(4, 1e-3) == pytest.approx(1e-15 / 945, rel=1e-6)


def test_invalid_arguments():
    with pytest.raises(InvalidArgument):
        riccati_bessel_u(-1, 1.0)
    with pytest.raises(InvalidArgument):
        riccati_bessel_u(1.5, 1.0)
    with pytest.raises(InvalidArgument):
        riccati_bessel_u(2, 0.0)
    with pytest.raises(InvalidArgument):
        riccati_bessel_u(61, 1.0)


def test_v_overflow_warns():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(AccuracyLoss):
            riccati_v_table(300, [1e-3])


def test_point_examples():
    for r in (1.0, 2.5, 10.0):
        assert riccati_bessel_u(0, r) == pytest.approx(np.sin(r), abs=1e-15)
    for r in (0.5, 3.0):
        assert riccati_bessel_u(1, r) == pytest.approx(np.sin(r) / r - np.cos(r), abs=1e-15)
        assert riccati_bessel_v(1, r) == pytest.approx(np.cos(r) / r + np.sin(r), abs=1e-15)
    assert u_asymptotic(0, np.pi / 2) == 1.0
    assert abs(u_asymptotic(2, np.pi)) < 1e-15


def test_u10_against_power_series():
    mpmath.mp.dps = 50
    x = mpmath.mpf(1)
    series = sum((-1) ** k * x ** (2 * k + 11) / (2**k * mpmath.factorial(k) * mpmath.fac2(2 * k + 21))
                 for k in range(30))
    assert riccati_bessel_u(10, 1.0) == pytest.approx(float(series), rel=1e-12)


@pytest.mark.parametrize("l", [0, 5, 20])
@pytest.mark.parametrize("r", [0.5, 5.0, 50.0])
def test_wronskian_with_finite_difference_derivatives(l, r):
    # step scaled to the local variation length r/(l+1); sixth-order stencil
    h = 1e-3 * r / (l + 1)
    st_ = np.array([-3, -2, -1, 1, 2, 3]) * h
    w = np.array([-1, 9, -45, 45, -9, 1]) / (60 * h)
    du = w @ riccati_bessel_u(l, r + st_)
    dv = w @ riccati_bessel_v(l, r + st_)
    u, v = riccati_bessel_u(l, r), riccati_bessel_v(l, r)
    # with v_l = -r y_l the bracket u' v - u v' equals +1
    assert abs(du * v - u * dv - 1.0) <= 1e-8 * max(1.0, abs(du * v) + abs(u * dv))


@pytest.mark.parametrize("l", range(11))
def test_asymptotic_deviation_bounded_by_centrifugal_term(l):
    r = np.linspace(10 * (l + 1), 10 * (l + 1) + 30, 3001)
    dev = np.abs(riccati_bessel_u(l, r) - u_asymptotic(l, r))
    lead = l * (l + 1) / (2 * r)
    assert np.all(dev <= 2 * lead + 1e-12)
    # the leading term is attained, so no l-independent bound holds at r = 10(l+1)
    assert np.max(dev) >= 0.5 * np.max(lead)
