import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from nslab.numerics_core import InvalidArgument
from nslab.potential_model import (
    Exponential,
    NotInL11,
    Tabulated,
    catalog,
    catalog_names,
    load_tabulated_csv,
    weighted_moment,
)


def _mp_moment(f, a=0, b=mpmath.inf, points=()):
    mpmath.mp.dps = 30
    return float(mpmath.quad(lambda r: r * f(r), [a, *points, b]))


def test_exponential_moment_is_depth_times_range_squared():
    assert weighted_moment(catalog("exponential")).Q == pytest.approx(1.0, abs=1e-12)
    rep = weighted_moment(Exponential(depth=0.5, range=2.0))
    assert rep.Q == pytest.approx(2.0, rel=1e-12)
    assert rep.norm == pytest.approx(2.0, rel=1e-12)


def test_square_well_moment():
    assert weighted_moment(catalog("square-well")).Q == pytest.approx(-1.0, abs=1e-12)


def test_zero_moment_potential_has_vanishing_moment_but_positive_norm():
    rep = weighted_moment(catalog("zero-moment"))
    assert abs(rep.Q) < 1e-12
    assert rep.norm > 0.1


def test_truncated_exponential_moment():
    ref = _mp_moment(lambda r: mpmath.exp(-r), 0, 3)
    assert weighted_moment(catalog("truncated-exponential")).Q == pytest.approx(ref, abs=1e-12)
    assert ref == pytest.approx(1 - 4 * math.exp(-3), abs=1e-15)


def test_kink_moment_against_high_precision():
    ref = _mp_moment(lambda r: mpmath.exp(-abs(r - 2)), points=(2,))
    assert weighted_moment(catalog("kink")).Q == pytest.approx(ref, abs=1e-10)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_moment_linear_and_bounded_by_norm(a, b):
    p, q = catalog("exponential"), catalog("kink")
    combo = a * p + b * q
    rep = weighted_moment(combo)
    assert rep.Q == pytest.approx(a * weighted_moment(p).Q + b * weighted_moment(q).Q, abs=1e-9)
    assert abs(rep.Q) <= rep.norm + 1e-9


def test_subtraction_and_evaluation():
    d = catalog("exponential") - catalog("exponential")
    assert np.all(d(np.linspace(0.1, 5, 9)) == 0)


def test_catalog_rejects_unknown_and_bad_parameters():
    assert "kink" in catalog_names()
    with pytest.raises(InvalidArgument):
        catalog("gaussian")
    with pytest.raises(InvalidArgument):
        catalog("exponential", width=1.0)
    with pytest.raises(InvalidArgument):
        catalog("exponential", range=-1.0)


def test_tabulated_spline_and_tail():
    r = np.linspace(0.05, 10, 400)
    t = Tabulated(r, np.exp(-r), tail_exponent=4.0)
    x = np.linspace(0.2, 9.5, 37)
    assert np.max(np.abs(t(x) - np.exp(-x))) < 1e-6
    assert t(20.0) == pytest.approx(np.exp(-10) * (10 / 20) ** 4, rel=1e-12)
    with pytest.raises(NotInL11):
        Tabulated(r, np.exp(-r), tail_exponent=2.0)


def test_tabulated_csv_round_trip(tmp_path):
    r = np.linspace(0.1, 5, 50)
    path = tmp_path / "q.csv"
    path.write_text("r,q\n" + "".join(f"{a:.17g},{b:.17g}\n" for a, b in zip(r, np.exp(-r))))
    t = load_tabulated_csv(path)
    assert t(r[10]) == pytest.approx(math.exp(-r[10]), rel=1e-12)
    assert t(6.0) == 0.0


def test_effective_range_brackets_decay():
    R = catalog("exponential").effective_range(1e-8)
    assert math.exp(-R) * (1 + R) == pytest.approx(1e-8, rel=0.05) or math.exp(-R) <= 1e-8


def test_catalog_point_values():
    assert catalog("exponential")(np.array([1e-12]))[0] == pytest.approx(1.0, abs=1e-11)
    sw = catalog("square-well")
    assert sw(np.array([0.5]))[0] == -2.0 and sw(np.array([1.5]))[0] == 0.0
