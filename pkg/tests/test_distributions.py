import math

import mpmath as mp
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiermodel.distributions import (
    chi2_upper_tail,
    f_upper_tail,
    normal_two_sided,
    normal_upper_tail,
    t_two_sided,
)


def test_f_upper_tail_table_values():
    assert f_upper_tail(5.796, 1, 12) == pytest.approx(0.033, abs=0.001)
    assert f_upper_tail(3.321, 1, 12) == pytest.approx(0.093, abs=0.001)
    assert f_upper_tail(0.334, 1, 12) == pytest.approx(0.574, abs=0.001)
    assert f_upper_tail(0.0, 3, 7) == 1.0


def test_t_two_sided_table_values():
    assert t_two_sided(0.0, 12) == 1.0
    assert t_two_sided(-42.75 / 17.76, 12) == pytest.approx(0.033, abs=0.001)
    assert t_two_sided(-9.375 / 16.23, 12) == pytest.approx(0.574, abs=0.001)


def test_chi2_closed_forms():
    assert chi2_upper_tail(0.0, 4) == 1.0
    assert chi2_upper_tail(2.0, 2) == pytest.approx(math.exp(-1.0), abs=1e-8)
    for x in (0.3, 5.0, 17.0):
        assert chi2_upper_tail(x, 2) == pytest.approx(math.exp(-x / 2), rel=1e-12)


def test_chi2_against_quadrature():
    def dens(t):
        k = 5
        return t ** (k / 2 - 1) * mp.e ** (-t / 2) / (2 ** (k / 2) * mp.gamma(k / 2))

    oracle = float(1 - mp.quad(dens, [0, 11.07]))
    assert oracle == pytest.approx(0.05, abs=0.0005)
    assert chi2_upper_tail(11.07, 5) == pytest.approx(oracle, abs=1e-10)


def test_normal_tails():
    assert normal_upper_tail(0.0) == 0.5
    assert normal_two_sided(1.959963984540054) == pytest.approx(0.05, abs=1e-12)


@pytest.mark.parametrize("fn,args", [(f_upper_tail, (1.0, 0, 3)), (f_upper_tail, (1.0, 2, -1)), (t_two_sided, (1.0, 0)), (chi2_upper_tail, (1.0, -2))])
def test_nonpositive_df_rejected(fn, args):
    with pytest.raises(ValueError):
        fn(*args)


def test_negative_statistic_rejected():
    with pytest.raises(ValueError):
        f_upper_tail(-1.0, 1, 2)
    with pytest.raises(ValueError):
        chi2_upper_tail(-0.5, 1)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(0.5, 500))
def test_t_squared_is_f(t, df):
    p = t_two_sided(t, df)
    assert 0.0 <= p <= 1.0
    assert p == pytest.approx(f_upper_tail(t * t, 1, df), abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 40), st.floats(0, 40), st.floats(0.5, 30), st.floats(0.5, 60))
def test_tails_monotone(a, b, d1, d2):
    lo, hi = min(a, b), max(a, b)
    assert f_upper_tail(lo, d1, d2) >= f_upper_tail(hi, d1, d2) - 1e-15
    assert chi2_upper_tail(lo, d1) >= chi2_upper_tail(hi, d1) - 1e-15
