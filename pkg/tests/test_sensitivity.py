import math

import pytest
from hypothesis import given, strategies as st

from floorgate.errors import DomainError
from floorgate.sensitivity import (CHECKS, breakeven_rho, response_adjusted_lift, rho_grid,
                                   robustness_summary, support_adjusted_lower)


def test_response_adjusted_lift():
    assert response_adjusted_lift(0.477, 0.0) == pytest.approx(0.477, abs=1e-15)
    assert abs(response_adjusted_lift(0.477, 0.323)) < 1e-3
    assert response_adjusted_lift(0.5, 0.5) == pytest.approx(-0.25)
    with pytest.raises(DomainError):
        response_adjusted_lift(0.1, 1.0)


def test_breakeven():
    assert breakeven_rho(0.477) == pytest.approx(0.3229, abs=5e-4)
    assert breakeven_rho(0.0) == 0.0
    assert breakeven_rho(1.0) == 0.5
    with pytest.raises(DomainError):
        breakeven_rho(-1.0)


@given(st.floats(-0.99, 10.0))
def test_breakeven_zeroes_the_curve(lift):
    rho = breakeven_rho(lift)
    if 0 <= rho < 1:
        assert response_adjusted_lift(lift, rho) == pytest.approx(0.0, abs=1e-12)


def test_rho_grid():
    g = rho_grid()
    assert len(g) == 31 and g[0] == 0.0 and g[-1] == pytest.approx(0.6)


def test_support_curve():
    assert support_adjusted_lower(0.5, 0.458, 1.0) == 0.458
    assert support_adjusted_lower(0.50, 0.458, 0.25) == pytest.approx(0.416)
    with pytest.raises(DomainError):
        support_adjusted_lower(0.5, 0.6, 0.5)
    with pytest.raises(DomainError):
        support_adjusted_lower(0.5, 0.4, 0.0)


@given(st.floats(-1, 1), st.floats(0, 1), st.floats(0.01, 1.0))
def test_support_curve_below_p10(median, gap, s):
    p10 = median - gap
    assert support_adjusted_lower(median, p10, s) <= p10 + 1e-12


def test_priority_policy_profile():
    r = robustness_summary("P18", 0.477, 0.50, 0.458)
    assert r.breakeven_rho == pytest.approx(0.3229, abs=5e-4)
    assert r.checks_passed == 5 and tuple(r.checks) == CHECKS
    assert all(v > 0 for _, v in r.support_curve)
    assert len(r.response_curve) == 31


def test_zero_lift_and_negative_tail():
    r = robustness_summary("P0", 0.0, 0.0, 0.0)
    assert r.breakeven_rho == 0.0 and r.checks_passed < 5
    r = robustness_summary("X", 0.3, 0.05, -0.02)
    assert not r.checks["positive_p10_dr_lift"]
    assert not r.checks["positive_lower_tail_under_support_scales"]


def test_attestation_flips_last_check():
    r = robustness_summary("P18", 0.477, 0.50, 0.458, interference_attested=True)
    assert not r.checks["validation_first_recommendation"]


def test_missing_ope_evidence():
    r = robustness_summary("X", 0.2, math.nan, math.nan)
    assert r.support_curve == () and not r.checks["positive_p10_dr_lift"]
