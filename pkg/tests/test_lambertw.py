import math

import pytest
from hypothesis import given, strategies as st

from fastretrial.errors import LambertDomainError
from fastretrial.lambertw import BRANCH_POINT, lambert_grid, lambert_w0
from fastretrial.oracles import bisect_product_log

# omega constant, mpmath at 40 digits
OMEGA = 0.5671432904097838729999686622103555497538


def test_zero():
    assert lambert_w0(0.0) == 0.0


def test_branch_point():
    assert lambert_w0(-math.exp(-1)) == -1.0


def test_one_matches_bisection_and_frozen_value():
    w = lambert_w0(1.0)
    assert abs(w - bisect_product_log(1.0)) <= 1e-12
    assert w == pytest.approx(OMEGA, abs=1e-15)
    assert abs(w * math.exp(w) - 1.0) <= 1e-12


def test_clamp_just_below_branch_point():
    assert lambert_w0(BRANCH_POINT - 5e-15) == -1.0


def test_domain_error_below_branch_point():
    with pytest.raises(LambertDomainError):
        lambert_w0(BRANCH_POINT - 1e-10)
    with pytest.raises(LambertDomainError):
        lambert_w0(-1.0)


@pytest.mark.parametrize("x", [-0.3, -0.1, 1e-6, 0.2, 0.3, 2.0, 3.0, 50.0, 1e3])
def test_against_bisection(x):
    assert lambert_w0(x) == pytest.approx(bisect_product_log(x), abs=1e-12)


def test_inverse_identity_on_log_grid():
    grid = lambert_grid()
    assert len(grid) == 1000
    assert grid[0] == pytest.approx(BRANCH_POINT + 1e-9, rel=1e-12)
    assert grid[-1] == pytest.approx(1e3)
    for x in grid:
        w = lambert_w0(x)
        assert abs(w * math.exp(w) - x) <= 1e-12 * max(1.0, abs(x))


@given(st.floats(min_value=BRANCH_POINT, max_value=1e6, allow_nan=False))
def test_inverse_identity_property(x):
    w = lambert_w0(x)
    assert w >= -1.0
    assert abs(w * math.exp(w) - x) <= 1e-12 * max(1.0, abs(x))


@given(st.floats(min_value=BRANCH_POINT, max_value=0.0))
def test_range_on_negative_domain(x):
    assert -1.0 <= lambert_w0(x) <= 0.0


@given(st.floats(min_value=BRANCH_POINT, max_value=1e4), st.floats(min_value=BRANCH_POINT, max_value=1e4))
def test_monotone(x1, x2):
    if x1 < x2:
        assert lambert_w0(x1) <= lambert_w0(x2)


def test_strictly_monotone_on_grid():
    ws = [lambert_w0(x) for x in lambert_grid()]
    assert all(b > a for a, b in zip(ws, ws[1:]))
