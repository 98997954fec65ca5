import numpy as np
import pytest
from hypothesis import given, strategies as st

from aflab.bundle import EXAMPLES, BundleSpec
from aflab.circle import (
    CircleState,
    blowup_threshold,
    classify_region,
    deficit,
    energy,
    find_v,
    find_xi,
    fixed_points,
    lambda_bar,
    lambda_bar_rate,
    newton_fixed_point,
    state_from_Y,
    vector_field,
)
from aflab.errors import DomainError, InvalidSpec

# frozen from sympy (exact roots of the fixed-point system, 18 digits)
ASYM_XI = (1.67251999792667369, 0.740078950105126835)
ASYM_E = 3.8927568482420542
ASYM_LAMBDA = 13.970218570786889
SYM2_LAMBDA = 7.0614922736587484


def test_sym2_einstein_point(sym2):
    np.testing.assert_allclose(find_xi(sym2), [4 / 3, 4 / 3], rtol=1e-14)
    np.testing.assert_allclose(deficit(sym2, find_xi(sym2)), 0, atol=1e-13)


def test_asym_einstein_point(asym):
    xi = find_xi(asym)
    np.testing.assert_allclose(xi, ASYM_XI, rtol=1e-13)
    assert energy(asym, xi) == pytest.approx(ASYM_E, rel=1e-13)
    assert lambda_bar(asym, xi) == pytest.approx(ASYM_LAMBDA, rel=1e-12)


def test_lambda_bar_at_sym2_einstein_point(sym2):
    assert lambda_bar(sym2, find_xi(sym2)) == pytest.approx(SYM2_LAMBDA, rel=1e-13)


def test_lambda_bar_off_einstein_point(sym2):
    assert lambda_bar(sym2, [2.0, 2.0]) == pytest.approx(2 ** -0.8 * 12, rel=1e-14)
    assert lambda_bar(sym2, [0.5, 2.0]) == pytest.approx(7.875, rel=1e-14)


def test_lambda_bar_rate_values(sym2):
    assert lambda_bar_rate(sym2, [1.0, 1.0]) == pytest.approx(-0.4, rel=1e-13)
    assert lambda_bar_rate(sym2, [0.5, 2.0]) == pytest.approx(-3.2875, rel=1e-13)
    assert lambda_bar_rate(sym2, find_xi(sym2)) == pytest.approx(0, abs=1e-12)


def test_lambda_bar_needs_positive_Y(sym2):
    with pytest.raises(DomainError):
        lambda_bar(sym2, [0.0, 1.0])


def test_blowup_threshold():
    spec = BundleSpec(m=1, r=1, n=(3,), p=(4,), Q=((2,),))
    assert blowup_threshold(spec)[0] == 0.5


def test_rank_two_rejected_by_circle_code(tor):
    with pytest.raises(InvalidSpec):
        blowup_threshold(tor)


def test_vtheta_points(sym2, sym3):
    np.testing.assert_allclose(find_v(sym2, (0,)), [2, 0], atol=1e-14)
    np.testing.assert_allclose(find_v(sym3, (0, 1)), [4 / 3, 4 / 3, 0], atol=1e-13)


def test_fixed_point_set(sym3):
    fp = fixed_points(sym3)
    assert len(fp.v) == 6
    assert not fp.truncated
    for Y in fp.v.values():
        np.testing.assert_allclose(vector_field(sym3, Y), 0, atol=1e-12)


def test_fixed_point_enumeration_is_capped():
    spec = BundleSpec(m=5, r=1, n=(1,) * 5, p=(2,) * 5, Q=((1,) * 5,))
    fp = fixed_points(spec, max_subsets=4)
    assert fp.truncated and len(fp.v) == 4


def test_newton_from_nearby(asym):
    Y = newton_fixed_point(asym, np.array(ASYM_XI) * 1.2)
    np.testing.assert_allclose(Y, ASYM_XI, rtol=1e-12)


def test_region_tags(sym2):
    assert classify_region(sym2, [0.5, 0.5]).flags == "++"
    assert classify_region(sym2, [3.0, 3.0]).flags == "--"
    tag = classify_region(sym2, [2.0, 0.0])
    assert tag.flags[0] == "0"
    assert classify_region(sym2, [1.5, 0.1]).thetas() == [(0,)]


def test_circle_state_round_trip():
    st_ = state_from_Y([2.0, 0.5], a=3.0)
    assert st_.b == (1.5, 6.0)
    np.testing.assert_allclose(st_.Y, [2.0, 0.5])
    with pytest.raises(DomainError):
        CircleState(a=-1, b=(1,))


positive = st.floats(0.05, 4.0)


@given(positive, positive)
def test_rate_matches_directional_derivative(y1, y2):
    spec = EXAMPLES["ASYM"]
    Y = np.array([y1, y2])
    v = vector_field(spec, Y)
    h = 1e-6 / (1 + np.linalg.norm(v))
    fd = (lambda_bar(spec, Y + h * v) - lambda_bar(spec, Y - h * v)) / (2 * h)
    assert lambda_bar_rate(spec, Y) == pytest.approx(fd, rel=1e-5, abs=1e-6)


@given(st.lists(positive, min_size=3, max_size=3), st.lists(st.integers(1, 3), min_size=3, max_size=3),
       st.lists(st.integers(1, 4), min_size=3, max_size=3))
def test_lambda_bar_never_increases(Y, n, p):
    spec = BundleSpec(m=3, r=1, n=tuple(n), p=tuple(p), Q=((1, 2, 1),))
    assert lambda_bar_rate(spec, Y) <= 1e-12 * (1 + abs(lambda_bar(spec, Y)))


@given(positive, positive)
def test_lambda_bar_matches_direct_product(y1, y2):
    spec = EXAMPLES["SYM2"]
    Y = np.array([y1, y2])
    s = np.dot(Y, [4.0, 4.0]) - 0.5 * np.dot(Y * Y, [1.0, 1.0])
    direct = np.prod(Y ** (-2.0 / 5.0)) * s
    assert lambda_bar(spec, Y) == pytest.approx(direct, rel=1e-12, abs=1e-12)
