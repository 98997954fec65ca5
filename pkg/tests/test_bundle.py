import json

import numpy as np
import pytest
import sympy
from hypothesis import given, strategies as st

from aflab.bundle import (
    EXAMPLES,
    BundleSpec,
    admissible_initial_r,
    basin_certificate,
    c0_certificate,
    coupling_constants,
    integer_rank,
    load_spec,
    validate,
)
from aflab.errors import InvalidSpec, NotPositiveDefinite


def test_smallest_circle_bundle_is_valid(sym2):
    assert validate(sym2).ok


def test_rank_two_torus_is_valid(tor):
    assert validate(tor).ok


def test_zero_column_and_rank_deficiency_both_reported():
    spec = BundleSpec(m=2, r=2, n=(1, 1), p=(2, 2), Q=((1, 0), (2, 0)))
    rep = validate(spec)
    assert not rep.ok
    text = " ".join(rep.failures)
    assert "zero column" in text
    assert "rank" in text


@pytest.mark.parametrize("kw, fragment", [
    (dict(m=2, r=1, n=(0, 1), p=(2, 2), Q=((1, 1),)), "n_i"),
    (dict(m=2, r=1, n=(1, 1), p=(2, -1), Q=((1, 1),)), "p_i"),
    (dict(m=2, r=1, n=(1,), p=(2, 2), Q=((1, 1),)), "length"),
    (dict(m=1, r=2, n=(1,), p=(1,), Q=((1,), (1,))), "exceeds"),
    (dict(m=2, r=1, n=(1, 1), p=(2, 2), Q=((1, 1, 1),)), "Q must be"),
])
def test_each_violation_is_named(kw, fragment):
    rep = validate(BundleSpec(**kw))
    assert any(fragment in f for f in rep.failures)


def test_from_dict_rejects_unknown_and_missing_keys():
    with pytest.raises(InvalidSpec, match="unknown key 'x'"):
        BundleSpec.from_dict({"m": 1, "r": 1, "n": [1], "p": [1], "Q": [[1]], "x": 0})
    with pytest.raises(InvalidSpec, match="missing key 'Q'"):
        BundleSpec.from_dict({"m": 1, "r": 1, "n": [1], "p": [1]})


def test_from_dict_rejects_fractional_entries():
    with pytest.raises(InvalidSpec, match="non-integer"):
        BundleSpec.from_dict({"m": 1, "r": 1, "n": [1], "p": [1.5], "Q": [[1]]})


def test_round_trip_through_json(tor, tmp_path):
    path = tmp_path / "tor.json"
    path.write_text(json.dumps(tor.to_dict()))
    assert load_spec(path) == tor
    assert load_spec(json.dumps(tor.to_dict())) == tor


def test_load_spec_bad_json():
    with pytest.raises(InvalidSpec):
        load_spec("{not json")


def test_coupling_constants_torus(tor):
    cc = coupling_constants(tor)
    assert cc.c == (1.0, 2.0, 1.0)
    assert cc.c0 == 10.0


def test_coupling_constants_circle(sym2):
    cc = coupling_constants(sym2)
    assert cc.c == (1.0, 1.0)
    assert cc.rho == 1.0


def test_single_column_norm():
    spec = BundleSpec(m=1, r=1, n=(1,), p=(1,), Q=((3,),))
    assert coupling_constants(spec).c == (9.0,)


def test_c0_certificate_holds_and_fails_when_halved(tor):
    ok, worst = c0_certificate(tor, 7, 3000)
    assert ok and worst <= 1
    ok, worst = c0_certificate(tor, 7, 3000, c0=5.0)
    assert not ok and worst > 1


def test_basin_certificate_sym2(sym2):
    ok, worst = basin_certificate(sym2, 3, 3000)
    assert ok and worst < 1


def test_basin_radius_is_sharp_at_a_vertex(sym2):
    # at Y = (rho, 0) the basin inequality is an equality
    Y = np.array([1.0, 0.0])
    E = (Y**2) @ sym2.nq2
    lhs = (Y**3) @ sym2.q2 + E * Y.sum()
    rhs = (Y**2) @ sym2.p_arr
    assert lhs == pytest.approx(rhs)


def test_admissibility_examples(tor):
    assert admissible_initial_r(tor, 0.001 * np.eye(2), [1, 1, 1])
    assert not admissible_initial_r(tor, np.eye(2), [1, 1, 1])
    with pytest.raises(NotPositiveDefinite):
        admissible_initial_r(tor, np.diag([1.0, -1.0]), [1, 1, 1])
    with pytest.raises(NotPositiveDefinite):
        admissible_initial_r(tor, [[1.0, 0.5], [0.0, 1.0]], [1, 1, 1])


def test_sub_bundle(sym3):
    sub = sym3.sub_bundle((0, 2))
    assert sub.m == 2 and sub.Q == ((1, 1),)


@given(st.lists(st.lists(st.integers(-3, 3), min_size=4, max_size=4), min_size=1, max_size=4))
def test_integer_rank_matches_sympy(rows):
    assert integer_rank(rows) == sympy.Matrix(rows).rank()


@st.composite
def torus_specs(draw):
    m = draw(st.integers(2, 5))
    r = draw(st.integers(1, m))
    Q = draw(st.lists(st.lists(st.integers(-2, 2), min_size=m, max_size=m), min_size=r, max_size=r))
    n = draw(st.lists(st.integers(1, 3), min_size=m, max_size=m))
    return BundleSpec(m=m, r=r, n=tuple(n), p=tuple([1] * m), Q=tuple(map(tuple, Q)))


@given(torus_specs(), st.integers(0, 2**31))
def test_c0_bound_holds_on_random_valid_specs(spec, seed):
    if not validate(spec).ok:
        return
    ok, worst = c0_certificate(spec, seed, 500)
    assert ok, worst


def test_examples_are_all_valid():
    for spec in EXAMPLES.values():
        assert validate(spec).ok
