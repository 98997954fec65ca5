import json

import numpy as np
import pytest

from aflab.circle import find_v, find_xi, lambda_bar
from aflab.io import dump_json
from aflab.shooting import (
    MAX_EPS,
    classify_backward_limit,
    stable_directions,
    trace_gamma,
    trace_unstable,
)

# frozen from an independent scipy DOP853 run (rtol 1e-13, atol 1e-40) with the
# same section normalization and tail closure
SYM2_T_UNSTABLE = 0.49693334191106
SYM2_T_GAMMA1 = 0.270312611012754
SYM2_B_OTHER_GAMMA1 = 0.197963436


def test_unstable_branch_sym2(sym2):
    rep = trace_unstable(sym2)
    assert rep.ok, rep.checks
    assert rep.T_singular == pytest.approx(SYM2_T_UNSTABLE, rel=1e-9)
    assert rep.T_uncertainty < 1e-9
    # a/(T+τ) → E(ξ), b_i/(T+τ) → E(ξ)/ξ_i
    assert rep.limits["a/(T+tau)"]["expected"] == pytest.approx(32 / 9)
    assert rep.limits["b_1/(T+tau)"]["expected"] == pytest.approx(8 / 3)
    for entry in rep.limits.values():
        assert entry["max_rel_err"] < 1e-3
    for entry in rep.forward_limits.values():
        assert entry["expected"] == 4.0
        assert entry["rel_err"] < 1e-3


def test_unstable_branch_asym(asym):
    rep = trace_unstable(asym)
    assert rep.ok, rep.checks
    assert rep.T_singular > 0
    assert rep.extra["opposite_termination"] == "BlowUp"


def test_gamma_branch_sym2(sym2):
    rep = trace_gamma(sym2, 0)
    assert rep.ok, rep.checks
    assert rep.T_singular == pytest.approx(SYM2_T_GAMMA1, rel=1e-10)
    # backward the surviving factor has a limit b_2(τ) → b_other > 0;
    # about 2e-6 relative agreement at tol 1e-10
    assert rep.extra["b_other_limit"] == pytest.approx(SYM2_B_OTHER_GAMMA1, rel=1e-5)
    assert rep.limits["a/(T+tau)"]["expected"] == 4.0
    assert rep.limits["b_1/(T+tau)"]["expected"] == 2.0


def test_gamma_tighter_tolerance_closes_the_gap(sym2):
    rep = trace_gamma(sym2, 0, tol=1e-12)
    assert rep.T_singular == pytest.approx(SYM2_T_GAMMA1, rel=1e-12)
    assert rep.extra["b_other_limit"] == pytest.approx(SYM2_B_OTHER_GAMMA1, rel=1e-6)


def test_large_eps_is_retried(sym2):
    rep = trace_unstable(sym2, eps=5e-2)
    assert rep.eps < MAX_EPS
    assert rep.attempts and rep.attempts[0]["eps"] == 5e-2
    assert rep.T_singular == pytest.approx(SYM2_T_UNSTABLE, rel=1e-6)


def test_eps_must_be_positive(sym2):
    with pytest.raises(ValueError):
        trace_unstable(sym2, eps=0.0)


def test_report_serializes(sym2):
    doc = json.loads(dump_json(trace_gamma(sym2, 1).to_dict()))
    assert doc["branch"] == "gamma_2"
    assert doc["checks"]["backward_reaches_v"] is True


def test_backward_limit_capture(sym3):
    bl = classify_backward_limit(sym3, [0.05, 0.6, 3.0])
    assert bl.status == "captured" and bl.tag == (2,)
    assert bl.distance < 1e-4 * np.linalg.norm(find_v(sym3, (2,)))


def test_backward_limit_rejects_fixed_points(sym2):
    assert classify_backward_limit(sym2, find_xi(sym2)).status == "rejected"
    assert classify_backward_limit(sym2, find_v(sym2, (0,))).status == "rejected"


def test_stable_plane_starts_are_on_a_circle(sym3):
    xi = find_xi(sym3)
    starts = stable_directions(sym3, 8, eps=1e-4)
    d = [np.linalg.norm(s - xi) for s in starts]
    np.testing.assert_allclose(d, 1e-4 * np.linalg.norm(xi), rtol=1e-12)
    # stable plane of SYM3 is orthogonal to the diagonal
    for s in starts:
        assert abs(np.sum(s - xi)) < 1e-12


def test_stable_directions_need_three_factors(sym2):
    with pytest.raises(ValueError):
        stable_directions(sym2, 4)


def test_stable_plane_starts_flow_back_to_single_factor_points(sym3):
    for Y0 in stable_directions(sym3, 6, eps=1e-3):
        bl = classify_backward_limit(sym3, Y0)
        assert bl.status == "captured"
        assert len(bl.tag) == 1
        # forward they decay onto ξ, so λ̄ sits above its value there
        assert lambda_bar(sym3, Y0) >= lambda_bar(sym3, find_xi(sym3))
