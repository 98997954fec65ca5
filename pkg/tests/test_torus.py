import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from aflab.bundle import EXAMPLES
from aflab.circle import CircleState
from aflab.errors import DomainError, NotPositiveDefinite
from aflab.integrator import integrate_tau
from aflab.torus import (
    TorusState,
    hat_variables,
    integrate_torus,
    limit_metric,
    torus_field,
    torus_monitors,
    trace_HVH,
    v_matrix,
)


def test_v_matrix_examples(tor):
    np.testing.assert_allclose(v_matrix(tor, [1, 1, 1]), [[2, 1], [1, 2]])
    np.testing.assert_allclose(v_matrix(tor, [1, 2, 1]), [[1.25, 0.25], [0.25, 1.25]])


@pytest.mark.parametrize("eps", [1e-3, 0.1, 0.7])
def test_field_at_scaled_identity(tor, eps):
    dH, db = torus_field(tor, TorusState(H=eps * np.eye(2), b=[1, 1, 1]))
    np.testing.assert_allclose(db, [4 - eps, 4 - 2 * eps, 4 - eps], rtol=1e-14)
    np.testing.assert_allclose(dH, eps**2 * np.array([[2, 1], [1, 2]]), rtol=1e-14)


def test_state_validation():
    with pytest.raises(NotPositiveDefinite):
        TorusState(H=[[1, 2], [2, 1]], b=[1, 1, 1])
    with pytest.raises(DomainError):
        TorusState(H=[[1, 0.5], [0, 1]], b=[1, 1, 1])
    with pytest.raises(DomainError):
        TorusState(H=np.eye(2), b=[1, 0, 1])


def test_hat_variables():
    hv = hat_variables(TorusState(H=[[1, 0], [0, 3]], b=[2, 4, 8]))
    assert hv.a_hat == 4
    np.testing.assert_allclose(hv.Y_hat, [2, 1, 0.5])
    assert hv.E_hat == 3.5


def _torus_rhs(spec):
    Q = np.array(spec.Q, dtype=float)
    n = np.array(spec.n, dtype=float)
    p = np.array(spec.p, dtype=float)
    r, m = Q.shape

    def rhs(t, y):
        H = y[: r * r].reshape(r, r)
        b = y[r * r:]
        V = Q @ np.diag(n / b**2) @ Q.T
        hq = np.array([Q[:, i] @ H @ Q[:, i] for i in range(m)])
        return np.concatenate([(H @ V @ H).ravel(), 2 * p - hq / b])
    return rhs


def test_torus_flow_matches_scipy(tor):
    H0 = np.array([[0.02, 0.005], [0.005, 0.03]])
    b0 = np.array([1.0, 1.5, 0.8])
    run = integrate_torus(tor, TorusState(H0, b0), (0.0, 20.0), tol=1e-11)
    ref = solve_ivp(_torus_rhs(tor), (0, 20), np.concatenate([H0.ravel(), b0]),
                    method="DOP853", rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(run.H[-1].ravel(), ref.y[:4, -1], rtol=1e-8)
    np.testing.assert_allclose(run.b[-1], ref.y[4:, -1], rtol=1e-8)


def test_rank_one_reduces_to_circle_flow(sym2):
    st0 = CircleState(a=0.3, b=(1.0, 2.0))
    trun = integrate_torus(sym2, TorusState.from_circle(st0), (0.0, 5.0), tol=1e-11, t_eval=[5.0])
    crun = integrate_tau(sym2, st0, (0.0, 5.0), tol=1e-11, t_eval=[5.0])
    assert trun.H[-1, 0, 0] == pytest.approx(crun.a[-1], rel=1e-8)
    np.testing.assert_allclose(trun.b[-1], crun.b[-1], rtol=1e-8)


def test_monitors_on_admissible_start(tor):
    run = integrate_torus(tor, TorusState(0.001 * np.eye(2), [1, 1, 1]), (0.0, 200.0))
    assert run.admissible
    rep = torus_monitors(run)
    assert rep.ok, rep.failed()
    assert "E_hat_sharp_bound" in rep.checks


def test_metric_converges(tor):
    run = integrate_torus(tor, TorusState(0.001 * np.eye(2), [1, 1, 1]), (0.0, 1e4),
                          t_eval=np.geomspace(1, 1e4, 200))
    diffs = []
    for t in (250.0, 500.0, 1000.0, 2000.0):
        i = np.argmin(np.abs(run.tau - t))
        j = np.argmin(np.abs(run.tau - 2 * t))
        diffs.append(np.linalg.norm(run.H[j] - run.H[i]))
    assert all(x > y for x, y in zip(diffs, diffs[1:]))
    H_star, err = limit_metric(run)
    assert np.all(np.linalg.eigvalsh(H_star) > 0)
    assert err < 0.1 * np.linalg.norm(H_star)


def test_inadmissible_start_skips_conditional_checks(tor):
    run = integrate_torus(tor, TorusState(np.eye(2), [1, 1, 1]), (0.0, 5.0))
    assert not run.admissible
    rep = torus_monitors(run)
    assert "b_lower" not in rep.checks
    assert rep.ok


@st.composite
def spd_and_b(draw):
    r = 2
    A = np.array(draw(st.lists(st.floats(-2, 2), min_size=r * r, max_size=r * r))).reshape(r, r)
    H = A @ A.T + 0.1 * np.eye(r)
    b = np.array(draw(st.lists(st.floats(0.1, 5), min_size=3, max_size=3)))
    return H, b


@given(spd_and_b())
def test_trace_formula_two_ways(Hb):
    H, b = Hb
    direct, dual = trace_HVH(EXAMPLES["TOR"], H, b)
    assert direct == pytest.approx(dual, rel=1e-12)


@given(spd_and_b())
def test_trace_growth_is_nonnegative(Hb):
    H, b = Hb
    dH, _ = torus_field(EXAMPLES["TOR"], TorusState(H, b))
    assert np.trace(dH) >= 0
    # d/dτ tr H⁻¹ = -tr(V) ≤ 0
    Hinv = np.linalg.inv(H)
    assert -np.trace(Hinv @ dH @ Hinv) == pytest.approx(-np.trace(v_matrix(EXAMPLES["TOR"], b)), rel=1e-9)


@given(st.floats(1e-4, 0.02), st.floats(0.5, 3), st.floats(0.5, 3), st.floats(0.5, 3))
def test_monitors_hold_from_random_admissible_starts(eps, b1, b2, b3):
    spec = EXAMPLES["TOR"]
    run = integrate_torus(spec, TorusState(eps * np.eye(2), [b1, b2, b3]), (0.0, 50.0), tol=1e-9)
    rep = torus_monitors(run)
    assert rep.ok, rep.failed()
