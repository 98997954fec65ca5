import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from aflab.bundle import EXAMPLES
from aflab.circle import CircleState, find_xi, lambda_bar, vector_field
from aflab.integrator import Termination, crosscheck_clocks, integrate_tau, integrate_u
from aflab.oracles import comparison_blowup_time
from aflab.rk import StepUnderflowError, dopri_steps


def test_dopri_on_exponential():
    steps = list(dopri_steps(lambda t, y: y, 0.0, np.array([1.0]), 2.0, rtol=1e-10, atol=1e-12))
    assert steps[-1].t1 == 2.0
    assert steps[-1].y1[0] == pytest.approx(math.exp(2.0), rel=1e-9)
    mid = 0.5 * (steps[3].t0 + steps[3].t1)
    assert steps[3](mid)[0] == pytest.approx(math.exp(mid), rel=1e-8)


def test_dopri_backwards():
    steps = list(dopri_steps(lambda t, y: -y, 1.0, np.array([1.0]), 0.0, rtol=1e-10, atol=1e-12))
    assert steps[-1].y1[0] == pytest.approx(math.e, rel=1e-9)


def test_dopri_respects_max_step():
    steps = list(dopri_steps(lambda t, y: 0 * y, 0.0, np.array([1.0]), 10.0, rtol=1e-6, atol=1e-6,
                             max_step=0.5))
    assert max(s.t1 - s.t0 for s in steps) <= 0.5 + 1e-15


def test_dopri_underflow():
    with pytest.raises(StepUnderflowError):
        list(dopri_steps(lambda t, y: y * y, 0.0, np.array([1.0]), 2.0, rtol=1e-10, atol=1e-10))


def test_u_flow_matches_scipy(asym):
    Y0 = np.array([0.6, 1.3])
    run = integrate_u(asym, Y0, 1.0, (0.0, 3.0), events=(), tol=1e-11)
    ref = solve_ivp(lambda u, y: vector_field(asym, y), (0, 3), Y0, method="DOP853",
                    rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(run.final_Y, ref.y[:, -1], rtol=1e-8)


def test_capture_at_origin(sym2):
    # algebraic decay Y ~ 1/(4u) near the origin needs a long span
    run = integrate_u(sym2, [0.3, 0.2], u_span=(0.0, 1e6))
    assert run.termination == Termination.FIXED_POINT_CAPTURE
    assert run.event("FixedPointCapture").payload["point"] == "origin"


def test_einstein_point_is_stationary(sym2):
    xi = find_xi(sym2)
    run = integrate_u(sym2, xi, u_span=(0.0, 10.0), events=())
    np.testing.assert_allclose(run.final_Y, xi, rtol=1e-12)
    # a grows like exp(E u)
    assert run.log_a[-1] == pytest.approx(10.0 * 32 / 9, rel=1e-10)


def test_blowup_respects_comparison_bound(sym2):
    Y0 = np.array([2.5, 0.1])
    run = integrate_u(sym2, Y0, u_span=(0.0, 50.0))
    assert run.termination == Termination.BLOW_UP
    ev = run.event("BlowUp")
    A, B = 2.0, 4.0  # (n+1) q², 2p
    k = int(np.argmax(run.Y[:, 0] > B / A))
    bound = comparison_blowup_time(A, B, run.u[k], run.Y[k, 0], ev.payload["cap"])
    assert ev.u <= bound + 1e-9


def test_region_exit_and_changes(sym2):
    run = integrate_u(sym2, [1.9, 0.05], u_span=(0.0, 20.0), expected_region="plus")
    assert run.termination in (Termination.REGION_EXIT, Termination.FIXED_POINT_CAPTURE)
    free = integrate_u(sym2, [1.9, 0.05], u_span=(0.0, 20.0))
    assert all(e.kind != "RegionExit" for e in free.events)


def test_section_stop(sym2):
    run = integrate_u(sym2, [0.5, 0.5], u_span=(0.0, 100.0), section=lambda Y: Y.sum() - 0.5)
    assert run.termination == Termination.SECTION
    assert run.final_Y.sum() == pytest.approx(0.5, abs=1e-9)


def test_tau_stop(sym2):
    run = integrate_u(sym2, [0.5, 0.5], u_span=(0.0, 100.0), events=(), tau_stop=2.0)
    assert run.tau[-1] == pytest.approx(2.0, abs=1e-9)


def test_input_checks(sym2):
    with pytest.raises(ValueError):
        integrate_u(sym2, [-1.0, 0.5])
    with pytest.raises(ValueError):
        integrate_u(sym2, [1.0, 0.5], a0=0.0)


def test_tau_clock_collapse(sym2):
    run = integrate_tau(sym2, CircleState(a=1.0, b=(0.3, 4.0)), (0.0, 10.0))
    assert run.termination == Termination.BLOW_UP


def test_clock_crosscheck(sym2):
    rep = crosscheck_clocks(sym2, CircleState(a=0.1, b=(1.0, 1.0)), 50.0, 1e-9)
    assert rep.max_rel_deviation < 1e-7
    assert rep.ok and rep.n_samples > 10


def test_crosscheck_zero_horizon(sym2):
    assert crosscheck_clocks(sym2, CircleState(a=1.0, b=(1.0, 1.0)), 0.0).max_rel_deviation == 0


@given(st.floats(0.05, 0.6), st.floats(0.05, 0.6))
def test_lambda_bar_decreases_along_runs(y1, y2):
    spec = EXAMPLES["ASYM"]
    run = integrate_u(spec, [y1, y2], u_span=(0.0, 5.0), events=(), tol=1e-10)
    lam = lambda_bar(spec, run.Y)
    assert np.all(np.diff(lam) <= 1e-8 * np.abs(lam[:-1]))


@given(st.floats(0.05, 3.0), st.floats(0.05, 3.0), st.floats(0.1, 3.0))
def test_fibre_is_nondecreasing_in_tau(b1, b2, a):
    run = integrate_tau(EXAMPLES["SYM2"], CircleState(a=a, b=(b1, b2)), (0.0, 2.0))
    assert np.all(np.diff(run.a) >= -1e-12 * run.a[:-1])
