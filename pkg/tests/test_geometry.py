import numpy as np
import pytest
from hypothesis import given, strategies as st

from aflab.bundle import EXAMPLES
from aflab.circle import CircleState, energy, find_xi, state_from_Y
from aflab.geometry import (
    einstein_fit,
    einstein_residual,
    loglog_slope,
    ricci,
    scalar_curvature,
    scalar_curvature_hat,
    type_one_product,
    volume_proxy,
)
from aflab.integrator import integrate_tau
from aflab.torus import TorusState, integrate_torus, v_matrix


def test_einstein_state_sym2(sym2):
    snap = ricci(sym2, CircleState(a=4 / 3, b=(1.0, 1.0)))
    np.testing.assert_allclose(snap.ricci_fibre_eigs, [4 / 3], rtol=1e-14)
    np.testing.assert_allclose(snap.ricci_base, [4 / 3, 4 / 3], rtol=1e-14)
    xi = find_xi(sym2)
    assert snap.ricci_fibre_eigs[0] == pytest.approx(energy(sym2, xi) / (2 * 4 / 3))
    assert einstein_residual(sym2, CircleState(a=4 / 3, b=(1.0, 1.0))) < 1e-14


@pytest.mark.parametrize("a", [0.1, 1.0, 7.5])
def test_einstein_ray_asym(asym, a):
    xi = find_xi(asym)
    lam, res = einstein_fit(asym, state_from_Y(xi, a))
    assert res < 1e-12 * lam
    assert lam == pytest.approx(energy(asym, xi) / (2 * a), rel=1e-12)


def test_scalar_is_weighted_trace(asym):
    state = CircleState(a=0.7, b=(1.3, 2.1))
    snap = ricci(asym, state)
    tr = snap.ricci_fibre_eigs.sum() + np.sum(2 * np.array(asym.n) * snap.ricci_base)
    assert scalar_curvature(asym, state) == pytest.approx(tr, rel=1e-13)


def test_rank_two_fibre_eigenvalues(tor):
    H = np.array([[0.5, 0.1], [0.1, 0.3]])
    b = np.array([1.0, 2.0, 1.5])
    snap = ricci(tor, TorusState(H, b))
    ref = np.sort(np.linalg.eigvals(0.5 * v_matrix(tor, b) @ H).real)
    np.testing.assert_allclose(snap.ricci_fibre_eigs, ref, rtol=1e-12)


positive = st.floats(0.05, 5.0)


@given(positive, positive, positive)
def test_scalar_two_ways(a, b1, b2):
    state = CircleState(a=a, b=(b1, b2))
    spec = EXAMPLES["ASYM"]
    assert scalar_curvature_hat(spec, state) == pytest.approx(scalar_curvature(spec, state), rel=1e-11, abs=1e-12)


@given(positive, positive, positive, st.floats(0.1, 10.0))
def test_ricci_scales_inversely(a, b1, b2, c):
    spec = EXAMPLES["SYM2"]
    s1 = ricci(spec, CircleState(a=a, b=(b1, b2)))
    s2 = ricci(spec, CircleState(a=c * a, b=(c * b1, c * b2)))
    np.testing.assert_allclose(s2.ricci_base, s1.ricci_base / c, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(s2.ricci_fibre_eigs, s1.ricci_fibre_eigs / c, rtol=1e-12)


def test_type_one_product_on_immortal_torus(tor):
    run = integrate_torus(tor, TorusState(0.001 * np.eye(2), [1, 1, 1]), (0.0, 1e4),
                          t_eval=np.geomspace(1, 1e4, 400))
    tau, prod = type_one_product(tor, run)
    window = (tau >= 1e2) & (tau <= 1e4)
    running = np.maximum.accumulate(prod[window])
    assert np.all(prod[window] >= 0.8 * running)


def test_volume_slope_of_circle_collapse(sym2):
    # from ξ the flow is self-similar: volume proxy is constant in τ
    xi = find_xi(sym2)
    state = state_from_Y(xi, a=1.0)
    run = integrate_tau(sym2, state, (0.0, 50.0), t_eval=np.linspace(0, 50, 51))
    T = 1.0 / energy(sym2, xi)
    tau, V = volume_proxy(sym2, run, time_offset=T)
    assert loglog_slope(tau + T, V) == pytest.approx(0.0, abs=1e-7)


def test_loglog_slope():
    t = np.geomspace(1, 100, 20)
    assert loglog_slope(t, 3 * t**-1.5) == pytest.approx(-1.5)
    with pytest.raises(ValueError):
        loglog_slope(t, t, window=(1000, 2000))
