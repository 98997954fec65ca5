"""Curvature and collapse diagnostics for connection metrics.

States are handled uniformly through (H, b): an r = 1 state has H = [[a]].
Ricci eigenvalues are reported in a g-orthonormal frame: the fibre block
has eigenvalues of ½ H^{1/2} V H^{1/2}; the i-th base factor contributes
2n_i copies of p_i/b_i - h(Q^(i), Q^(i))/(2 b_i²).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circle import CircleState
from .torus import TorusState, _hQQ, v_matrix

__all__ = [
    "CurvatureSnapshot",
    "ricci",
    "scalar_curvature",
    "scalar_curvature_hat",
    "einstein_fit",
    "einstein_residual",
    "type_one_product",
    "volume_proxy",
    "loglog_slope",
]


def _as_Hb(state):
    if isinstance(state, CircleState):
        return np.array([[state.a]]), np.asarray(state.b, dtype=float)
    if isinstance(state, TorusState):
        return state.H, state.b
    H, b = state
    return np.array(H, dtype=float, ndmin=2), np.asarray(b, dtype=float)


@dataclass(frozen=True)
class CurvatureSnapshot:
    ricci_fibre: np.ndarray
    ricci_fibre_eigs: np.ndarray
    ricci_base: np.ndarray
    scalar: float
    a_tensor_scale: float
    base_curv_scale: np.ndarray

    @property
    def min_eigenvalue(self) -> float:
        return float(min(self.ricci_fibre_eigs.min(), self.ricci_base.min()))

    @property
    def max_abs_eigenvalue(self) -> float:
        return float(max(np.abs(self.ricci_fibre_eigs).max(), np.abs(self.ricci_base).max()))


def ricci(spec, state, base_curv=None) -> CurvatureSnapshot:
    """Ricci components of the metric with fibre block H and base coefficients b."""
    H, b = _as_Hb(state)
    V = v_matrix(spec, b)
    fibre = 0.5 * H @ V @ H
    fibre = 0.5 * (fibre + fibre.T)
    # eigenvalues of H⁻¹·fibre = ½ V H, via the symmetric form ½ L ᵀ V L with H = L Lᵀ
    L = np.linalg.cholesky(H)
    eigs = np.linalg.eigvalsh(0.5 * L.T @ V @ L)
    h = _hQQ(spec, H)
    base = spec.p_arr / b - h / (2.0 * b * b)
    scalar = float(np.sum(2.0 * spec.n_arr * spec.p_arr / b) - 0.5 * np.sum(spec.n_arr * h / (b * b)))
    sq = np.sqrt(h) / b
    a_scale = float(np.max(np.outer(sq, sq)) / 4.0)
    K = np.ones(spec.m) if base_curv is None else np.asarray(base_curv, dtype=float)
    return CurvatureSnapshot(
        ricci_fibre=fibre, ricci_fibre_eigs=eigs, ricci_base=base, scalar=scalar,
        a_tensor_scale=a_scale, base_curv_scale=K / b,
    )


def scalar_curvature(spec, state) -> float:
    """R = Σ 2n_i p_i / b_i - ½ Σ n_i h(Q^(i), Q^(i)) / b_i²."""
    return ricci(spec, state).scalar


def scalar_curvature_hat(spec, state) -> float:
    """Same scalar written in hat variables: (1/â)(2Σ n_i p_i Ŷ_i - ½ Σ n_i (h_i/â) Ŷ_i²)."""
    H, b = _as_Hb(state)
    a_hat = float(np.trace(H))
    Y = a_hat / b
    h = _hQQ(spec, H)
    return (2.0 * np.sum(spec.n_arr * spec.p_arr * Y) - 0.5 * np.sum(spec.n_arr * (h / a_hat) * Y * Y)) / a_hat


def _slots(spec, snap):
    vals = np.concatenate([snap.ricci_fibre_eigs, snap.ricci_base])
    weights = np.concatenate([np.ones(len(snap.ricci_fibre_eigs)), 2.0 * spec.n_arr])
    return vals, weights


def einstein_fit(spec, state):
    """Least-squares λ for Rc = λ g over all orthonormal slots, and the max residual."""
    snap = ricci(spec, state)
    vals, w = _slots(spec, snap)
    lam = float(np.sum(w * vals) / np.sum(w))
    return lam, float(np.max(np.abs(vals - lam)))


def einstein_residual(spec, state) -> float:
    return einstein_fit(spec, state)[1]


def _trajectory_states(traj):
    return traj.H, traj.b


def type_one_product(spec, traj, base_curv=None, time_offset=0.0):
    """Series (τ, (T + τ)·κ(τ)) with κ the curvature surrogate.

    κ = max(largest |Ricci eigenvalue|, max_ij √h_i √h_j / (4 b_i b_j), max_i K_i / b_i).
    """
    K = np.ones(spec.m) if base_curv is None else np.asarray(base_curv, dtype=float)
    H, b = _trajectory_states(traj)
    kappa = np.empty(len(traj.tau))
    for k in range(len(kappa)):
        snap = ricci(spec, (H[k], b[k]), K)
        kappa[k] = max(snap.max_abs_eigenvalue, snap.a_tensor_scale, float(np.max(snap.base_curv_scale)))
    t = traj.tau + time_offset
    return traj.tau.copy(), t * kappa


def volume_proxy(spec, traj, time_offset=0.0):
    """Series (τ, V) with V = (det H)^{1/2} ∏ b_i^{n_i} / (T + τ)^{n/2}, n = r + Σ 2n_i.

    Computed in logs; samples with T + τ ≤ 0 are dropped.
    """
    H, b = _trajectory_states(traj)
    t = traj.tau + time_offset
    keep = t > 0
    logdet = np.linalg.slogdet(H[keep])[1]
    logV = 0.5 * logdet + np.log(b[keep]) @ spec.n_arr - 0.5 * spec.dim * np.log(t[keep])
    return traj.tau[keep], np.exp(logV)


def loglog_slope(t, v, window=None):
    """Least-squares slope of log v against log t, restricted to ``window``."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    mask = (t > 0) & (v > 0)
    if window is not None:
        mask &= (t >= window[0]) & (t <= window[1])
    if mask.sum() < 2:
        raise ValueError("need at least two samples in the window")
    return float(np.polyfit(np.log(t[mask]), np.log(v[mask]), 1)[0])
