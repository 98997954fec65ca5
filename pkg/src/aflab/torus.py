"""Rank-r flow dH/dτ = H V(b) H, db_i/dτ = 2p_i - h(Q^(i), Q^(i))/b_i.

V_{αβ} = Σ_i q_{αi} q_{βi} n_i / b_i² and h(Q^(i), Q^(i)) = Q^(i)ᵀ H Q^(i).
The hat clock û is carried in the same stepper with dû/dτ = 1/tr H.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bundle import BundleSpec, admissible_initial_r, coupling_constants
from .errors import DomainError, NotPositiveDefinite
from .integrator import BLOWUP_FACTOR, Event, Termination
from .rk import StepUnderflowError, dopri_steps

__all__ = [
    "TorusState",
    "HatVariables",
    "TorusTrajectory",
    "MonitorReport",
    "v_matrix",
    "torus_field",
    "hat_variables",
    "integrate_torus",
    "torus_monitors",
    "trace_HVH",
    "limit_metric",
]


@dataclass(frozen=True)
class TorusState:
    H: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float, ndmin=1)
        if H.shape[0] != H.shape[1]:
            raise DomainError("H must be square")
        scale = max(float(np.max(np.abs(H))), np.finfo(float).tiny)
        if np.max(np.abs(H - H.T)) > 1e-13 * scale:
            raise DomainError("H must be symmetric")
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("H is not positive definite") from None
        if np.any(b <= 0):
            raise DomainError("b_i must be positive")
        H.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_circle(cls, state):
        return cls(H=[[state.a]], b=state.b)


@dataclass(frozen=True)
class HatVariables:
    a_hat: float
    Y_hat: np.ndarray
    E_hat: float
    u_hat: float = 0.0


def v_matrix(spec: BundleSpec, b) -> np.ndarray:
    """V = Q diag(n_i / b_i²) Qᵀ."""
    b = np.asarray(b, dtype=float)
    Q = spec.Q_arr
    w = spec.n_arr / (b * b)
    return (Q * w) @ Q.T


def _hQQ(spec, H):
    """h(Q^(i), Q^(i)) for every column i."""
    Q = spec.Q_arr
    return np.einsum("ai,ab,bi->i", Q, H, Q)


def torus_field(spec: BundleSpec, state: TorusState):
    """(dH/dτ, db/dτ) at a state; dH/dτ is symmetrized."""
    H, b = state.H, state.b
    dH = H @ v_matrix(spec, b) @ H
    dH = 0.5 * (dH + dH.T)
    db = 2.0 * spec.p_arr - _hQQ(spec, H) / b
    return dH, db


def hat_variables(state, u_hat=0.0) -> HatVariables:
    H = state.H if hasattr(state, "H") else np.array([[state.a]])
    a_hat = float(np.trace(H))
    Y = a_hat / np.asarray(state.b, dtype=float)
    return HatVariables(a_hat=a_hat, Y_hat=Y, E_hat=float(Y.sum()), u_hat=u_hat)


def trace_HVH(spec, H, b):
    """tr(HVH) two ways: matrix product, and Σ_i Σ_α n_i ((HQ)_{αi})² / b_i²."""
    direct = float(np.trace(H @ v_matrix(spec, b) @ H))
    HQ = H @ spec.Q_arr
    a_hat = float(np.trace(H))
    Yh = a_hat / np.asarray(b)
    by_sum = float(np.sum(spec.n_arr * Yh**2 * np.sum(HQ * HQ, axis=0)) / a_hat**2)
    return direct, by_sum


@dataclass
class TorusTrajectory:
    spec: BundleSpec
    tau: np.ndarray
    u_hat: np.ndarray
    H: np.ndarray
    b: np.ndarray
    events: list
    termination: Termination
    tol: float
    admissible: bool

    @property
    def a_hat(self) -> np.ndarray:
        return np.trace(self.H, axis1=1, axis2=2)

    @property
    def Y_hat(self) -> np.ndarray:
        return self.a_hat[:, None] / self.b

    @property
    def E_hat(self) -> np.ndarray:
        return self.Y_hat.sum(axis=1)

    @property
    def detH(self) -> np.ndarray:
        return np.linalg.det(self.H)

    @property
    def trHinv(self) -> np.ndarray:
        return np.trace(np.linalg.inv(self.H), axis1=1, axis2=2)

    def __len__(self):
        return len(self.tau)

    def state(self, k=-1) -> TorusState:
        return TorusState(H=self.H[k], b=self.b[k])


def integrate_torus(spec: BundleSpec, state0: TorusState, tau_span=(0.0, 100.0), tol=1e-10, *,
                    t_eval=None, max_steps=200_000) -> TorusTrajectory:
    """Adaptive integration of (H, b, û) with H re-symmetrized after each step.

    Trial steps that lose positive definiteness of H or positivity of b are
    rejected and halved.  Monitors are evaluated afterwards by
    :func:`torus_monitors`.
    """
    if not isinstance(state0, TorusState):
        state0 = TorusState(*state0)
    r, m = spec.r, spec.m
    rr = r * r
    Q = spec.Q_arr
    n = spec.n_arr
    p2 = 2.0 * spec.p_arr
    cap = BLOWUP_FACTOR * float(np.max(p2 / ((n + 1.0) * np.sum(Q * Q, axis=0))))

    def fun(t, y):
        H = y[:rr].reshape(r, r)
        b = y[rr:rr + m]
        V = (Q * (n / (b * b))) @ Q.T
        out = np.empty_like(y)
        out[:rr] = (H @ V @ H).ravel()
        out[rr:rr + m] = p2 - np.einsum("ai,ab,bi->i", Q, H, Q) / b
        out[-1] = 1.0 / np.trace(H)
        return out

    def accept(y):
        if np.any(y[rr:rr + m] <= 0):
            return False
        try:
            np.linalg.cholesky(y[:rr].reshape(r, r))
        except np.linalg.LinAlgError:
            return False
        return True

    def project(y):
        H = y[:rr].reshape(r, r)
        y = y.copy()
        y[:rr] = (0.5 * (H + H.T)).ravel()
        return y

    y0 = np.concatenate([state0.H.ravel(), state0.b, [0.0]])
    t0, t1 = float(tau_span[0]), float(tau_span[1])
    pending = None if t_eval is None else list(np.asarray(t_eval, dtype=float))
    if pending is None:
        times, rows = [t0], [y0]
    else:
        times, rows = [], []
        while pending and pending[0] == t0:
            times.append(t0)
            rows.append(y0)
            pending.pop(0)
    evs = []
    termination = Termination.REACHED_SPAN
    try:
        for step in dopri_steps(fun, t0, y0, t1, rtol=tol, atol=tol * 1e-3, accept=accept,
                                project=project, max_steps=max_steps):
            if pending is None:
                times.append(step.t1)
                rows.append(step.y1)
            else:
                while pending and step.t0 <= pending[0] <= step.t1:
                    t = pending.pop(0)
                    times.append(t)
                    rows.append(step.y1 if t == step.t1 else project(step(t)))
            y = step.y1
            if np.trace(y[:rr].reshape(r, r)) / np.min(y[rr:rr + m]) > cap:
                evs.append(Event("BlowUp", float(y[-1]), step.t1, {"cap": cap}))
                termination = Termination.BLOW_UP
                break
    except StepUnderflowError as exc:
        evs.append(Event("StepUnderflow", float(rows[-1][-1]) if rows else 0.0, exc.t, {"h": exc.h}))
        termination = Termination.STEP_UNDERFLOW

    arr = np.array(rows).reshape(-1, rr + m + 1)
    return TorusTrajectory(
        spec=spec, tau=np.array(times), u_hat=arr[:, -1], H=arr[:, :rr].reshape(-1, r, r),
        b=arr[:, rr:rr + m], events=evs, termination=termination, tol=tol,
        admissible=admissible_initial_r(spec, state0.H, state0.b),
    )


@dataclass
class MonitorReport:
    """Per-check pass flags plus the worst violation seen for each."""

    checks: dict = field(default_factory=dict)
    worst: dict = field(default_factory=dict)
    per_sample: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failed(self):
        return [k for k, v in self.checks.items() if not v]


def torus_monitors(traj: TorusTrajectory, rel_slack=1e-9) -> MonitorReport:
    """Evaluate the rank-r monitors at every sample.

    Universal: tr H, det H nondecreasing; tr H⁻¹ nonincreasing; Cholesky
    positivity; b_i ≤ 2p_iτ + b_i(0); tr(HVH) dual formula.  When the start
    is admissible also b_i ≥ (2p_i - 1/m)τ + b_i(0), Ê decreasing with
    Ê ≤ m/(û + m/Ê(0)) ≤ m/û, and positive Ricci bounds.
    """
    spec = traj.spec
    m = spec.m
    tau = traj.tau - traj.tau[0]
    H, b = traj.H, traj.b
    rep = MonitorReport()

    def record(name, ok_arr, worst):
        ok_arr = np.asarray(ok_arr, dtype=bool)
        rep.checks[name] = bool(np.all(ok_arr))
        rep.worst[name] = float(worst)
        rep.per_sample[name] = ok_arr

    def nondecreasing(x):
        d = np.diff(x)
        slack = rel_slack * np.abs(x[1:])
        ok = np.concatenate([[True], d >= -slack])
        return ok, float(np.min(d / np.maximum(np.abs(x[1:]), 1e-300))) if len(d) else 0.0

    trH = traj.a_hat
    detH = traj.detH
    trHinv = traj.trHinv
    record("trH_nondecreasing", *nondecreasing(trH))
    record("detH_nondecreasing", *nondecreasing(detH))
    ok, w = nondecreasing(-trHinv)
    record("trHinv_nonincreasing", ok, w)
    chol = np.array([bool(np.all(np.linalg.eigvalsh(h) > 0)) for h in H])
    record("cholesky", chol, float(np.min([np.linalg.eigvalsh(h).min() for h in H])))

    p2 = 2.0 * spec.p_arr
    upper = p2 * tau[:, None] + b[0]
    gap = upper - b
    record("b_upper", np.all(gap >= -rel_slack * upper, axis=1), gap.min())

    direct = np.empty(len(tau))
    dual = np.empty(len(tau))
    for k in range(len(tau)):
        direct[k], dual[k] = trace_HVH(spec, H[k], b[k])
    rel = np.abs(direct - dual) / np.abs(direct)
    record("trHVH_dual", rel < 1e-10, rel.max())

    if traj.admissible:
        lower = (p2 - 1.0 / m) * tau[:, None] + b[0]
        gap = b - lower
        record("b_lower", np.all(gap >= -rel_slack * upper, axis=1), gap.min())
        E = traj.E_hat
        u = traj.u_hat - traj.u_hat[0]
        d = np.diff(E)
        record("E_hat_decreasing", np.concatenate([[True], d < 0]), d.max() if len(d) else 0.0)
        sharp = m / (u + m / E[0])
        record("E_hat_sharp_bound", E <= sharp * (1 + rel_slack), (E / sharp).max())
        pos = u > 0
        crude = np.full_like(E, np.inf)
        crude[pos] = m / u[pos]
        record("E_hat_bound", E <= crude * (1 + rel_slack), (E[pos] / crude[pos]).max() if pos.any() else 0.0)
        fib = np.array([np.linalg.eigvalsh(0.5 * h @ v_matrix(spec, bb) @ h).min() for h, bb in zip(H, b)])
        record("ricci_fibre_positive", fib > 0, fib.min())
        hq = np.array([_hQQ(spec, h) for h in H])
        base = spec.p_arr - hq / (2.0 * b)
        floor = spec.p_arr - 1.0 / (2.0 * m)
        record("ricci_base_bound", np.all(base >= floor * (1 - rel_slack), axis=1), (base - floor).min())
    return rep


def limit_metric(traj: TorusTrajectory, horizons=None):
    """Richardson estimate of H_* = lim H(τ), assuming H(τ) - H_* ~ C/τ.

    Uses H at τ, 2τ, 4τ (τ = horizons[0] by default a quarter of the run).
    Returns ``(H_star, uncertainty)``.
    """
    tau_end = traj.tau[-1]
    if horizons is None:
        horizons = (tau_end / 4, tau_end / 2, tau_end)
    Hs = []
    for t in horizons:
        k = int(np.argmin(np.abs(traj.tau - t)))
        Hs.append((traj.tau[k], traj.H[k]))
    (t1, H1), (t2, H2), (t3, H3) = Hs
    # H(t) ≈ H_* + C/t  ⇒  H_* ≈ (t2 H2 - t1 H1)/(t2 - t1)
    est_a = (t2 * H2 - t1 * H1) / (t2 - t1)
    est_b = (t3 * H3 - t2 * H2) / (t3 - t2)
    return est_b, float(np.max(np.abs(est_b - est_a)))
