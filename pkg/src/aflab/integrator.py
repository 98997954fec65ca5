"""Adaptive integration of the r = 1 flow in the u-clock and the τ-clock.

u-clock state: (Y_1..Y_m, log a, τ) with
    dY_i/du = -Y_i F_i(Y),  d log a/du = E(Y),  dτ/du = a.
τ-clock state: (a, b_1..b_m, u) with
    da/dτ = Σ n_i q_i² a²/b_i²,  db_i/dτ = 2p_i - q_i² a/b_i,  du/dτ = 1/a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from .bundle import BundleSpec
from .circle import (
    BOUNDARY_BAND,
    CircleState,
    blowup_threshold,
    classify_region,
    deficit,
    energy,
    known_fixed_points,
    lambda_bar,
)
from .rk import StepUnderflowError, dopri_steps

__all__ = [
    "Termination",
    "Event",
    "CircleTrajectory",
    "ConsistencyReport",
    "integrate_u",
    "integrate_tau",
    "crosscheck_clocks",
    "TOL_FP_FIELD",
    "TOL_FP_DIST",
    "BLOWUP_FACTOR",
]

TOL_FP_FIELD = 1e-10
TOL_FP_DIST = 1e-6
BLOWUP_FACTOR = 10.0
HYPERPLANE_RATIO = 1e-8
EVENT_TIME_TOL = 1e-10
Y_ATOL_SCALE = 1e-6


class Termination(str, Enum):
    REACHED_SPAN = "ReachedSpan"
    FIXED_POINT_CAPTURE = "FixedPointCapture"
    BLOW_UP = "BlowUp"
    REGION_EXIT = "RegionExit"
    STEP_UNDERFLOW = "StepUnderflow"
    SECTION = "Section"


@dataclass(frozen=True)
class Event:
    kind: str
    u: float
    tau: float
    payload: dict = field(default_factory=dict)


@dataclass
class CircleTrajectory:
    """Samples of an r = 1 run; one row per accepted step (or per requested time)."""

    spec: BundleSpec
    clock: str
    u: np.ndarray
    tau: np.ndarray
    log_a: np.ndarray
    Y: np.ndarray
    events: list
    termination: Termination
    tol: float

    @property
    def a(self) -> np.ndarray:
        return np.exp(self.log_a)

    @property
    def b(self) -> np.ndarray:
        return self.a[:, None] / self.Y

    @property
    def H(self) -> np.ndarray:
        return self.a[:, None, None]

    @property
    def final_Y(self) -> np.ndarray:
        return self.Y[-1]

    def final_state(self) -> CircleState:
        return CircleState(a=self.a[-1], b=tuple(self.b[-1]))

    def event(self, kind):
        return next((e for e in self.events if e.kind == kind), None)

    def __len__(self):
        return len(self.u)

    def lambda_bar(self) -> np.ndarray:
        return lambda_bar(self.spec, self.Y)

    def region_flags(self) -> list:
        return [classify_region(self.spec, y).flags for y in self.Y]


def _region_ok(spec, Y, expected):
    """Whether Y satisfies the sign conditions of ``expected`` up to the band."""
    F = deficit(spec, Y)
    band = BOUNDARY_BAND * (1.0 + float(Y @ Y))
    if expected == "plus":
        return float(np.min(F + band))
    if expected == "minus":
        return float(np.min(band - F))
    theta = set(expected)
    signed = np.array([F[i] if i in theta else -F[i] for i in range(len(F))])
    return float(np.min(signed + band))


def _localize(step, g, idx=None):
    """First zero of g(y(t)) on a step, located on the dense output."""
    t0, t1 = step.t0, step.t1
    g0 = g(step.y0)
    g1 = g(step.y1)
    if g0 == 0:
        return t0
    if np.sign(g0) == np.sign(g1):
        return t1
    tol = EVENT_TIME_TOL * max(1.0, abs(t0), abs(t1))
    return brentq(lambda t: g(step(t)), min(t0, t1), max(t0, t1), xtol=tol)


def _capture(spec, Y, tags, pts):
    G = Y * deficit(spec, Y)
    if float(np.linalg.norm(G)) >= TOL_FP_FIELD:
        return None
    dist = np.linalg.norm(pts - Y, axis=1)
    k = int(np.argmin(dist))
    if dist[k] < TOL_FP_DIST:
        return tags[k], float(dist[k])
    return None


def integrate_u(spec: BundleSpec, Y0, a0=1.0, u_span=(0.0, 100.0),
                events=("capture", "blowup", "region", "hyperplane"), tol=1e-9, *,
                tau0=0.0, expected_region=None, section=None, tau_stop=None,
                capture_rule=None, max_step=np.inf, max_steps=200_000) -> CircleTrajectory:
    """Integrate (Y, log a, τ) jointly in the u-clock.

    Parameters
    ----------
    Y0 : array_like
        Start point, componentwise nonnegative.
    a0 : float
        Fibre coefficient at the start; τ starts at ``tau0``.
    u_span : (float, float)
        Integration interval; a decreasing span integrates backwards.
    events : iterable of str
        Subset of {"capture", "blowup", "region", "hyperplane"}.  Capture and
        blow-up terminate the run; region changes and hyperplane approach are
        recorded only.
    tol : float
        Local error tolerance (relative and absolute).
    expected_region : {"plus", "minus"} or tuple, optional
        Terminate with RegionExit when the run leaves Ω₊, Ω₋ or Ω_θ.
    section : callable, optional
        Scalar function of Y; the run stops where it changes sign.
    tau_stop : float, optional
        Stop where τ reaches this value.
    capture_rule : callable, optional
        Called as ``capture_rule(u, Y)`` after each accepted step; a non-None
        return value (a payload dict) ends the run as a FixedPointCapture.
    max_step : float
        Largest |Δu| per accepted step.

    Returns
    -------
    CircleTrajectory
        Samples at every accepted step.  StepUnderflow is reported through
        ``termination`` rather than raised.
    """
    Y0 = np.asarray(Y0, dtype=float)
    m = spec.m
    if Y0.shape != (m,) or np.any(Y0 < 0):
        raise ValueError("Y0 must be a nonnegative m-vector")
    if not a0 > 0 or not tol > 0:
        raise ValueError("a0 and tol must be positive")
    events = set(events)
    p2, q2, nq2 = 2.0 * spec.p_arr, spec.q2, spec.nq2
    cap = BLOWUP_FACTOR * float(np.max(blowup_threshold(spec)))
    support = Y0 > 0
    tags, pts = known_fixed_points(spec) if "capture" in events else (None, None)

    def fun(u, y):
        Y = y[:m]
        E = (Y * Y) @ nq2
        out = np.empty(m + 2)
        out[:m] = -Y * (p2 * Y - q2 * Y * Y - E)
        out[m] = E
        out[m + 1] = math.exp(y[m])
        return out

    def accept(y):
        return bool(np.all(y[:m][support] > 0) and np.all(y[:m] >= 0))

    y0 = np.concatenate([Y0, [math.log(a0), tau0]])
    # Y carries b = a/Y, so it is controlled in relative terms down to tiny values
    atol = np.full(m + 2, tol)
    atol[:m] = tol * Y_ATOL_SCALE
    rows = [y0]
    times = [float(u_span[0])]
    evs = []
    termination = Termination.REACHED_SPAN
    flags = classify_region(spec, Y0).flags if "region" in events else None
    hyper_seen = False

    def finish(step, t, kind, payload=None):
        y = step(t) if t != step.t1 else step.y1
        times.append(t)
        rows.append(y)
        evs.append(Event(kind, t, float(y[m + 1]), payload or {}))

    try:
        for step in dopri_steps(fun, u_span[0], y0, u_span[1], rtol=tol, atol=atol,
                                accept=accept, max_step=max_step, max_steps=max_steps):
            y = step.y1
            Y = y[:m]
            if "blowup" in events and Y.max() > cap:
                t = _localize(step, lambda z: z[:m].max() - cap)
                finish(step, t, "BlowUp", {"cap": cap})
                termination = Termination.BLOW_UP
                break
            if tau_stop is not None and (y[m + 1] - tau_stop) * (step.y0[m + 1] - tau_stop) <= 0 \
                    and y[m + 1] != step.y0[m + 1]:
                t = _localize(step, lambda z: z[m + 1] - tau_stop)
                finish(step, t, "TauStop", {"tau": tau_stop})
                termination = Termination.REACHED_SPAN
                break
            if section is not None and np.sign(section(Y)) != np.sign(section(step.y0[:m])):
                t = _localize(step, lambda z: section(z[:m]))
                finish(step, t, "Section")
                termination = Termination.SECTION
                break
            if expected_region is not None and _region_ok(spec, Y, expected_region) < 0:
                t = _localize(step, lambda z: _region_ok(spec, z[:m], expected_region))
                finish(step, t, "RegionExit", {"expected": str(expected_region)})
                termination = Termination.REGION_EXIT
                break
            times.append(step.t1)
            rows.append(y)
            if flags is not None:
                new_flags = classify_region(spec, Y).flags
                if new_flags != flags:
                    evs.append(Event("RegionChange", step.t1, float(y[m + 1]),
                                     {"from": flags, "to": new_flags}))
                    flags = new_flags
            if "hyperplane" in events and not hyper_seen and support.all() \
                    and Y.min() < HYPERPLANE_RATIO * Y.max():
                hyper_seen = True
                evs.append(Event("HyperplaneApproach", step.t1, float(y[m + 1]),
                                 {"index": int(np.argmin(Y))}))
            if capture_rule is not None:
                payload = capture_rule(step.t1, Y)
                if payload is not None:
                    evs.append(Event("FixedPointCapture", step.t1, float(y[m + 1]), payload))
                    termination = Termination.FIXED_POINT_CAPTURE
                    break
            if "capture" in events:
                hit = _capture(spec, Y, tags, pts)
                if hit is not None:
                    tag, dist = hit
                    evs.append(Event("FixedPointCapture", step.t1, float(y[m + 1]),
                                     {"point": tag, "distance": dist}))
                    termination = Termination.FIXED_POINT_CAPTURE
                    break
    except StepUnderflowError as exc:
        evs.append(Event("StepUnderflow", exc.t, float(rows[-1][m + 1]), {"h": exc.h}))
        termination = Termination.STEP_UNDERFLOW

    arr = np.array(rows)
    return CircleTrajectory(
        spec=spec, clock="u", u=np.array(times), tau=arr[:, m + 1], log_a=arr[:, m],
        Y=arr[:, :m], events=evs, termination=termination, tol=tol,
    )


def integrate_tau(spec: BundleSpec, state0: CircleState, tau_span=(0.0, 100.0), tol=1e-9, *,
                  t_eval=None, u0=0.0, max_steps=200_000) -> CircleTrajectory:
    """Integrate (a, b) in the τ-clock with u accumulated alongside.

    Trial steps that make a or some b_i nonpositive are rejected and halved.
    A finite-time collapse b_i → 0 is reported as a BlowUp event when
    max a/b_i crosses the blow-up cap.  With ``t_eval`` the samples are the
    dense-output values at those times instead of the accepted steps.
    """
    if not isinstance(state0, CircleState):
        state0 = CircleState(*state0)
    m = spec.m
    n, p2, q2, nq2 = spec.n_arr, 2.0 * spec.p_arr, spec.q2, spec.nq2
    cap = BLOWUP_FACTOR * float(np.max(blowup_threshold(spec)))

    def fun(t, y):
        a = y[0]
        b = y[1:m + 1]
        out = np.empty(m + 2)
        out[0] = a * a * float(np.sum(nq2 / (b * b)))
        out[1:m + 1] = p2 - q2 * a / b
        out[m + 1] = 1.0 / a
        return out

    def accept(y):
        return bool(y[0] > 0 and np.all(y[1:m + 1] > 0))

    y0 = np.concatenate([[state0.a], state0.b, [u0]])
    t_start, t_end = float(tau_span[0]), float(tau_span[1])
    times, rows, evs = [t_start], [y0], []
    termination = Termination.REACHED_SPAN
    evals = None
    if t_eval is not None:
        evals = np.asarray(t_eval, dtype=float)
        times, rows = [], []
        pending = list(evals)
        while pending and pending[0] == t_start:
            times.append(t_start)
            rows.append(y0)
            pending.pop(0)

    def ratio(y):
        return float(np.max(y[0] / y[1:m + 1]))

    last = None
    try:
        for step in dopri_steps(fun, t_start, y0, t_end, rtol=tol, atol=tol,
                                accept=accept, max_steps=max_steps):
            last = step
            blow = ratio(step.y1) > cap
            t_cut = _localize(step, lambda z: ratio(z) - cap) if blow else step.t1
            if evals is None:
                times.append(t_cut)
                rows.append(step(t_cut) if blow else step.y1)
            else:
                lo, hi = min(step.t0, t_cut), max(step.t0, t_cut)
                while pending and lo <= pending[0] <= hi:
                    t = pending.pop(0)
                    times.append(t)
                    rows.append(step.y1 if t == step.t1 else step(t))
            if blow:
                y = step(t_cut)
                evs.append(Event("BlowUp", float(y[m + 1]), t_cut, {"cap": cap}))
                termination = Termination.BLOW_UP
                break
    except StepUnderflowError as exc:
        # past the escape threshold the collapse b_i → 0 is genuine
        u_last = float(last.y1[m + 1]) if last is not None else u0
        if last is not None and ratio(last.y1) > cap / BLOWUP_FACTOR:
            evs.append(Event("BlowUp", u_last, exc.t, {"cap": cap, "at_underflow": True}))
            termination = Termination.BLOW_UP
        else:
            evs.append(Event("StepUnderflow", u_last, exc.t, {"h": exc.h}))
            termination = Termination.STEP_UNDERFLOW

    arr = np.array(rows).reshape(-1, m + 2)
    a = arr[:, 0]
    return CircleTrajectory(
        spec=spec, clock="tau", u=arr[:, m + 1], tau=np.array(times), log_a=np.log(a),
        Y=a[:, None] / arr[:, 1:m + 1], events=evs, termination=termination, tol=tol,
    )


@dataclass(frozen=True)
class ConsistencyReport:
    max_rel_deviation: float
    a_deviation: float
    b_deviation: float
    n_samples: int
    tol: float
    u_run: CircleTrajectory | None = None
    tau_run: CircleTrajectory | None = None

    @property
    def ok(self) -> bool:
        return self.max_rel_deviation < 100.0 * self.tol


def crosscheck_clocks(spec: BundleSpec, state0: CircleState, horizon: float, tol=1e-9) -> ConsistencyReport:
    """Run both clocks from the same data and compare (a, b) at the u-run's τ samples."""
    if not isinstance(state0, CircleState):
        state0 = CircleState(*state0)
    if horizon == 0:
        return ConsistencyReport(0.0, 0.0, 0.0, 1, tol)
    Y0 = state0.Y
    # a is nondecreasing, so τ ≥ a0·u and u = horizon/a0 is always far enough
    u_end = horizon / state0.a * (1 + 1e-6) + 1.0
    urun = integrate_u(spec, Y0, state0.a, (0.0, u_end), events=(), tol=tol, tau_stop=horizon)
    keep = urun.tau <= horizon * (1 + 1e-15)
    taus = urun.tau[keep]
    trun = integrate_tau(spec, state0, (0.0, float(taus[-1])), tol, t_eval=taus)
    n = min(len(taus), len(trun.tau))
    a_u, a_t = urun.a[keep][:n], trun.a[:n]
    b_u, b_t = urun.b[keep][:n], trun.b[:n]
    da = float(np.max(np.abs(a_u - a_t) / np.abs(a_t)))
    db = float(np.max(np.abs(b_u - b_t) / np.abs(b_t)))
    return ConsistencyReport(max(da, db), da, db, n, tol, urun, trun)
