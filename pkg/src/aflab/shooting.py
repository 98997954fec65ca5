"""Shooting along one-dimensional invariant curves through the Einstein point.

Each traced curve is normalized on a fixed section so that reports do not
depend on the start offset: a = 1 and τ = 0 where the curve crosses the
section.  Backward runs then converge to a fixed point as u → -∞ while τ
converges to a finite -T; the remaining tail ∫ a du is closed with the
exponential rate E(Y) at the last sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circle import CircleState, classify_region, energy, find_v, find_xi, known_fixed_points
from .errors import ShootingDrift
from .geometry import einstein_residual
from .integrator import Termination, integrate_tau, integrate_u
from .spectral import xi_spectrum

__all__ = [
    "AncientSolutionReport",
    "BackwardLimit",
    "trace_unstable",
    "trace_gamma",
    "classify_backward_limit",
    "stable_directions",
    "DEFAULT_EPS",
]

DEFAULT_EPS = 1e-6
MAX_EPS = 1e-3
MAX_RETRIES = 3
CAPTURE_RADIUS = 1e-4
CONFIRM_STEPS = 100
# u-step cap as a fraction of one e-fold of a, so limit windows are well sampled
SAMPLE_STEP = 0.25


@dataclass
class AncientSolutionReport:
    """Result of tracing one branch.

    ``limits`` maps a quantity name to {"measured", "expected", "rel_err"};
    ``checks`` maps assertion names to booleans.
    """

    branch: str
    eps: float
    T_singular: float
    T_uncertainty: float
    limits: dict
    forward_limits: dict
    backward_limit_point: object
    forward_limit_point: object
    einstein_residual: float
    checks: dict
    attempts: list = field(default_factory=list)
    tol: float = 1e-10
    backward: object = None
    forward: object = None
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        """Plain-data view; trajectories kept in ``extra`` are left out."""
        def clean(x):
            if isinstance(x, dict):
                return {str(k): clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, (np.floating, np.integer, np.bool_)):
                return x.item()
            return x

        return clean({
            "branch": self.branch, "eps": self.eps, "T_singular": self.T_singular,
            "T_uncertainty": self.T_uncertainty, "limits": self.limits,
            "forward_limits": self.forward_limits,
            "backward_limit_point": self.backward_limit_point,
            "forward_limit_point": self.forward_limit_point,
            "einstein_residual": self.einstein_residual, "checks": self.checks,
            "attempts": self.attempts, "tol": self.tol,
            "extra": {k: v for k, v in self.extra.items() if not hasattr(v, "termination")},
        })


def _max_normalized(v):
    return v / np.max(np.abs(v))


def _renormalize(traj, log_a_s, tau_s):
    """Shift a run so that a = 1 and τ = 0 at the section (homothety in τ)."""
    scale = math.exp(log_a_s)
    return (traj.tau - tau_s) / scale, traj.log_a - log_a_s


def _tail_T(tau, log_a, Y, spec):
    """T with τ(u) → -T; the tail ∫ a du beyond the last sample is a/E(Y)."""
    tail = math.exp(log_a[-1]) / float(energy(spec, Y[-1]))
    return tail - tau[-1], tail


def _fit_tail(u, log_a):
    """Exponential rate k of a over the last decade of samples; tail ≈ a/k."""
    sel = log_a <= log_a[-1] + math.log(10.0)
    if sel.sum() < 3:
        return None
    k = np.polyfit(u[sel], log_a[sel], 1)[0]
    return float(abs(k))


def _ratio_limits(T, tau, a, b, window):
    """Mean of a/(T+τ), b_i/(T+τ) over samples with (T+τ)/T inside ``window``."""
    s = T + tau
    sel = (s >= window[0] * T) & (s <= window[1] * T)
    if sel.sum() == 0:
        return None, None, 0
    return a[sel] / s[sel], b[sel] / s[sel, None], int(sel.sum())


def _limit_entry(values, expected):
    measured = float(np.mean(values))
    worst = float(np.max(np.abs(values - expected)) / abs(expected))
    return {"measured": measured, "expected": float(expected),
            "rel_err": abs(measured - expected) / abs(expected), "max_rel_err": worst}


def _check_eps(eps, attempts):
    if not 0 < eps:
        raise ValueError("eps must be positive")
    if eps > MAX_EPS:
        attempts.append({"eps": eps, "reason": f"eps above {MAX_EPS} leaves the linear regime"})
        return False
    return True


def _retrying(fn, eps, label):
    attempts = []
    for _ in range(MAX_RETRIES + 1):
        if _check_eps(eps, attempts):
            try:
                rep = fn(eps)
                rep.attempts = attempts + rep.attempts
                return rep
            except ShootingDrift as exc:
                attempts.append({"eps": eps, "reason": str(exc)})
        eps /= 10.0
    raise ShootingDrift(f"{label}: drift persisted after {MAX_RETRIES} retries: {attempts}")


def trace_unstable(spec, eps=DEFAULT_EPS, tol=1e-10, *, section_level=0.5, depth=1e-9,
                   limit_window=(1e-4, 1e-2), tau_forward=1e4) -> AncientSolutionReport:
    """Trace the branch of the unstable curve of ξ that enters Ω₊.

    The start is ξ - eps·|ξ|·z with z the positive eigenvector of the
    negative eigenvalue of L_ξ (max-norm 1).  The section is
    Σ Y_i = section_level·Σ ξ_i, where the curve is normalized to a = 1, τ = 0.
    """
    return _retrying(lambda e: _trace_unstable(spec, e, tol, section_level, depth,
                                               limit_window, tau_forward), eps, "trace_unstable")


def _trace_unstable(spec, eps, tol, section_level, depth, limit_window, tau_forward):
    xi = find_xi(spec)
    rep = xi_spectrum(spec, xi)
    z = _max_normalized(rep.perron_vector)
    E_xi = float(energy(spec, xi))
    d = eps * float(np.linalg.norm(xi))
    start = xi - d * z
    tag = classify_region(spec, start)
    if not tag.interior_plus:
        raise ShootingDrift(f"start {start} is not interior to Omega_plus ({tag.flags})")
    level = section_level * float(xi.sum())
    section = lambda Y: float(Y.sum()) - level

    # start → section, inside Ω₊
    u_cap = 50.0 + 40.0 / float(-rep.eigenvalues[0]) * math.log(1.0 / eps)
    head = integrate_u(spec, start, 1.0, (0.0, u_cap), events=(), tol=tol,
                       expected_region="plus", section=section, max_step=SAMPLE_STEP / E_xi)
    if head.termination == Termination.REGION_EXIT:
        raise ShootingDrift("left Omega_plus before the section")
    if head.termination != Termination.SECTION:
        raise ShootingDrift(f"section not reached ({head.termination.value})")
    log_a_s, tau_s = float(head.log_a[-1]), float(head.tau[-1])
    scale = math.exp(log_a_s)
    a_start = math.exp(-log_a_s)
    tau_start = -tau_s / scale

    # start → ξ backwards; a decays like exp(E(ξ) u)
    u_back = -(math.log(a_start / depth) / E_xi + 2.0)
    back = integrate_u(spec, start, a_start, (0.0, u_back), events=(), tol=tol, tau0=tau_start,
                       max_step=SAMPLE_STEP / E_xi)
    T, tail = _tail_T(back.tau, back.log_a, back.Y, spec)
    k_fit = _fit_tail(back.u, back.log_a)
    T_unc = abs(math.exp(back.log_a[-1]) / k_fit - tail) if k_fit else float("nan")
    T_unc = max(T_unc, tol * T)

    a_b = back.a
    b_b = back.b
    # the start→section leg covers the shallow end of the window for small eps
    tau_h = (head.tau - tau_s) / scale
    a_h = np.exp(head.log_a - log_a_s)
    tau_all = np.concatenate([back.tau, tau_h])
    a_all = np.concatenate([a_b, a_h])
    b_all = np.concatenate([b_b, a_h[:, None] / head.Y])
    ra, rb, count = _ratio_limits(T, tau_all, a_all, b_all, limit_window)
    limits = {}
    checks = {}
    if count:
        limits["a/(T+tau)"] = _limit_entry(ra, E_xi)
        for i in range(spec.m):
            limits[f"b_{i + 1}/(T+tau)"] = _limit_entry(rb[:, i], E_xi / xi[i])
    checks["limit_samples"] = count > 0
    checks["T_finite"] = bool(np.isfinite(T) and T > 0)
    s_end = T + back.tau[-1]
    rescaled = CircleState(a=a_b[-1] / s_end, b=tuple(b_b[-1] / s_end))
    resid = einstein_residual(spec, rescaled)

    # section → origin, must stay in Ω₊
    Y_s = head.Y[-1]
    fwd = integrate_u(spec, Y_s, 1.0, (0.0, 1e9), tol=tol, expected_region="plus")
    if fwd.termination == Termination.REGION_EXIT:
        raise ShootingDrift("forward branch left Omega_plus")
    cap = fwd.event("FixedPointCapture")
    forward_point = cap.payload["point"] if cap else None
    checks["forward_capture_origin"] = forward_point == "origin"
    trun = integrate_tau(spec, CircleState(1.0, tuple(1.0 / Y_s)), (0.0, tau_forward), tol)
    forward_limits = {}
    for i in range(spec.m):
        forward_limits[f"b_{i + 1}/tau"] = _limit_entry(np.array([trun.b[-1, i] / trun.tau[-1]]),
                                                        2.0 * spec.p_arr[i])

    # the other half of the unstable curve enters Ω₋ and escapes
    other = integrate_u(spec, xi + d * z, 1.0, (0.0, u_cap), events=("blowup",), tol=tol,
                        expected_region="minus")
    checks["opposite_blowup_in_minus"] = other.termination == Termination.BLOW_UP

    lam = np.concatenate([back.lambda_bar()[::-1], head.lambda_bar()[1:], fwd.lambda_bar()[1:]])
    far = np.concatenate([back.Y[::-1], head.Y[1:], fwd.Y[1:]])
    dist = np.linalg.norm(far - xi, axis=1)
    dl = np.diff(lam)
    slack = 1e-12 * np.abs(lam[1:])
    checks["lambda_bar_nonincreasing"] = bool(np.all(dl <= slack))
    strict = dist[1:] > 1e-3
    checks["lambda_bar_strict_away_from_xi"] = bool(np.all(dl[strict] < 0))

    return AncientSolutionReport(
        branch="unstable:-z", eps=eps, T_singular=T, T_uncertainty=T_unc, limits=limits,
        forward_limits=forward_limits, backward_limit_point="xi", forward_limit_point=forward_point,
        einstein_residual=resid, checks=checks, tol=tol, backward=back, forward=fwd,
        extra={"opposite_termination": other.termination.value, "opposite": other,
               "head": head, "section_state": Y_s.tolist(), "tau_run": trun},
    )


def trace_gamma(spec, k, eps=DEFAULT_EPS, tol=1e-10, *, depth=1e-9,
                limit_window=(1e-6, 1e-4)) -> AncientSolutionReport:
    """Trace the branch γ_k (k = 0 or 1) of the stable curve of ξ for m = 2.

    The start is ξ ± eps·|ξ|·w with w the eigenvector of the positive
    eigenvalue of L_ξ, signed into Int(Ω_{k}).  Backwards the branch runs to
    v_k; the section is Y_k = (ξ_k + (v_k)_k)/2.
    """
    if spec.m != 2:
        raise ValueError("trace_gamma needs m = 2")
    if k not in (0, 1):
        raise ValueError("k must be 0 or 1")
    return _retrying(lambda e: _trace_gamma(spec, k, e, tol, depth, limit_window), eps, "trace_gamma")


def _trace_gamma(spec, k, eps, tol, depth, limit_window):
    xi = find_xi(spec)
    rep = xi_spectrum(spec, xi)
    w = _max_normalized(rep.eigenvectors[:, -1])
    d = eps * float(np.linalg.norm(xi))
    start = None
    for sgn in (1.0, -1.0):
        cand = xi + sgn * d * w
        if classify_region(spec, cand).interior_theta((k,)):
            start = cand
            break
    if start is None:
        raise ShootingDrift("neither sign of the stable direction enters Int(Omega_k)")
    v = find_v(spec, (k,))
    E_v = float(energy(spec, v))
    mid = 0.5 * (xi[k] + v[k])
    section = lambda Y: float(Y[k]) - mid
    other = 1 - k

    # backwards: start → section inside Ω_k
    lam_pos = float(rep.eigenvalues[-1])
    u_cap = -(50.0 + 40.0 / lam_pos * math.log(1.0 / eps))
    head = integrate_u(spec, start, 1.0, (0.0, u_cap), events=(), tol=tol,
                       expected_region=(k,), section=section)
    if head.termination == Termination.REGION_EXIT:
        raise ShootingDrift("left Omega_k before the section")
    if head.termination != Termination.SECTION:
        raise ShootingDrift(f"section not reached ({head.termination.value})")
    log_a_s, tau_s = float(head.log_a[-1]), float(head.tau[-1])
    Y_s = head.Y[-1]

    u_back = -(math.log(1.0 / depth) / E_v + 2.0)
    back = integrate_u(spec, Y_s, 1.0, (0.0, u_back), events=(), tol=tol, expected_region=(k,),
                       max_step=SAMPLE_STEP / E_v)
    if back.termination == Termination.REGION_EXIT:
        raise ShootingDrift("backward branch left Omega_k")
    T, tail = _tail_T(back.tau, back.log_a, back.Y, spec)
    k_fit = _fit_tail(back.u, back.log_a)
    T_unc = abs(math.exp(back.log_a[-1]) / k_fit - tail) if k_fit else float("nan")
    T_unc = max(T_unc, tol * T)
    a_b, b_b = back.a, back.b
    ra, rb, count = _ratio_limits(T, back.tau, a_b, b_b, limit_window)
    coeff = (spec.n_arr[k] + 1.0) * spec.q2[k] / (2.0 * spec.p_arr[k])
    limits = {}
    checks = {"limit_samples": count > 0, "T_finite": bool(np.isfinite(T) and T > 0)}
    if count:
        limits["a/(T+tau)"] = _limit_entry(ra, E_v)
        limits[f"b_{k + 1}/(T+tau)"] = _limit_entry(rb[:, k], coeff * E_v)
    b_other = b_b[:, other]
    b_other_min = float(b_other.min())
    checks["b_other_positive"] = b_other_min > 0
    dist_v = float(np.linalg.norm(back.Y[-1] - v))
    checks["backward_reaches_v"] = dist_v < CAPTURE_RADIUS * float(np.linalg.norm(v))

    # one coordinate grows and the other shrinks along the whole branch
    G = -back.Y * (2.0 * spec.p_arr * back.Y - spec.q2 * back.Y**2 - energy(spec, back.Y)[:, None])
    prod = G[:, 0] * G[:, 1]
    checks["opposite_monotonicity"] = bool(np.all(prod <= 1e-14 * np.max(np.abs(G), axis=1) ** 2 + 1e-300))

    sub = spec.sub_bundle((k,))
    limit_state = CircleState(a=E_v, b=(coeff * E_v,))
    sub_resid = einstein_residual(sub, limit_state)
    checks["sub_bundle_einstein"] = sub_resid < 1e-10

    # forwards the branch approaches ξ until the O(eps²) offset takes over
    fwd = integrate_u(spec, start, 1.0, (0.0, 40.0 / lam_pos * math.log(1.0 / eps)), events=(),
                      tol=tol)
    dist_xi = np.linalg.norm(fwd.Y - xi, axis=1)
    forward_point = "xi" if dist_xi.min() < 0.1 * d else None
    checks["forward_approaches_xi"] = forward_point == "xi"

    lam = back.lambda_bar()
    dl = np.diff(lam)
    checks["lambda_bar_increasing_backward"] = bool(np.all(dl >= -1e-12 * np.abs(lam[1:])))

    scale = math.exp(log_a_s)
    return AncientSolutionReport(
        branch=f"gamma_{k + 1}", eps=eps, T_singular=T, T_uncertainty=T_unc, limits=limits,
        forward_limits={"closest_approach_to_xi": float(dist_xi.min())},
        backward_limit_point=(k,), forward_limit_point=forward_point,
        einstein_residual=sub_resid, checks=checks, tol=tol, backward=back, forward=fwd,
        extra={"b_other_lower_bound": b_other_min, "b_other_limit": float(b_other[-1]),
               "start_tau_offset": -tau_s / scale, "head": head,
               "section_state": Y_s.tolist(), "distance_to_v": dist_v},
    )


@dataclass(frozen=True)
class BackwardLimit:
    status: str
    tag: tuple | None
    closest: object
    distance: float
    u_end: float
    steps: int
    note: str = ""


def classify_backward_limit(spec, Y0, tol=1e-10, *, horizon=400.0,
                            radius=CAPTURE_RADIUS, confirm=CONFIRM_STEPS) -> BackwardLimit:
    """Integrate backwards from Y0 and name the v_θ it settles at.

    Capture needs ``confirm`` consecutive accepted steps within
    radius·|v_θ| of the same v_θ.  The origin and ξ are never accepted as
    backward limits; no capture within ``horizon`` is reported as inconclusive.
    """
    Y0 = np.asarray(Y0, dtype=float)
    tags, pts = known_fixed_points(spec)
    d0 = np.linalg.norm(pts - Y0, axis=1)
    if d0.min() <= 1e-12 * max(1.0, float(np.linalg.norm(Y0))):
        return BackwardLimit("rejected", None, tags[int(np.argmin(d0))], float(d0.min()), 0.0, 0,
                             "start is a fixed point")
    radii = np.array([radius * np.linalg.norm(p) if t not in ("origin", "xi") else 0.0
                      for t, p in zip(tags, pts)])
    state = {"tag": None, "count": 0}

    def rule(u, Y):
        dist = np.linalg.norm(pts - Y, axis=1)
        j = int(np.argmin(dist))
        tag = tags[j]
        if tag in ("origin", "xi") or dist[j] >= radii[j]:
            state["tag"], state["count"] = None, 0
            return None
        if tag == state["tag"]:
            state["count"] += 1
        else:
            state["tag"], state["count"] = tag, 1
        if state["count"] >= confirm:
            return {"point": tag, "distance": float(dist[j])}
        return None

    run = integrate_u(spec, Y0, 1.0, (0.0, -horizon), events=(), tol=tol, capture_rule=rule)
    dist = np.linalg.norm(pts - run.Y[-1], axis=1)
    j = int(np.argmin(dist))
    if run.termination == Termination.FIXED_POINT_CAPTURE:
        tag = run.events[-1].payload["point"]
        return BackwardLimit("captured", tag, tag, float(dist[j]), float(run.u[-1]), len(run))
    note = "no capture within horizon"
    if tags[j] in ("origin", "xi"):
        note = f"closest fixed point {tags[j]} is not an admissible backward limit"
    return BackwardLimit("inconclusive", None, tags[j], float(dist[j]), float(run.u[-1]), len(run), note)


def stable_directions(spec, count, eps=DEFAULT_EPS, offset=0.1):
    """Start points ξ + eps·|ξ|·w on a circle in the stable plane of ξ (m = 3).

    The plane is spanned by the eigenvectors of the positive eigenvalues of
    L_ξ; angles are offset to avoid the symmetric separatrix directions.
    """
    xi = find_xi(spec)
    rep = xi_spectrum(spec, xi)
    basis, _ = np.linalg.qr(rep.eigenvectors[:, 1:])
    if basis.shape[1] != 2:
        raise ValueError("stable plane sampling needs m = 3")
    d = eps * float(np.linalg.norm(xi))
    angles = offset + 2.0 * np.pi * np.arange(count) / count
    return [xi + d * (math.cos(t) * basis[:, 0] + math.sin(t) * basis[:, 1]) for t in angles]
