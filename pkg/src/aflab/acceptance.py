"""The verification suite: one function per acceptance criterion.

Each criterion returns a :class:`CriterionResult` whose ``passed`` combines
the numerical checks with the runtime budget.  ``tol_scale`` multiplies the
integration tolerances and ``c0_scale`` the rank-r basin constant, which is
how the robustness and negative controls are run.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import oracles
from .bundle import EXAMPLES, BundleSpec, basin_certificate, c0_certificate, coupling_constants, validate
from .circle import (
    CircleState,
    _find_xi_cached,
    blowup_threshold,
    classify_region,
    deficit,
    energy,
    find_v,
    find_xi,
    lambda_bar,
    lambda_bar_rate,
    vector_field,
)
from .geometry import loglog_slope, ricci, volume_proxy
from .integrator import Termination, crosscheck_clocks, integrate_tau, integrate_u
from .shooting import classify_backward_limit, stable_directions, trace_gamma, trace_unstable
from .spectral import DiagPlusRankOne, secular_eigen, xi_spectrum
from .torus import TorusState, integrate_torus, torus_monitors

__all__ = ["CriterionResult", "Context", "CRITERIA", "run_criterion", "run_suite", "random_valid_spec", "omega_plus_grid"]


@dataclass
class CriterionResult:
    key: str
    name: str
    passed: bool
    checks: dict
    detail: dict
    elapsed: float
    budget: float

    @property
    def within_budget(self) -> bool:
        return self.elapsed < self.budget

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        failed = [k for k, v in self.checks.items() if not v]
        extra = f" failed={','.join(failed)}" if failed else ""
        return f"{status} {self.key} {self.name} ({self.elapsed:.2f}s / {self.budget:g}s){extra}"

    def to_dict(self) -> dict:
        return {"key": self.key, "name": self.name, "passed": self.passed, "checks": self.checks,
                "detail": self.detail, "elapsed": self.elapsed, "budget": self.budget}


@dataclass
class Context:
    seed: int = 0
    tol_scale: float = 1.0
    c0_scale: float = 1.0
    timings: bool = True
    extra: dict = field(default_factory=dict)

    def rng(self, salt):
        return np.random.default_rng([self.seed, salt])

    def tol(self, base):
        return base * self.tol_scale


SYM2 = EXAMPLES["SYM2"]
ASYM = EXAMPLES["ASYM"]
SYM3 = EXAMPLES["SYM3"]
TOR = EXAMPLES["TOR"]


def random_valid_spec(rng, max_m=6) -> BundleSpec:
    """A random valid r = 1 spec with small integer data."""
    while True:
        m = int(rng.integers(2, max_m + 1))
        n = rng.integers(1, 4, size=m)
        p = rng.integers(1, 6, size=m)
        q = rng.integers(1, 4, size=m) * rng.choice([-1, 1], size=m)
        spec = BundleSpec(m=m, r=1, n=tuple(n), p=tuple(p), Q=(tuple(q),))
        if validate(spec).ok:
            return spec


def omega_plus_grid(spec, count_s=10, count_t=10):
    """Interior points of Ω₊ on rays from the origin (m = 2).

    Along the direction ω the deficit F_i(rω) = r(2p_iω_i - r(q_i²ω_i² + E(ω)))
    vanishes at r_i = 2p_iω_i/(q_i²ω_i² + E(ω)); the ray leaves Ω₊ at
    R = min r_i.  By concavity of F_i, s·R·ω is interior for 0 < s < 1.
    """
    pts = []
    for t in (np.arange(count_t) + 0.5) / count_t * (np.pi / 2):
        w = np.array([math.cos(t), math.sin(t)])
        R = np.min(2.0 * spec.p_arr * w / (spec.q2 * w * w + energy(spec, w)))
        for s in (np.arange(count_s) + 0.5) / count_s:
            pts.append(s * R * w)
    return np.array(pts)


def _mono_ok(lam, slack=1e-9):
    d = np.diff(lam)
    return bool(np.all(d <= slack * np.abs(lam[1:]))), float(np.max(d / np.abs(lam[1:]))) if len(d) else 0.0


# 1 ---------------------------------------------------------------------------

def c1_einstein_point(ctx):
    _find_xi_cached.cache_clear()
    xi = find_xi(SYM2)
    F = deficit(SYM2, xi)
    checks = {"xi_value": bool(np.max(np.abs(xi - 4.0 / 3.0)) < 1e-12),
              "xi_residual": bool(np.max(np.abs(F)) < 1e-12)}
    worst_v = 0.0
    for spec in (SYM2, ASYM, SYM3):
        for k in range(spec.m):
            v = find_v(spec, (k,))
            exact = 2.0 * spec.p_arr[k] / ((spec.n_arr[k] + 1) * spec.q2[k])
            others = np.delete(v, k)
            worst_v = max(worst_v, abs(v[k] - exact), float(np.max(np.abs(others), initial=0.0)))
    checks["singleton_v_exact"] = worst_v <= 1e-14
    return checks, {"xi": xi, "residual": float(np.max(np.abs(F))), "worst_singleton_error": worst_v}


# 2 ---------------------------------------------------------------------------

def c2_spectrum(ctx):
    rep = xi_spectrum(SYM2)
    ev = rep.eigenvalues
    checks = {"sym2_values": bool(np.max(np.abs(ev - [-16.0 / 3.0, 16.0 / 9.0])) < 1e-10)}
    rng = ctx.rng(2)
    specs = [SYM2, ASYM] + [random_valid_spec(rng) for _ in range(50)]
    pattern, below = True, True
    worst_gap = math.inf
    for spec in specs:
        r = xi_spectrum(spec)
        E = float(energy(spec, find_xi(spec)))
        pattern &= r.n_negative == 1 and r.n_positive == spec.m - 1
        below &= bool(r.eigenvalues[0] < -E)
        worst_gap = min(worst_gap, -E - float(r.eigenvalues[0]))
    checks["sign_pattern"] = bool(pattern)
    checks["negative_below_minus_E"] = bool(below)
    return checks, {"sym2_eigenvalues": ev, "specs": len(specs), "min_gap_below_minus_E": worst_gap}


# 3 ---------------------------------------------------------------------------

def c3_secular(ctx):
    rng = ctx.rng(3)
    worst = 0.0
    certs = True
    sizes = rng.integers(1, 11, size=1000)
    cases = [(rng.uniform(0.05, 5.0, size=m), rng.uniform(0.05, 2.0, size=m)) for m in sizes]
    # the oracle is batched, so instances are grouped by size
    refs = {}
    for m in np.unique(sizes):
        idx = np.flatnonzero(sizes == m)
        vals = oracles.dpr1_eigvals(np.array([cases[i][0] for i in idx]), np.array([cases[i][1] for i in idx]))
        refs.update(zip(idx.tolist(), np.sort(vals, axis=1)))
    for i, (a, eps) in enumerate(cases):
        rep = secular_eigen(DiagPlusRankOne(a, eps))
        scale = 1.0 + a.sum() + float(np.max(eps * a))
        worst = max(worst, float(np.max(np.abs(rep.eigenvalues - refs[i]))) / scale)
        c = rep.certificate
        certs &= c["interlacing"] and c["row_sum"] and c["perron_positive"]
    clusters = [
        (np.array([1.0, 1.0]), np.array([1.0, 1.0]), np.array([1.0, 3.0])),
        (np.array([2.0, 1.0, 1.0]), np.array([0.5, 1.0, 1.0]), None),
        (np.array([1.0, 2.0, 0.5, 4.0]), np.array([2.0, 1.0, 4.0, 0.5]), None),
        (np.array([1.0, 1.0, 1.0]), np.array([3.0, 3.0, 3.0]), np.array([3.0, 3.0, 6.0])),
    ]
    cluster_ok = True
    cluster_worst = 0.0
    for a, eps, exact in clusters:
        rep = secular_eigen(DiagPlusRankOne(a, eps))
        ref = np.sort(oracles.dpr1_eigvals(a, eps)) if exact is None else exact
        err = float(np.max(np.abs(rep.eigenvalues - ref)))
        cluster_worst = max(cluster_worst, err)
        cluster_ok &= err < 1e-10 and len(rep.certificate["clusters"]) > 0
        A = DiagPlusRankOne(a, eps).matrix()
        res = np.linalg.norm(A @ rep.eigenvectors - rep.eigenvectors * rep.eigenvalues)
        cluster_ok &= bool(res < 1e-10 * (1 + a.sum()))
    checks = {"oracle_agreement": worst < 1e-10, "certificates": bool(certs), "clusters": bool(cluster_ok)}
    return checks, {"worst_relative_deviation": worst, "cluster_worst": cluster_worst}


# 4 ---------------------------------------------------------------------------

def c4_lambda_monotone(ctx):
    rng = ctx.rng(4)
    tol = ctx.tol(1e-9)
    mono, worst = True, -math.inf
    fd_worst = 0.0
    for spec in (SYM2, ASYM):
        thr = blowup_threshold(spec)
        for _ in range(50):
            Y0 = rng.uniform(0.02, 1.2, size=2) * thr
            tr = integrate_u(spec, Y0, 1.0, (0.0, 30.0), tol=tol)
            ok, w = _mono_ok(tr.lambda_bar())
            mono &= ok
            worst = max(worst, w)
            for Y in tr.Y[:: max(1, len(tr.Y) // 5)]:
                if np.any(Y <= 1e-3) or np.any(Y > 5 * thr):
                    continue
                G = vector_field(spec, Y)
                h = 1e-4 / max(1.0, float(np.max(np.abs(G / Y))))
                fd = (lambda_bar(spec, Y + h * G) - lambda_bar(spec, Y - h * G)) / (2 * h)
                ex = lambda_bar_rate(spec, Y)
                fd_worst = max(fd_worst, abs(fd - ex) / max(abs(ex), 1e-12 * abs(lambda_bar(spec, Y))))
    rate = float(lambda_bar_rate(SYM2, np.array([1.0, 1.0])))
    checks = {"nonincreasing": bool(mono), "rate_vs_finite_difference": fd_worst < 1e-6,
              "rate_at_11": abs(rate + 0.4) < 1e-12}
    return checks, {"worst_relative_increase": worst, "fd_worst": fd_worst, "rate_at_11": rate}


# 5 ---------------------------------------------------------------------------

def _tau_grid(end, count=300):
    return np.concatenate([[0.0], np.geomspace(1e-3, end, count)])


def c5_basin_bounds(ctx):
    rng = ctx.rng(5)
    tol = ctx.tol(1e-10)
    grid = _tau_grid(1e4)
    i3 = int(np.argmin(np.abs(grid - 1e3)))
    bounds, mono, growth, limit = True, True, 0.0, 0.0
    for _ in range(20):
        a0 = float(rng.uniform(0.05, 0.3))
        b0 = rng.uniform(1.0, 2.0, size=2)
        tr = integrate_tau(SYM2, CircleState(a0, tuple(b0)), (0.0, 1e4), tol, t_eval=grid)
        tau = tr.tau[:, None]
        b = tr.b
        slack = 1e-9 * (1 + b)
        bounds &= bool(np.all(2 * tau + b0 <= b + slack) and np.all(b <= 4 * tau + b0 + slack))
        mono &= bool(np.all(np.diff(tr.a) > 0))
        growth = max(growth, tr.a[-1] / tr.a[i3] - 1.0)
        limit = max(limit, float(np.max(np.abs(b[-1] / 1e4 - 4.0))) / 4.0)
    checks = {"b_bounds": bool(bounds), "a_increasing": bool(mono), "a_saturates": growth < 0.01,
              "b_over_tau": limit < 0.01}
    return checks, {"max_a_growth_last_decade": growth, "max_b_over_tau_rel_err": limit}


# 6 ---------------------------------------------------------------------------

def c6_dual_clock(ctx):
    tol = ctx.tol(1e-9)
    devs = {}
    for name, spec, state in (("SYM2", SYM2, CircleState(0.5, (1.0, 1.5))),
                              ("ASYM", ASYM, CircleState(0.4, (1.2, 0.9)))):
        devs[name] = crosscheck_clocks(spec, state, 100.0, tol).max_rel_deviation
    xi = find_xi(SYM2)
    E = float(energy(SYM2, xi))
    ray = integrate_tau(SYM2, CircleState(1.0, tuple(1.0 / xi)), (0.0, 1e4), ctx.tol(1e-10))
    ray_err = abs(ray.a[-1] / ray.tau[-1] / E - 1.0)
    checks = {f"crosscheck_{k}": v < 100 * tol for k, v in devs.items()}
    checks["einstein_ray"] = ray_err < 1e-3
    return checks, {"deviations": devs, "tol": tol, "ray_rel_err": ray_err}


# 7 ---------------------------------------------------------------------------

def c7_unstable(ctx):
    tol = ctx.tol(1e-10)
    r1 = trace_unstable(SYM2, 1e-6, tol)
    r2 = trace_unstable(SYM2, 1e-7, tol)
    T_rel = abs(r1.T_singular - r2.T_singular) / r2.T_singular
    lim_rel = max((abs(r1.limits[k]["measured"] - r2.limits[k]["measured"]) / abs(r2.limits[k]["measured"])
                   for k in r1.limits), default=math.inf)
    a_lim = r1.limits.get("a/(T+tau)", {})
    b_errs = [r1.limits[k]["max_rel_err"] for k in r1.limits if k.startswith("b_")]
    checks = {
        "T_finite": r1.checks["T_finite"],
        "eps_robust_T": T_rel < 1e-3,
        "eps_robust_limits": lim_rel < 5e-3,
        "a_limit_32_9": bool(a_lim) and abs(a_lim["expected"] - 32 / 9) < 1e-12 and a_lim["max_rel_err"] < 0.01,
        "b_limit_8_3": bool(b_errs) and max(b_errs) < 0.01,
        "einstein_residual": r1.einstein_residual < 1e-6,
        "opposite_blowup": r1.checks["opposite_blowup_in_minus"],
        "forward_origin": r1.checks["forward_capture_origin"],
        "forward_b_over_tau": all(v["rel_err"] < 0.01 for v in r1.forward_limits.values()),
        "lambda_bar": r1.checks["lambda_bar_nonincreasing"],
    }
    return checks, {"T1": r1.T_singular, "T1_eps_over_10": r2.T_singular, "T_rel": T_rel,
                    "limits": r1.limits, "einstein_residual": r1.einstein_residual}


# 8 ---------------------------------------------------------------------------

def c8_gamma(ctx):
    tol = ctx.tol(1e-10)
    reps = [trace_gamma(SYM2, k, 1e-6, tol) for k in (0, 1)]
    checks = {}
    for k, r in enumerate(reps, start=1):
        a = r.limits.get("a/(T+tau)")
        b = r.limits.get(f"b_{k}/(T+tau)")
        checks[f"gamma{k}_reaches_v"] = r.checks["backward_reaches_v"]
        checks[f"gamma{k}_a_limit"] = a is not None and abs(a["expected"] - 4) < 1e-12 and a["max_rel_err"] < 0.01
        checks[f"gamma{k}_b_limit"] = b is not None and abs(b["expected"] - 2) < 1e-12 and b["max_rel_err"] < 0.01
        checks[f"gamma{k}_b_other_positive"] = r.extra["b_other_lower_bound"] > 0
        checks[f"gamma{k}_sub_bundle_einstein"] = r.einstein_residual < 1e-10
        checks[f"gamma{k}_monotonicity"] = r.checks["opposite_monotonicity"]
    mirror = abs(reps[0].T_singular - reps[1].T_singular) / reps[0].T_singular
    mirror = max(mirror, abs(reps[0].extra["b_other_lower_bound"] - reps[1].extra["b_other_lower_bound"])
                 / reps[0].extra["b_other_lower_bound"])
    checks["mirror_symmetry"] = mirror < 1e-8
    return checks, {"T": [r.T_singular for r in reps], "b_other_lower_bound":
                    [r.extra["b_other_lower_bound"] for r in reps], "mirror_rel_diff": mirror}


# 9 ---------------------------------------------------------------------------

def _omega_minus_starts(spec, count=100):
    ax = np.linspace(0.05, 4.0, 25)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    keep = [y for y in pts if classify_region(spec, y).interior_minus]
    step = max(1, len(keep) // count)
    return np.array(keep[::step][:count])


def c9_regions(ctx):
    tol = ctx.tol(1e-9)
    plus = omega_plus_grid(SYM2)
    captured = 0
    invariant = True
    for Y0 in plus:
        tr = integrate_u(SYM2, Y0, 1.0, (0.0, 1e8), tol=tol, expected_region="plus")
        ev = tr.event("FixedPointCapture")
        invariant &= tr.termination != Termination.REGION_EXIT
        captured += bool(ev is not None and ev.payload["point"] == "origin")
    minus = _omega_minus_starts(SYM2)
    A = (SYM2.n_arr + 1.0) * SYM2.q2
    B = 2.0 * SYM2.p_arr
    blown, bounded = 0, 0
    margin = []
    for Y0 in minus:
        tr = integrate_u(SYM2, Y0, 1.0, (0.0, 1e3), tol=tol, expected_region="minus")
        ev = tr.event("BlowUp")
        if ev is None:
            continue
        blown += 1
        i = int(np.argmax(tr.Y[-1]))
        above = np.flatnonzero(tr.Y[:, i] > B[i] / A[i])
        j = int(above[0])
        u_cmp = oracles.comparison_blowup_time(A[i], B[i], tr.u[j], tr.Y[j, i], ev.payload["cap"])
        margin.append(u_cmp - ev.u)
        bounded += ev.u <= u_cmp + 1e-9 * max(1.0, abs(u_cmp))
    checks = {"plus_capture_origin": captured == len(plus), "plus_invariant": bool(invariant),
              "minus_blowup": blown == len(minus) and len(minus) > 0,
              "blowup_time_bound": bounded == blown}
    return checks, {"plus_starts": len(plus), "captured": captured, "minus_starts": len(minus),
                    "blown_up": blown, "min_comparison_margin": min(margin) if margin else None}


# 10 --------------------------------------------------------------------------

def _tor_start(c0):
    # admissibility needs tr H · Σ 1/b < 1/(c0 m)
    eps = 0.5 / (c0 * TOR.m * TOR.r * TOR.m)
    return TorusState(H=eps * np.eye(TOR.r), b=np.ones(TOR.m))


def c10_rank_r(ctx):
    tol = ctx.tol(1e-10)
    c0 = coupling_constants(TOR).c0 * ctx.c0_scale
    st = _tor_start(c0)
    grid = _tau_grid(1e3)
    tr = integrate_torus(TOR, st, (0.0, 1e3), tol, t_eval=grid)
    mon = torus_monitors(tr)
    i2 = int(np.argmin(np.abs(tr.tau - 1e2)))
    drift = tr.a_hat[-1] / tr.a_hat[i2] - 1.0
    ric = min(ricci(TOR, (h, b)).min_eigenvalue for h, b in zip(tr.H, tr.b))
    checks = dict(mon.checks)
    checks["admissible"] = tr.admissible
    checks["reached_end"] = tr.termination == Termination.REACHED_SPAN
    checks["a_hat_saturates"] = drift < 0.02
    checks["ricci_positive"] = ric > 0
    return checks, {"a_hat_drift": drift, "min_ricci": ric, "monitor_worst": mon.worst}


# 11 --------------------------------------------------------------------------

def c11_collapse(ctx):
    tol = ctx.tol(1e-10)
    grid = _tau_grid(1e4)
    basin = integrate_tau(SYM2, CircleState(0.1, (1.0, 1.0)), (0.0, 1e4), tol, t_eval=grid)
    s_basin = loglog_slope(*volume_proxy(SYM2, basin), (1e3, 1e4))
    tor = integrate_torus(TOR, _tor_start(coupling_constants(TOR).c0), (0.0, 1e4), tol, t_eval=grid)
    s_tor = loglog_slope(*volume_proxy(TOR, tor), (1e3, 1e4))
    xi = find_xi(SYM2)
    ray = integrate_tau(SYM2, CircleState(1.0, tuple(1.0 / xi)), (0.0, 1e4), tol, t_eval=grid)
    s_ray = loglog_slope(*volume_proxy(SYM2, ray), (1e3, 1e4))
    checks = {"basin_slope": abs(s_basin + 0.5) <= 0.05, "torus_slope": abs(s_tor + 1.0) <= 0.1,
              "ray_slope": abs(s_ray) <= 0.02}
    return checks, {"basin": s_basin, "torus": s_tor, "ray": s_ray}


# 12 --------------------------------------------------------------------------

def c12_classification(ctx):
    tol = ctx.tol(1e-10)
    starts = stable_directions(SYM3, 50)
    first = [classify_backward_limit(SYM3, y, tol) for y in starts]
    second = [classify_backward_limit(SYM3, y, tol / 2) for y in starts]
    tags = [r.tag for r in first]
    checks = {
        "all_captured": all(r.status == "captured" for r in first),
        "never_origin_or_xi": all(t not in ("origin", "xi") and t is not None for t in tags),
        "stable_under_tol_halving": all(a.tag == b.tag for a, b in zip(first, second)),
    }
    counts = {}
    for t in tags:
        key = "v_" + "".join(str(i + 1) for i in t) if isinstance(t, tuple) else str(t)
        counts[key] = counts.get(key, 0) + 1
    return checks, {"counts": dict(sorted(counts.items()))}


# 13 --------------------------------------------------------------------------

def c13_certificates(ctx):
    c0 = coupling_constants(TOR).c0 * ctx.c0_scale
    ok, worst = c0_certificate(TOR, ctx.rng(13), 4000, c0)
    bok, bworst = basin_certificate(SYM2, ctx.rng(14), 4000)
    return {"c0_bound": bool(ok), "basin_radius": bool(bok)}, {"c0": c0, "c0_worst_ratio": worst,
                                                                 "basin_worst_ratio": bworst}


CRITERIA = {
    "1": ("einstein-point", c1_einstein_point, 0.1),
    "2": ("spectrum", c2_spectrum, 2.0),
    "3": ("secular-vs-oracle", c3_secular, 5.0),
    "4": ("lambda-bar-monotone", c4_lambda_monotone, 10.0),
    "5": ("basin-bounds", c5_basin_bounds, 10.0),
    "6": ("dual-clock", c6_dual_clock, 5.0),
    "7": ("unstable-ancient", c7_unstable, 10.0),
    "8": ("gamma-curves", c8_gamma, 10.0),
    "9": ("region-dynamics", c9_regions, 30.0),
    "10": ("rank-r-flow", c10_rank_r, 20.0),
    "11": ("collapse-exponents", c11_collapse, 10.0),
    "12": ("m3-classification", c12_classification, 60.0),
    "c0": ("basin-constant-certificate", c13_certificates, 5.0),
}


def run_criterion(key, ctx=None) -> CriterionResult:
    ctx = ctx or Context()
    name, fn, budget = CRITERIA[key]
    t0 = time.perf_counter()
    try:
        checks, detail = fn(ctx)
    except Exception as exc:  # a crash is a failed criterion, reported with its cause
        checks, detail = {"completed": False}, {"error": f"{type(exc).__name__}: {exc}"}
    elapsed = time.perf_counter() - t0
    checks = {k: bool(v) for k, v in checks.items()}
    if ctx.timings:
        checks["runtime"] = elapsed < budget
    return CriterionResult(key, name, all(checks.values()), checks, detail, elapsed, budget)


def run_suite(keys=None, ctx=None, threads=1):
    """Run criteria (all by default); results come back in the order requested."""
    ctx = ctx or Context()
    keys = list(CRITERIA) if keys is None else list(keys)
    unknown = [k for k in keys if k not in CRITERIA]
    if unknown:
        raise KeyError(f"unknown criteria: {unknown}")
    if threads <= 1:
        return [run_criterion(k, ctx) for k in keys]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_criterion, keys, [ctx] * len(keys)))
