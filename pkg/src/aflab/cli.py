"""Command-line front end: ``aflab <command> --scenario file.json``.

Exit codes: 0 success, 2 invalid spec or scenario, 3 a checked property
failed, 4 the integrator stopped on step-size underflow.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as aio
from .acceptance import CRITERIA, Context, run_suite
from .circle import (
    CircleState,
    classify_region,
    deficit,
    find_xi,
    fixed_points,
    lambda_bar,
    state_from_Y,
)
from .errors import AflabError, DomainError, InvalidSpec, NotPositiveDefinite, ScenarioError, ShootingDrift
from .geometry import einstein_fit, loglog_slope, ricci, type_one_product, volume_proxy
from .integrator import Termination, integrate_tau, integrate_u
from .portrait import GridTooLarge, portrait_grid
from .scenario import load_scenario
from .shooting import classify_backward_limit, stable_directions, trace_gamma, trace_unstable
from .spectral import vtheta_spectrum, xi_spectrum
from .torus import TorusState, integrate_torus, torus_monitors

EXIT_OK, EXIT_INVALID, EXIT_ASSERT, EXIT_UNDERFLOW = 0, 2, 3, 4
DEFAULT_SUBSET_CAP = 2**10


class Run:
    """Per-invocation context: scenario, output directory, seed and worker count."""

    def __init__(self, scenario, out, seed, threads):
        self.sc = scenario
        self.spec = scenario.spec
        self.out = Path(out)
        self.seed = seed
        self.threads = threads

    def path(self, name):
        return self.out / f"{self.sc.prefix}{name}"

    def write_json(self, name, obj):
        aio.write_json(self.path(name), obj)
        return self.path(name).name

    def write_csv(self, name, header, rows):
        aio.write_csv(self.path(name), header, rows)
        aio.write_json(self.path("schema.json"), aio.schema_document())
        return self.path(name).name


def _theta_label(theta):
    return [i + 1 for i in theta]


def _tag_label(tag):
    return tag if isinstance(tag, str) else "v_" + "".join(str(i + 1) for i in tag)


def _require_r1(spec, what):
    if spec.r != 1:
        raise ScenarioError(f"{what} needs an r = 1 bundle")


def _circle_initial(run):
    spec = run.spec
    init = run.sc.get("initial", {})
    if init.get("einstein_ray"):
        return state_from_Y(find_xi(spec), init.get("a", 1.0))
    if "Y" in init:
        Y = np.asarray(init["Y"], dtype=float)
        if np.any(Y <= 0):
            raise ScenarioError("initial.Y must be positive to define (a, b); use the u clock fields")
        return state_from_Y(Y, init.get("a", 1.0))
    if "b" in init:
        return CircleState(init.get("a", 1.0), tuple(init["b"]))
    raise ScenarioError("flow needs initial.Y, initial.b or initial.einstein_ray")


# commands --------------------------------------------------------------------

def cmd_fixed_points(run):
    spec = run.spec
    _require_r1(spec, "fixed-points")
    cap = run.sc.get("max_subsets", DEFAULT_SUBSET_CAP)
    fps = fixed_points(spec, cap)
    if fps.truncated:
        print(f"warning: SubsetCapExceeded: enumerated only {cap} subsets", file=sys.stderr)
    points = []
    for tag, Y in fps.all_points():
        G = Y * deficit(spec, Y)
        points.append({
            "tag": _tag_label(tag),
            "theta": _theta_label(tag) if isinstance(tag, tuple) else None,
            "Y": Y, "residual": float(np.linalg.norm(G)),
            "region": classify_region(spec, Y).flags,
        })
    run.write_json("fixed_points.json", {"bundle": spec.to_dict(), "truncated": fps.truncated,
                                         "subset_cap": cap, "points": points})
    for p in points:
        print(p["tag"], " ".join(aio.fmt(x) for x in p["Y"]))
    return EXIT_OK


def _spectrum_dict(rep):
    return {"eigenvalues": rep.eigenvalues, "eigenvectors": rep.eigenvectors,
            "brackets": [list(b) if b is not None else None for b in rep.brackets],
            "perron_vector": rep.perron_vector, "certificate": rep.certificate,
            "n_negative": rep.n_negative, "n_positive": rep.n_positive}


def cmd_spectrum(run):
    spec = run.spec
    _require_r1(spec, "spectrum")
    out = {"bundle": spec.to_dict(), "xi": find_xi(spec), "xi_spectrum": _spectrum_dict(xi_spectrum(spec))}
    thetas = run.sc.theta or []
    out["v_theta"] = [{"theta": _theta_label(t), **_spectrum_dict(vtheta_spectrum(spec, t))} for t in thetas]
    run.write_json("spectrum.json", out)
    print("xi", " ".join(aio.fmt(x) for x in out["xi_spectrum"]["eigenvalues"]))
    return EXIT_OK


def _circle_flow(run):
    spec = run.spec
    tol = run.sc.get("tol", 1e-9)
    clock = run.sc.get("clock", "u")
    if clock == "u":
        init = run.sc.get("initial", {})
        if "Y" in init and not init.get("einstein_ray"):
            Y0, a0 = np.asarray(init["Y"], dtype=float), init.get("a", 1.0)
        else:
            st = _circle_initial(run)
            Y0, a0 = st.Y, st.a
        return integrate_u(spec, Y0, a0, tuple(run.sc.get("u_span", (0.0, 100.0))), tol=tol)
    st = _circle_initial(run)
    t_eval = run.sc.get("sample_taus")
    return integrate_tau(spec, st, tuple(run.sc.get("tau_span", (0.0, 100.0))), tol,
                         t_eval=np.asarray(t_eval) if t_eval else None)


def _lambda_checks(traj):
    Y = traj.Y
    pos = np.all(Y > 0, axis=1)
    lam = lambda_bar(traj.spec, Y[pos]) if pos.any() else np.array([])
    d = np.diff(lam)
    ok = bool(np.all(d <= 1e-9 * np.abs(lam[1:]))) if len(d) else True
    a_ok = bool(np.all(np.diff(traj.log_a) >= -1e-12 * np.maximum(1.0, np.abs(traj.log_a[1:]))))
    return {"lambda_bar_nonincreasing": ok, "a_nondecreasing": a_ok}


def _exit_for(termination, checks):
    if termination == Termination.STEP_UNDERFLOW:
        return EXIT_UNDERFLOW
    return EXIT_OK if all(checks.values()) else EXIT_ASSERT


def cmd_flow(run):
    _require_r1(run.spec, "flow")
    traj = _circle_flow(run)
    checks = _lambda_checks(traj)
    csv_name = run.write_csv("trajectory.csv", *aio.circle_table(traj))
    rec = aio.trajectory_record(traj, csv_name)
    rec["checks"] = checks
    run.write_json("flow.json", rec)
    print(f"{traj.termination.value} samples={len(traj)} checks={'ok' if all(checks.values()) else 'FAILED'}")
    return _exit_for(traj.termination, checks)


def _torus_initial(run):
    spec = run.spec
    init = run.sc.get("initial", {})
    if "H" not in init or "b" not in init:
        raise ScenarioError("torus-flow needs initial.H and initial.b")
    return TorusState(H=np.asarray(init["H"], dtype=float), b=np.asarray(init["b"], dtype=float))


def _torus_run(run):
    st = _torus_initial(run)
    t_eval = run.sc.get("sample_taus")
    return integrate_torus(run.spec, st, tuple(run.sc.get("tau_span", (0.0, 100.0))),
                           run.sc.get("tol", 1e-10), t_eval=np.asarray(t_eval) if t_eval else None)


def _monitor_flags(mon, n):
    names = sorted(mon.per_sample)
    return [";".join(k for k in names if not mon.per_sample[k][i]) for i in range(n)]


def cmd_torus_flow(run):
    traj = _torus_run(run)
    mon = torus_monitors(traj)
    csv_name = run.write_csv("torus.csv", *aio.torus_table(traj, _monitor_flags(mon, len(traj))))
    rec = aio.trajectory_record(traj, csv_name)
    rec.update({"admissible": traj.admissible, "monitors": mon.checks, "monitor_worst": mon.worst})
    run.write_json("torus_flow.json", rec)
    print(f"{traj.termination.value} samples={len(traj)} admissible={traj.admissible} "
          f"monitors={'ok' if mon.ok else 'FAILED: ' + ','.join(mon.failed())}")
    return _exit_for(traj.termination, mon.checks)


def _classify_one(args):
    spec, Y0, tol = args
    return classify_backward_limit(spec, Y0, tol)


def cmd_shoot(run):
    spec = run.spec
    _require_r1(spec, "shoot")
    sh = run.sc.get("shoot")
    if sh is None:
        raise ScenarioError("shoot needs a 'shoot' block")
    tol = run.sc.get("tol", 1e-10)
    eps = sh.get("eps", 1e-6)
    branch = sh["branch"]
    if branch == "classify":
        if "starts" in sh:
            starts = [np.asarray(s, dtype=float) for s in sh["starts"]]
            if any(len(s) != spec.m for s in starts):
                raise ScenarioError(f"every start needs {spec.m} entries")
        else:
            if spec.m != 3:
                raise ScenarioError("sampled stable directions need m = 3; give 'starts' instead")
            starts = stable_directions(spec, sh.get("directions", 50), eps)
        jobs = [(spec, y, tol) for y in starts]
        if run.threads > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=run.threads) as pool:
                results = list(pool.map(_classify_one, jobs))
        else:
            results = [_classify_one(j) for j in jobs]
        rows = [{"start": y, "status": r.status, "tag": _tag_label(r.tag) if r.tag else None,
                 "closest": _tag_label(r.closest), "distance": r.distance, "u_end": r.u_end,
                 "steps": r.steps, "note": r.note} for y, r in zip(starts, results)]
        ok = all(r.status == "captured" for r in results)
        run.write_json("shoot.json", {"branch": "classify", "results": rows, "all_captured": ok})
        for row in rows:
            print(row["status"], row["tag"] or row["closest"])
        return EXIT_OK if ok else EXIT_ASSERT
    if branch == "unstable":
        rep = trace_unstable(spec, eps, tol)
    else:
        if "k" not in sh:
            raise ScenarioError("gamma branch needs k")
        rep = trace_gamma(spec, sh["k"] - 1, eps, tol)
    files = {"backward": run.write_csv("shoot_backward.csv", *aio.circle_table(rep.backward)),
             "forward": run.write_csv("shoot_forward.csv", *aio.circle_table(rep.forward))}
    doc = rep.to_dict()
    if isinstance(rep.backward_limit_point, tuple):
        doc["backward_limit_point"] = _tag_label(rep.backward_limit_point)
    doc["trajectories"] = files
    run.write_json("shoot.json", doc)
    print(f"{rep.branch} T={aio.fmt(rep.T_singular)} checks={'ok' if rep.ok else 'FAILED'}")
    return EXIT_OK if rep.ok else EXIT_ASSERT


def cmd_diagnose(run):
    spec = run.spec
    K = run.sc.get("base_curv")
    offset = run.sc.get("time_offset", 0.0)
    if spec.r == 1:
        if run.sc.get("clock", "tau") != "tau":
            raise ScenarioError("diagnose integrates in the tau clock")
        traj = _circle_flow_tau(run)
    else:
        traj = _torus_run(run)
    n = len(traj.tau)
    rmin, scal, resid = np.empty(n), np.empty(n), np.empty(n)
    for k in range(n):
        st = (traj.H[k], traj.b[k])
        snap = ricci(spec, st, K)
        rmin[k] = snap.min_eigenvalue
        scal[k] = snap.scalar
        resid[k] = einstein_fit(spec, st)[1]
    _, typeI = type_one_product(spec, traj, K, offset)
    t_v, V = volume_proxy(spec, traj, offset)
    t_end = float(traj.tau[-1] + offset)
    try:
        slope = loglog_slope(t_v + offset, V, (t_end / 10.0, t_end))
    except ValueError:
        slope = None
    extra = {"ricci_min": rmin, "scalar": scal, "einstein_residual": resid, "type_one": typeI}
    if spec.r == 1:
        csv_name = run.write_csv("trajectory.csv", *aio.circle_table(traj, extra))
    else:
        csv_name = run.write_csv("torus.csv", *aio.torus_table(traj, None, extra))
    report = {"min_ricci_eigenvalue": float(rmin.min()), "type_one_running_max": float(np.max(typeI)),
              "volume_slope_last_decade": slope, "samples": n, "csv": csv_name,
              "termination": traj.termination.value}
    run.write_json("diagnose.json", report)
    print(f"min_ricci={aio.fmt(report['min_ricci_eigenvalue'])} typeI_max={aio.fmt(report['type_one_running_max'])}"
          f" volume_slope={aio.fmt(slope) if slope is not None else 'n/a'}")
    return EXIT_UNDERFLOW if traj.termination == Termination.STEP_UNDERFLOW else EXIT_OK


def _circle_flow_tau(run):
    st = _circle_initial(run)
    span = tuple(run.sc.get("tau_span", (0.0, 100.0)))
    t_eval = run.sc.get("sample_taus")
    if t_eval is None and span[1] > span[0]:
        t_eval = np.concatenate([[span[0]], span[0] + np.geomspace(1e-3, span[1] - span[0], 300)])
    return integrate_tau(run.spec, st, span, run.sc.get("tol", 1e-10), t_eval=np.asarray(t_eval))


def cmd_portrait(run):
    spec = run.spec
    cfg = run.sc.get("portrait")
    if cfg is None:
        raise ScenarioError("portrait needs a 'portrait' block")
    try:
        P = portrait_grid(spec, cfg["ymax"], cfg["shape"], threads=run.threads,
                          u_max=cfg.get("u_max", 60.0), h=cfg.get("step", 0.02),
                          basins=cfg.get("basins", True))
    except GridTooLarge as exc:
        raise ScenarioError(str(exc)) from None
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    csv_name = run.write_csv("portrait.csv", *P.table())
    counts = {}
    for reg, basin in zip(P.region, P.basin):
        key = f"{reg}/{basin}"
        counts[key] = counts.get(key, 0) + 1
    run.write_json("portrait.json", {"shape": list(P.shape), "ymax": cfg["ymax"], "csv": csv_name,
                                     "counts": dict(sorted(counts.items()))})
    print(f"grid={'x'.join(map(str, P.shape))} points={len(P.Y)}")
    return EXIT_OK


def cmd_verify(run):
    cfg = run.sc.get("verify", {})
    keys = cfg.get("criteria") or list(CRITERIA)
    unknown = [k for k in keys if k not in CRITERIA]
    if unknown:
        raise ScenarioError(f"unknown criteria {unknown}; known: {list(CRITERIA)}")
    ctx = Context(seed=run.seed, tol_scale=cfg.get("tol_scale", 1.0), c0_scale=cfg.get("c0_scale", 1.0))
    results = run_suite(keys, ctx, threads=run.threads)
    for r in results:
        print(r.line())
    # wall-clock times stay on stdout so the report file is reproducible
    doc = {"seed": run.seed, "tol_scale": ctx.tol_scale, "c0_scale": ctx.c0_scale,
           "all_passed": all(r.passed for r in results),
           "criteria": [{k: v for k, v in r.to_dict().items() if k != "elapsed"} for r in results]}
    run.write_json("verify.json", doc)
    return EXIT_OK if doc["all_passed"] else EXIT_ASSERT


COMMANDS = {
    "fixed-points": cmd_fixed_points,
    "spectrum": cmd_spectrum,
    "flow": cmd_flow,
    "torus-flow": cmd_torus_flow,
    "shoot": cmd_shoot,
    "diagnose": cmd_diagnose,
    "portrait": cmd_portrait,
    "verify": cmd_verify,
}


def _threads(value):
    if value is not None:
        return value
    env = os.environ.get("AFLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            print(f"warning: ignoring AFLAB_THREADS={env!r}", file=sys.stderr)
    return 1


def build_parser():
    ap = argparse.ArgumentParser(prog="aflab", description="Connection-metric flow laboratory.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--scenario", help="scenario JSON file (optional for verify)")
    ap.add_argument("--out", default=".", help="output directory (created if missing)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=None, help="worker processes (default AFLAB_THREADS or 1)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.scenario is None:
            if args.command != "verify":
                raise ScenarioError(f"{args.command} needs --scenario")
            scenario = load_scenario({}, require_bundle=False)
        else:
            scenario = load_scenario(args.scenario, require_bundle=args.command != "verify")
        Path(args.out).mkdir(parents=True, exist_ok=True)
        run = Run(scenario, args.out, args.seed, _threads(args.threads))
        return COMMANDS[args.command](run)
    except (InvalidSpec, ScenarioError, NotPositiveDefinite, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ShootingDrift as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except AflabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
