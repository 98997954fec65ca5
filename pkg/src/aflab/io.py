"""CSV and JSON writers.  Every float is written with 17 significant digits."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from pathlib import Path

import numpy as np

from .circle import deficit, energy, lambda_bar

__all__ = [
    "fmt",
    "to_jsonable",
    "dump_json",
    "write_json",
    "write_csv",
    "circle_table",
    "torus_table",
    "trajectory_record",
    "CSV_SCHEMAS",
    "schema_document",
]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def to_jsonable(x):
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, enum.Enum):
        return x.value
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        # JSON has no inf/nan; keep them as strings rather than emit invalid JSON
        return x if math.isfinite(x) else fmt(x)
    return x


def _float_repr(x):
    return "%.17g" % x


def dump_json(obj) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits."""
    data = to_jsonable(obj)
    return _dumps(data, 0) + "\n"


def _dumps(x, indent):
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(x, dict):
        if not x:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_dumps(x[k], indent + 1)}" for k in sorted(x)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(x, list):
        if not x:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in x):
            return "[" + ", ".join(_dumps(v, indent) for v in x) + "]"
        return "[\n" + ",\n".join(pad + _dumps(v, indent + 1) for v in x) + "\n" + end + "]"
    if isinstance(x, float):
        return _float_repr(x)
    return json.dumps(x)


def write_json(path, obj):
    Path(path).write_text(dump_json(obj))


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def circle_columns(m):
    return (["u", "tau", "a"] + [f"b_{i}" for i in range(1, m + 1)]
            + [f"Y_{i}" for i in range(1, m + 1)] + ["E"]
            + [f"F_{i}" for i in range(1, m + 1)] + ["lambda_bar", "region_flags"])


def circle_table(traj, extra=None):
    """Header and rows of an r = 1 trajectory.  ``extra`` maps column → per-sample values."""
    spec = traj.spec
    m = spec.m
    Y = traj.Y
    E = energy(spec, Y)
    F = deficit(spec, Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = traj.a
        b = a[:, None] / Y
    lam = np.full(len(Y), np.nan)
    pos = np.all(Y > 0, axis=1)
    if pos.any():
        lam[pos] = lambda_bar(spec, Y[pos])
    flags = traj.region_flags()
    header = circle_columns(m)
    extra = extra or {}
    header += list(extra)
    rows = []
    for k in range(len(Y)):
        row = [traj.u[k], traj.tau[k], a[k], *b[k], *Y[k], E[k], *F[k], lam[k], flags[k]]
        row += [extra[c][k] for c in extra]
        rows.append(row)
    return header, rows


def torus_columns(spec):
    r, m = spec.r, spec.m
    hcols = [f"H_{i}{j}" for i in range(1, r + 1) for j in range(i, r + 1)]
    return (["tau", "u_hat"] + hcols + [f"b_{i}" for i in range(1, m + 1)] + ["a_hat"]
            + [f"Y_hat_{i}" for i in range(1, m + 1)] + ["E_hat", "detH", "trHinv", "monitor_flags"])


def torus_table(traj, flags=None, extra=None):
    """Header and rows of a rank-r trajectory; ``flags`` is one string per sample."""
    spec = traj.spec
    r = spec.r
    iu = np.triu_indices(r)
    header = torus_columns(spec)
    extra = extra or {}
    header += list(extra)
    flags = flags if flags is not None else [""] * len(traj.tau)
    rows = []
    for k in range(len(traj.tau)):
        row = [traj.tau[k], traj.u_hat[k], *traj.H[k][iu], *traj.b[k], traj.a_hat[k],
               *traj.Y_hat[k], traj.E_hat[k], traj.detH[k], traj.trHinv[k], flags[k]]
        row += [extra[c][k] for c in extra]
        rows.append(row)
    return header, rows


def trajectory_record(traj, csv_name=None):
    """JSON run record: events, termination and the final state."""
    rec = {
        "clock": getattr(traj, "clock", "tau"),
        "termination": traj.termination.value,
        "tol": traj.tol,
        "samples": len(traj.tau),
        "events": [{"kind": e.kind, "u": e.u, "tau": e.tau, "payload": e.payload} for e in traj.events],
        "final": {"tau": traj.tau[-1], "b": traj.b[-1]},
    }
    if hasattr(traj, "log_a"):
        rec["final"].update({"u": traj.u[-1], "a": traj.a[-1], "Y": traj.Y[-1]})
    else:
        rec["final"].update({"u_hat": traj.u_hat[-1], "H": traj.H[-1]})
    if csv_name:
        rec["csv"] = csv_name
    return rec


CSV_SCHEMAS = {
    "trajectory.csv": {
        "description": "r = 1 trajectory, one row per accepted step",
        "columns": {
            "u": "rescaled clock, du = dτ/a",
            "tau": "backwards time τ",
            "a": "fibre coefficient",
            "b_i": "base coefficients, one column per factor",
            "Y_i": "a/b_i",
            "E": "Σ n_i q_i² Y_i²",
            "F_i": "deficits 2p_iY_i - q_i²Y_i² - E",
            "lambda_bar": "scale-invariant monotone quantity (nan off the open orthant)",
            "region_flags": "sign of each F_i as one of + 0 -",
            "ricci_min, scalar, einstein_residual": "optional curvature columns (diagnose)",
        },
    },
    "torus.csv": {
        "description": "rank-r trajectory in the τ-clock",
        "columns": {
            "tau": "backwards time τ",
            "u_hat": "accumulated ∫ dτ/tr H",
            "H_ij": "fibre Gram matrix, row-major upper triangle",
            "b_i": "base coefficients",
            "a_hat": "tr H",
            "Y_hat_i": "a_hat/b_i",
            "E_hat": "Σ Y_hat_i",
            "detH": "det H",
            "trHinv": "tr H⁻¹",
            "monitor_flags": "names of monitors failing at this sample, ';'-separated",
        },
    },
    "portrait.csv": {
        "description": "phase-portrait grid over [0, Ymax]^m",
        "columns": {
            "Y_i": "grid coordinates",
            "sign_F_i": "-1, 0, 1",
            "region": "plus, minus or mixed",
            "G_norm": "|Y_i F_i| Euclidean norm",
            "lambda_bar": "monotone quantity (nan on the boundary)",
            "basin": "origin, blowup, xi or undecided",
        },
    },
    "shoot_*.csv": {
        "description": "traced branch, trajectory.csv layout",
        "columns": {},
    },
}


def schema_document():
    return {"format": "csv, header row, floats with 17 significant digits", "files": CSV_SCHEMAS}
