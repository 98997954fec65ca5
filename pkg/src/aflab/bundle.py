"""Combinatorial bundle data (m, r, n, p, Q) and derived coupling constants."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, NotPositiveDefinite

__all__ = [
    "BundleSpec",
    "ValidationReport",
    "CouplingConstants",
    "validate",
    "coupling_constants",
    "admissible_initial_r",
    "integer_rank",
    "c0_certificate",
    "basin_certificate",
    "load_spec",
    "EXAMPLES",
]


@dataclass(frozen=True)
class BundleSpec:
    """Bundle over m Kähler–Einstein factors with an r-torus fibre.

    Q has r rows (torus circles) and m columns (base factors).
    Construction only normalizes types; use :func:`validate` to check
    non-degeneracy.
    """

    m: int
    r: int
    n: tuple
    p: tuple
    Q: tuple

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(x) for x in self.n))
        object.__setattr__(self, "p", tuple(int(x) for x in self.p))
        object.__setattr__(self, "Q", tuple(tuple(int(x) for x in row) for row in self.Q))

    @classmethod
    def from_dict(cls, data: dict) -> "BundleSpec":
        keys = {"m", "r", "n", "p", "Q"}
        extra = set(data) - keys
        missing = keys - set(data)
        if extra or missing:
            raise InvalidSpec(
                [f"unknown key {k!r}" for k in sorted(extra)]
                + [f"missing key {k!r}" for k in sorted(missing)]
            )
        def integral(x):
            return isinstance(x, (int, np.integer)) or (isinstance(x, float) and x.is_integer())

        flat = [data["m"], data["r"]]
        try:
            flat += list(data["n"]) + list(data["p"]) + [x for row in data["Q"] for x in row]
        except TypeError as exc:
            raise InvalidSpec([f"malformed field: {exc}"]) from None
        bad = [x for x in flat if isinstance(x, bool) or not integral(x)]
        if bad:
            raise InvalidSpec([f"non-integer entries: {bad}"])
        try:
            return cls(m=int(data["m"]), r=int(data["r"]), n=data["n"], p=data["p"], Q=data["Q"])
        except (TypeError, ValueError) as exc:
            raise InvalidSpec([f"malformed field: {exc}"]) from None

    def to_dict(self) -> dict:
        return {"m": self.m, "r": self.r, "n": list(self.n), "p": list(self.p),
                "Q": [list(row) for row in self.Q]}

    @property
    def dim(self) -> int:
        """Real dimension r + Σ 2n_i of the total space."""
        return self.r + 2 * sum(self.n)

    # numpy views, computed once per (hashable, frozen) spec
    @cached_property
    def n_arr(self) -> np.ndarray:
        return np.asarray(self.n, dtype=float)

    @cached_property
    def p_arr(self) -> np.ndarray:
        return np.asarray(self.p, dtype=float)

    @cached_property
    def Q_arr(self) -> np.ndarray:
        return np.asarray(self.Q, dtype=float).reshape(self.r, self.m)

    @cached_property
    def q2(self) -> np.ndarray:
        """q_i² for circle bundles (r = 1)."""
        if self.r != 1:
            raise ValueError("q_i is only defined for r = 1")
        return self.Q_arr[0] ** 2

    @cached_property
    def nq2(self) -> np.ndarray:
        return self.n_arr * self.q2

    def sub_bundle(self, theta) -> "BundleSpec":
        """Circle bundle restricted to the factors in ``theta`` (0-based)."""
        idx = sorted(theta)
        return BundleSpec(
            m=len(idx), r=self.r,
            n=[self.n[i] for i in idx], p=[self.p[i] for i in idx],
            Q=[[row[i] for i in idx] for row in self.Q],
        )


@dataclass(frozen=True)
class ValidationReport:
    failures: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.failures

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class CouplingConstants:
    c: tuple
    c0: float
    rho: float | None = None


def integer_rank(rows) -> int:
    """Exact rank of an integer matrix by elimination over the rationals."""
    mat = [[Fraction(x) for x in row] for row in rows]
    if not mat:
        return 0
    nrows, ncols = len(mat), len(mat[0])
    rank = 0
    for col in range(ncols):
        pivot = next((i for i in range(rank, nrows) if mat[i][col] != 0), None)
        if pivot is None:
            continue
        mat[rank], mat[pivot] = mat[pivot], mat[rank]
        for i in range(rank + 1, nrows):
            f = mat[i][col] / mat[rank][col]
            if f:
                mat[i] = [x - f * y for x, y in zip(mat[i], mat[rank])]
        rank += 1
        if rank == nrows:
            break
    return rank


def validate(spec: BundleSpec) -> ValidationReport:
    """Check every non-degeneracy and positivity condition; report all failures."""
    failures = []
    if spec.m < 1:
        failures.append(f"m must be >= 1 (got {spec.m})")
    if spec.r < 1:
        failures.append(f"r must be >= 1 (got {spec.r})")
    if len(spec.n) != spec.m:
        failures.append(f"n has length {len(spec.n)}, expected m={spec.m}")
    if len(spec.p) != spec.m:
        failures.append(f"p has length {len(spec.p)}, expected m={spec.m}")
    if any(x < 1 for x in spec.n):
        failures.append("non-positive n_i")
    if any(x <= 0 for x in spec.p):
        failures.append("non-positive p_i")
    shape_ok = len(spec.Q) == spec.r and all(len(row) == spec.m for row in spec.Q)
    if not shape_ok:
        failures.append(f"Q must be {spec.r}x{spec.m}")
    if spec.r > spec.m:
        failures.append(f"r={spec.r} exceeds m={spec.m}")
    if shape_ok and spec.m >= 1 and spec.r >= 1:
        zero_cols = [i + 1 for i in range(spec.m) if all(row[i] == 0 for row in spec.Q)]
        if zero_cols:
            failures.append(f"zero column(s) in Q: {zero_cols}")
        rank = integer_rank(spec.Q)
        if rank < spec.r:
            failures.append(f"rank deficiency: rank(Q)={rank} < r={spec.r}")
    return ValidationReport(tuple(failures))


def _require_valid(spec):
    report = validate(spec)
    if not report.ok:
        raise InvalidSpec(report.failures)


def coupling_constants(spec: BundleSpec) -> CouplingConstants:
    """Column norms c_i, the rank-r basin constant c0 and (r = 1) the radius rho.

    c0 = r·Σ n_j c_j + max c_i bounds Σ_i Ŷ_i(r Σ_j n_j c_j Ŷ_j² + c_i Ŷ_i²)
    by c0 (Σ Ŷ_i)³ on the nonnegative orthant.  rho = min p / (max q² + max n q²)
    makes Σ q_i² Y_i³ + E(Y) Σ Y_i < Σ p_i Y_i² whenever 0 < Σ Y_i < rho.
    """
    _require_valid(spec)
    Q = spec.Q_arr
    c = np.sum(Q * Q, axis=0)
    c0 = spec.r * float(np.dot(spec.n_arr, c)) + float(c.max())
    rho = None
    if spec.r == 1:
        rho = float(spec.p_arr.min() / (spec.q2.max() + spec.nq2.max()))
    return CouplingConstants(c=tuple(float(x) for x in c), c0=c0, rho=rho)


def _check_spd(H):
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise NotPositiveDefinite("H must be square")
    if not np.allclose(H, H.T, rtol=1e-13, atol=0.0):
        raise NotPositiveDefinite("H is not symmetric")
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("Cholesky factorization failed") from None
    return H


def admissible_initial_r(spec: BundleSpec, H0, b0, c0: float | None = None) -> bool:
    """True iff tr H0 · Σ 1/b0_i < 1/(c0·m), the admissibility gate for rank-r runs."""
    H0 = _check_spd(H0)
    b0 = np.asarray(b0, dtype=float)
    if np.any(b0 <= 0):
        raise ValueError("b0 must be componentwise positive")
    if c0 is None:
        c0 = coupling_constants(spec).c0
    return float(np.trace(H0) * np.sum(1.0 / b0)) < 1.0 / (c0 * spec.m)


def _orthant_samples(rng, m, count):
    """Random points of the nonnegative orthant, plus vertices and faces."""
    pts = [np.eye(m)]
    pts.append(rng.exponential(size=(count, m)))
    # sparse points probe the faces where the cube-sum bound is tight
    mask = rng.random((count, m)) < 0.5
    pts.append(rng.exponential(size=(count, m)) * mask)
    out = np.vstack(pts)
    return out[out.sum(axis=1) > 0]


def c0_certificate(spec, rng=None, count=2000, c0=None):
    """Sampled check of the rank-r cubic bound with constant ``c0``.

    Returns ``(ok, worst)`` where ``worst`` is the largest sampled ratio
    LHS / (c0 (Σ Ŷ)³); the bound holds iff ``worst <= 1``.
    """
    rng = np.random.default_rng(rng)
    consts = coupling_constants(spec)
    c0 = consts.c0 if c0 is None else c0
    c = np.asarray(consts.c)
    Y = _orthant_samples(rng, spec.m, count)
    inner = spec.r * (Y**2 @ (spec.n_arr * c))
    lhs = np.sum(Y * (inner[:, None] + c * Y**2), axis=1)
    ratio = lhs / (c0 * Y.sum(axis=1) ** 3)
    worst = float(ratio.max())
    return worst <= 1.0 + 1e-12, worst


def basin_certificate(spec, rng=None, count=2000):
    """Sampled check of Σ q²Y³ + E·ΣY < Σ pY² on 0 < ΣY < rho (r = 1).

    Returns ``(ok, worst)`` with ``worst`` the largest ratio LHS/RHS.
    """
    rng = np.random.default_rng(rng)
    rho = coupling_constants(spec).rho
    Y = _orthant_samples(rng, spec.m, count)
    scale = rng.random(len(Y)) * rho
    # keep strictly inside the radius, the bound is attained on vertices at ΣY = rho
    Y = Y / Y.sum(axis=1, keepdims=True) * scale[:, None] * (1 - 1e-12)
    Y = Y[scale > 0]
    E = (Y**2) @ spec.nq2
    lhs = (Y**3) @ spec.q2 + E * Y.sum(axis=1)
    rhs = (Y**2) @ spec.p_arr
    ratio = lhs / rhs
    worst = float(ratio.max())
    return worst < 1.0, worst


def load_spec(source) -> BundleSpec:
    """Read a spec from a JSON file path, JSON text, or a dict."""
    if isinstance(source, dict):
        return BundleSpec.from_dict(source)
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text()
    else:
        text = str(source)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpec([f"not valid JSON: {exc}"]) from None
    if not isinstance(data, dict):
        raise InvalidSpec(["spec must be a JSON object"])
    return BundleSpec.from_dict(data)


EXAMPLES = {
    "SYM2": BundleSpec(m=2, r=1, n=(1, 1), p=(2, 2), Q=((1, 1),)),
    "ASYM": BundleSpec(m=2, r=1, n=(1, 2), p=(2, 3), Q=((1, 1),)),
    "SYM3": BundleSpec(m=3, r=1, n=(1, 1, 1), p=(2, 2, 2), Q=((1, 1, 1),)),
    "TOR": BundleSpec(m=3, r=2, n=(1, 1, 1), p=(2, 2, 2), Q=((1, 1, 0), (0, 1, 1))),
}
