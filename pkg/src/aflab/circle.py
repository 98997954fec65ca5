"""Phase-space functions of the r = 1 flow dY_i/du = -Y_i F_i(Y).

All functions broadcast over leading axes: ``Y`` may have shape (..., m).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy.optimize import brentq

from .bundle import BundleSpec, validate
from .errors import DomainError, InvalidSpec, NoConvergence

__all__ = [
    "YState",
    "CircleState",
    "RegionTag",
    "FixedPointSet",
    "energy",
    "deficit",
    "vector_field",
    "lambda_bar",
    "lambda_bar_rate",
    "classify_region",
    "find_xi",
    "find_v",
    "fixed_points",
    "blowup_threshold",
    "newton_fixed_point",
    "state_from_Y",
    "BOUNDARY_BAND",
]

BOUNDARY_BAND = 1e-9

YState = np.ndarray


@dataclass(frozen=True)
class CircleState:
    """Metric coefficients (a, b) of an r = 1 connection metric."""

    a: float
    b: tuple

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if not self.a > 0 or any(not x > 0 for x in self.b):
            raise DomainError("CircleState needs a > 0 and b_i > 0")

    @property
    def Y(self) -> np.ndarray:
        return self.a / np.asarray(self.b)

    @property
    def H(self) -> np.ndarray:
        return np.array([[self.a]])


def state_from_Y(Y, a=1.0) -> CircleState:
    Y = np.asarray(Y, dtype=float)
    return CircleState(a=a, b=tuple(a / Y))


def _require_circle(spec):
    if spec.r != 1:
        raise InvalidSpec([f"circle dynamics needs r = 1 (got r={spec.r})"])


def energy(spec: BundleSpec, Y) -> np.ndarray | float:
    """E(Y) = Σ n_i q_i² Y_i²."""
    Y = np.asarray(Y, dtype=float)
    return (Y * Y) @ spec.nq2


def deficit(spec: BundleSpec, Y) -> np.ndarray:
    """F_i(Y) = 2 p_i Y_i - q_i² Y_i² - E(Y)."""
    Y = np.asarray(Y, dtype=float)
    E = energy(spec, Y)
    return 2.0 * spec.p_arr * Y - spec.q2 * Y * Y - np.expand_dims(E, -1)


def vector_field(spec: BundleSpec, Y) -> np.ndarray:
    """Right-hand side -G(Y) = -(Y_i F_i(Y)) of the u-clock flow."""
    Y = np.asarray(Y, dtype=float)
    return -Y * deficit(spec, Y)


def _log_prefactor(spec, Y):
    Y = np.asarray(Y, dtype=float)
    if np.any(Y <= 0):
        raise DomainError("lambda_bar needs Y_i > 0")
    w = -2.0 * spec.n_arr / spec.dim
    return np.log(Y) @ w


def lambda_bar(spec: BundleSpec, Y):
    """Scale-invariant monotone quantity

    λ̄(Y) = ∏ Y_i^(-2n_i/n) · Σ (2 n_i p_i Y_i - ½ n_i q_i² Y_i²),  n = 1 + Σ 2n_i.

    The prefactor is formed in the log domain; the sum may change sign, so only
    its magnitude goes through the logarithm.
    """
    Y = np.asarray(Y, dtype=float)
    logpre = _log_prefactor(spec, Y)
    s = Y @ (2.0 * spec.n_arr * spec.p_arr) - 0.5 * (Y * Y) @ spec.nq2
    with np.errstate(divide="ignore"):
        return np.sign(s) * np.exp(logpre + np.log(np.abs(s)))


def lambda_bar_rate(spec: BundleSpec, Y):
    """Closed-form dλ̄/du along the flow; nonpositive, zero only at ξ."""
    Y = np.asarray(Y, dtype=float)
    logpre = _log_prefactor(spec, Y)
    n = spec.dim
    E = energy(spec, Y)
    lin = Y @ (spec.n_arr * spec.p_arr)
    resid = (spec.n_arr * Y * Y * (2.0 * spec.p_arr - spec.q2 * Y) ** 2).sum(axis=-1)
    bracket = (2.0 / n) * (2.0 * lin - 0.5 * E) ** 2 - 0.5 * E * E - resid
    return np.exp(logpre) * bracket


@dataclass(frozen=True)
class RegionTag:
    """Sign pattern of the deficits at a phase point.

    ``signs[i]`` is +1, -1 or 0, the last meaning |F_i| lies inside the
    boundary band 1e-9·(1 + |Y|²).
    """

    F: tuple
    signs: tuple

    @property
    def in_plus(self) -> bool:
        return all(s >= 0 for s in self.signs)

    @property
    def in_minus(self) -> bool:
        return all(s <= 0 for s in self.signs)

    @property
    def interior_plus(self) -> bool:
        return all(s > 0 for s in self.signs)

    @property
    def interior_minus(self) -> bool:
        return all(s < 0 for s in self.signs)

    @property
    def boundary_plus(self) -> bool:
        return self.in_plus and not self.interior_plus

    @property
    def boundary_minus(self) -> bool:
        return self.in_minus and not self.interior_minus

    def in_theta(self, theta) -> bool:
        """Membership in Ω_θ: F_i ≥ 0 on θ and F_j ≤ 0 off θ (0-based indices)."""
        theta = set(theta)
        return all((s >= 0) if i in theta else (s <= 0) for i, s in enumerate(self.signs))

    def interior_theta(self, theta) -> bool:
        theta = set(theta)
        return all((s > 0) if i in theta else (s < 0) for i, s in enumerate(self.signs))

    def thetas(self):
        """All nonempty proper θ with Y ∈ Ω_θ, each as a sorted tuple."""
        m = len(self.signs)
        forced_in = [i for i, s in enumerate(self.signs) if s > 0]
        free = [i for i, s in enumerate(self.signs) if s == 0]
        out = []
        for k in range(len(free) + 1):
            for extra in combinations(free, k):
                theta = tuple(sorted(forced_in + list(extra)))
                if 0 < len(theta) < m:
                    out.append(theta)
        return sorted(out)

    @property
    def flags(self) -> str:
        """Compact sign string, one character per factor."""
        return "".join({1: "+", 0: "0", -1: "-"}[s] for s in self.signs)


def _signs(spec, Y):
    Y = np.asarray(Y, dtype=float)
    F = deficit(spec, Y)
    band = BOUNDARY_BAND * (1.0 + np.sum(Y * Y, axis=-1))
    band = np.expand_dims(band, -1)
    return F, np.where(F > band, 1, np.where(F < -band, -1, 0))


def classify_region(spec: BundleSpec, Y) -> RegionTag:
    Y = np.asarray(Y, dtype=float)
    if np.any(Y < 0):
        raise DomainError("classify_region needs Y_i >= 0")
    F, signs = _signs(spec, Y)
    return RegionTag(F=tuple(F.tolist()), signs=tuple(int(s) for s in signs))


def blowup_threshold(spec: BundleSpec) -> np.ndarray:
    """2 p_i / ((n_i + 1) q_i²): beyond it the i-th coordinate escapes in finite u."""
    _require_circle(spec)
    return 2.0 * spec.p_arr / ((spec.n_arr + 1.0) * spec.q2)


def _jacobian_F(spec, Y):
    # ∂F_i/∂Y_j = δ_ij (2p_i - 2q_i² Y_i) - 2 n_j q_j² Y_j
    return np.diag(2.0 * spec.p_arr - 2.0 * spec.q2 * Y) - 2.0 * (spec.nq2 * Y)[None, :]


def newton_fixed_point(spec: BundleSpec, Y0, *, tol=1e-12, max_iter=60, max_halvings=30):
    """Damped Newton on F(Y) = 0 restricted to the open positive orthant.

    A step is halved (up to ``max_halvings`` times) until the trial point is
    positive and the residual decreases.  Raises NoConvergence with the
    iterate trace when the residual stalls.
    """
    Y = np.asarray(Y0, dtype=float).copy()
    if np.any(Y <= 0):
        raise DomainError("Newton start must be positive")
    trace = [Y.copy()]
    res = np.max(np.abs(deficit(spec, Y)))
    for _ in range(max_iter):
        if res < tol:
            return Y
        F = deficit(spec, Y)
        try:
            step = np.linalg.solve(_jacobian_F(spec, Y), -F)
        except np.linalg.LinAlgError:
            raise NoConvergence("singular Jacobian", trace) from None
        t = 1.0
        for _ in range(max_halvings + 1):
            trial = Y + t * step
            if np.all(trial > 0):
                r_trial = np.max(np.abs(deficit(spec, trial)))
                if r_trial < res or r_trial < tol:
                    break
            t *= 0.5
        else:
            raise NoConvergence(f"damping exhausted at residual {res:.3e}", trace)
        Y, res = trial, r_trial
        trace.append(Y.copy())
    if res < tol:
        return Y
    raise NoConvergence(f"no convergence after {max_iter} iterations (residual {res:.3e})", trace)


def _energy_level_guess(spec):
    """Positive zero of F via the scalar equation in the energy level e.

    On F = 0 each Y_i is the smaller root of 2p_iY - q_i²Y² = e, and
    Σ n_i q_i² Y_i(e)² = e has a root in (0, min p_i²/q_i²].
    """
    p, q2, nq2 = spec.p_arr, spec.q2, spec.nq2
    e_max = float(np.min(p * p / q2))

    def Y_of(e):
        return e / (p + np.sqrt(np.maximum(p * p - q2 * e, 0.0)))

    def g(e):
        Y = Y_of(e)
        return float(np.dot(nq2, Y * Y)) - e

    # g(e) ~ -e near 0, g(e_max) >= 0
    lo = e_max * 1e-12
    e = brentq(g, lo, e_max, xtol=1e-15 * e_max, rtol=4 * np.finfo(float).eps, maxiter=500)
    return Y_of(e)


@lru_cache(maxsize=256)
def _find_xi_cached(spec):
    Y0 = _energy_level_guess(spec)
    return newton_fixed_point(spec, Y0)


def find_xi(spec: BundleSpec) -> np.ndarray:
    """The unique positive zero ξ of F (Einstein point), residual below 1e-12."""
    _require_circle(spec)
    report = validate(spec)
    if not report.ok:
        raise InvalidSpec(report.failures)
    return _find_xi_cached(spec).copy()


def find_v(spec: BundleSpec, theta) -> np.ndarray:
    """Fixed point supported exactly on ``theta`` (0-based, nonempty, proper)."""
    _require_circle(spec)
    theta = tuple(sorted(set(int(i) for i in theta)))
    if not theta or len(theta) >= spec.m or theta[0] < 0 or theta[-1] >= spec.m:
        raise ValueError(f"theta must be a nonempty proper subset of 0..{spec.m - 1}")
    Y = np.zeros(spec.m)
    if len(theta) == 1:
        k = theta[0]
        Y[k] = 2.0 * spec.p_arr[k] / ((spec.n_arr[k] + 1.0) * spec.q2[k])
    else:
        Y[list(theta)] = find_xi(spec.sub_bundle(theta))
    return Y


@dataclass(frozen=True)
class FixedPointSet:
    origin: np.ndarray
    xi: np.ndarray
    v: dict = field(default_factory=dict)
    truncated: bool = False

    def all_points(self):
        """(tag, Y) pairs; tags are 'origin', 'xi' or a tuple θ."""
        yield "origin", self.origin
        for theta, Y in self.v.items():
            yield theta, Y
        yield "xi", self.xi


def fixed_points(spec: BundleSpec, max_subsets: int = 2**10) -> FixedPointSet:
    """Origin, ξ and the v_θ, enumerating at most ``max_subsets`` proper subsets."""
    m = spec.m
    v = {}
    truncated = False
    count = 0
    for size in range(1, m):
        for theta in combinations(range(m), size):
            if count >= max_subsets:
                truncated = True
                break
            v[theta] = find_v(spec, theta)
            count += 1
        if truncated:
            break
    return FixedPointSet(origin=np.zeros(m), xi=find_xi(spec), v=v, truncated=truncated)


@lru_cache(maxsize=64)
def known_fixed_points(spec: BundleSpec, max_subsets: int = 2**10):
    """Cached (tags, stacked points) for capture detection."""
    fps = fixed_points(spec, max_subsets)
    tags, pts = zip(*fps.all_points())
    return list(tags), np.array(pts)
