"""Linearizations at fixed points and the diagonal-plus-rank-one eigensolver.

A = diag(ε_i a_i) + 1 aᵀ has det(A - λI) = ∏(d_j - λ) · s(λ) with d = εa and
secular function s(λ) = 1 + Σ a_j / (d_j - λ).  s increases strictly between
its poles, so each gap between consecutive distinct d_j holds exactly one
eigenvalue and the largest one lies above max d, inside the row-sum bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .circle import deficit, energy, find_v, find_xi
from .errors import BracketFailure, NotPositive, SpectralMismatch

__all__ = [
    "DiagPlusRankOne",
    "SpectralReport",
    "XiDecomposition",
    "Linearization",
    "secular_eigen",
    "linearize",
    "xi_decomposition",
    "xi_spectrum",
    "vtheta_spectrum",
    "CLUSTER_RTOL",
]

CLUSTER_RTOL = 1e-9
BISECT_RTOL = 1e-13


@dataclass(frozen=True)
class DiagPlusRankOne:
    a: tuple
    eps: tuple

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(x) for x in np.ravel(self.a)))
        object.__setattr__(self, "eps", tuple(float(x) for x in np.ravel(self.eps)))
        if len(self.a) != len(self.eps):
            raise ValueError("a and eps must have equal length")

    @property
    def d(self) -> np.ndarray:
        return np.asarray(self.eps) * np.asarray(self.a)

    def matrix(self) -> np.ndarray:
        a = np.asarray(self.a)
        return np.diag(self.d) + np.ones((len(a), 1)) * a[None, :]


@dataclass(frozen=True)
class SpectralReport:
    """Eigen-data in ascending eigenvalue order.

    ``brackets[k]`` is the isolating interval of ``eigenvalues[k]`` when that
    value came from a secular root, ``None`` for cluster values or values
    that were read off directly.  ``eigenvectors[:, k]`` is a unit eigenvector.
    ``perron_vector`` is the all-positive eigenvector of the distinguished
    eigenvalue (the Perron root for A; its image for fixed-point spectra).
    """

    eigenvalues: np.ndarray
    brackets: tuple
    eigenvectors: np.ndarray
    perron_vector: np.ndarray
    certificate: dict = field(default_factory=dict)

    @property
    def n_negative(self) -> int:
        return int(np.sum(self.eigenvalues < 0))

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.eigenvalues > 0))


def _clusters(d_sorted, rtol):
    """Group a descending sequence into runs whose consecutive gaps are ≤ rtol·max."""
    scale = max(abs(d_sorted[0]), np.finfo(float).tiny)
    groups = [[0]]
    for k in range(1, len(d_sorted)):
        if d_sorted[groups[-1][-1]] - d_sorted[k] <= rtol * scale:
            groups[-1].append(k)
        else:
            groups.append([k])
    return groups


def _secular_roots(dt, at, lo, hi, scale):
    """Vectorized bisection then two guarded Newton steps on s(λ)."""
    width = BISECT_RTOL * scale
    for _ in range(400):
        if np.all(hi - lo <= width):
            break
        mid = 0.5 * (lo + hi)
        s = 1.0 + np.sum(at[None, :] / (dt[None, :] - mid[:, None]), axis=1)
        right = s > 0
        hi = np.where(right, mid, hi)
        lo = np.where(right, lo, mid)
    lam = 0.5 * (lo + hi)
    for _ in range(2):
        diff = dt[None, :] - lam[:, None]
        s = 1.0 + np.sum(at / diff, axis=1)
        ds = np.sum(at / diff**2, axis=1)
        cand = lam - s / ds
        ok = (cand > lo) & (cand < hi) & np.isfinite(cand)
        lam = np.where(ok, cand, lam)
    return lam, lo, hi


def secular_eigen(A: DiagPlusRankOne) -> SpectralReport:
    """Full spectrum of diag(εa) + 1aᵀ from its secular equation.

    Near-equal diagonal values (relative gap ≤ 1e-9) are merged into clusters;
    a cluster of k values c contributes c with multiplicity k - 1 and one
    reduced term (Σ a, c / Σ a) to the secular equation.
    """
    a = np.asarray(A.a)
    eps = np.asarray(A.eps)
    if a.size == 0:
        raise ValueError("empty matrix")
    if np.any(a <= 0) or np.any(eps <= 0):
        raise NotPositive("all a_i and eps_i must be positive")
    m = a.size
    d = eps * a
    order = np.argsort(-d, kind="stable")
    ds = d[order]
    groups = _clusters(ds, CLUSTER_RTOL)
    members = [order[g] for g in groups]
    dt = np.array([d[idx].mean() for idx in members])
    at = np.array([a[idx].sum() for idx in members])
    l = len(dt)
    suma = a.sum()
    scale = d.max() + suma

    # isolating intervals: (dt[j], dt[j-1]) for j ≥ 1, row-sum bounds for the top root
    lo = np.empty(l)
    hi = np.empty(l)
    lo[0] = max(dt[0], d.min() + suma)
    hi[0] = d.max() + suma
    lo[1:] = dt[1:]
    hi[1:] = dt[:-1]

    def s_at(x):
        return 1.0 + np.sum(at / (dt - x))

    # the top bracket ends are not poles, so their signs must be checked
    tol_s = 1e-9
    if hi[0] > dt[0] and s_at(hi[0]) < -tol_s:
        raise BracketFailure("secular function negative at the upper row-sum bound")
    if lo[0] > dt[0] and s_at(lo[0]) > tol_s:
        raise BracketFailure("secular function positive at the lower row-sum bound")
    brackets0 = list(zip(lo.tolist(), hi.tolist()))
    lam, _, _ = _secular_roots(dt, at, lo.copy(), hi.copy(), scale)

    interlacing = bool(np.all(lam[1:] > dt[1:]) and np.all(lam[1:] < dt[:-1]) and lam[0] > dt[0])
    row_sum = bool(d.min() + suma - 1e-12 * scale <= lam[0] <= d.max() + suma + 1e-12 * scale)

    values, vectors, brackets = [], [], []
    for k in range(l):
        v = 1.0 / (lam[k] - d)
        values.append(lam[k])
        vectors.append(v / np.linalg.norm(v))
        brackets.append(brackets0[k])
    for idx in members:
        if len(idx) < 2:
            continue
        c = d[idx].mean()
        i0 = idx[0]
        for j in idx[1:]:
            v = np.zeros(m)
            v[i0] = a[j]
            v[j] = -a[i0]
            values.append(c)
            vectors.append(v / np.linalg.norm(v))
            brackets.append(None)

    perron = vectors[0].copy()
    Amat = A.matrix()
    residual = float(np.linalg.norm(Amat @ perron - lam[0] * perron))
    srt = np.argsort(values, kind="stable")
    cert = {
        "interlacing": interlacing,
        "row_sum": row_sum,
        "perron_positive": bool(np.all(perron > 0)),
        "perron_residual": residual,
        "clusters": [sorted(int(i) for i in idx) for idx in members if len(idx) > 1],
    }
    return SpectralReport(
        eigenvalues=np.asarray(values)[srt],
        brackets=tuple(brackets[k] for k in srt),
        eigenvectors=np.column_stack(vectors)[:, srt],
        perron_vector=perron,
        certificate=cert,
    )


@dataclass(frozen=True)
class XiDecomposition:
    """L_ξ = E(ξ) I - β with α = D_ξ⁻¹ β D_ξ diagonal-plus-rank-one."""

    E: float
    beta: np.ndarray
    alpha: DiagPlusRankOne


@dataclass(frozen=True)
class Linearization:
    matrix: np.ndarray
    at_xi_decomposition: XiDecomposition | None = None


def _jacobian_G(spec, Y):
    F = deficit(spec, Y)
    dF = np.diag(2.0 * spec.p_arr - 2.0 * spec.q2 * Y) - 2.0 * (spec.nq2 * Y)[None, :]
    return np.diag(F) + Y[:, None] * dF


def xi_decomposition(spec, xi) -> XiDecomposition:
    xi = np.asarray(xi, dtype=float)
    E = float(energy(spec, xi))
    outer = np.outer(xi, xi)
    beta = 2.0 * outer * spec.nq2[None, :]
    np.fill_diagonal(beta, (2.0 * spec.n_arr + 1.0) * spec.q2 * xi * xi)
    alpha = DiagPlusRankOne(a=2.0 * spec.nq2 * xi * xi, eps=1.0 / (2.0 * spec.n_arr))
    return XiDecomposition(E=E, beta=beta, alpha=alpha)


def linearize(spec, Y) -> Linearization:
    """Jacobian of G(Y) = (Y_i F_i(Y)); at ξ also the E·I - β decomposition."""
    Y = np.asarray(Y, dtype=float)
    J = _jacobian_G(spec, Y)
    dec = None
    if np.all(Y > 0) and np.max(np.abs(deficit(spec, Y))) < 1e-10:
        dec = xi_decomposition(spec, Y)
    return Linearization(matrix=J, at_xi_decomposition=dec)


def _spectrum_from_alpha(dec, xi):
    rep = secular_eigen(dec.alpha)
    values = dec.E - rep.eigenvalues
    vecs = xi[:, None] * rep.eigenvectors
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    z = xi * rep.perron_vector
    z = z / np.linalg.norm(z)
    brackets = tuple(None if b is None else (dec.E - b[1], dec.E - b[0]) for b in rep.brackets)
    srt = np.argsort(values, kind="stable")
    cert = dict(rep.certificate)
    return SpectralReport(
        eigenvalues=values[srt],
        brackets=tuple(brackets[k] for k in srt),
        eigenvectors=vecs[:, srt],
        perron_vector=z,
        certificate=cert,
    )


def xi_spectrum(spec, xi=None) -> SpectralReport:
    """Spectrum of L_ξ as E(ξ) minus the spectrum of α.

    Exactly one eigenvalue is negative, lies below -E(ξ), and has the
    all-positive eigenvector ``perron_vector``.
    """
    xi = find_xi(spec) if xi is None else np.asarray(xi, dtype=float)
    dec = xi_decomposition(spec, xi)
    rep = _spectrum_from_alpha(dec, xi)
    vals = rep.eigenvalues
    m = spec.m
    tol = 1e-10 * (1.0 + abs(dec.E))
    n_neg = int(np.sum(vals < -tol))
    n_nonneg = int(np.sum(vals >= -tol))
    if n_neg != 1 or n_nonneg != m - 1:
        raise SpectralMismatch(f"expected 1 negative and {m - 1} nonnegative eigenvalues, got {vals}")
    if not vals[0] < -dec.E:
        raise SpectralMismatch(f"negative eigenvalue {vals[0]} is not below -E(xi) = {-dec.E}")
    rep.certificate["negative_below_minus_E"] = True
    rep.certificate["E"] = dec.E
    return rep


def vtheta_spectrum(spec, theta) -> SpectralReport:
    """Spectrum of the block-diagonal L at v_θ: sub-bundle ξ block plus F_j(v_θ), j ∉ θ."""
    theta = tuple(sorted(set(int(i) for i in theta)))
    m = spec.m
    if not theta or len(theta) >= m:
        raise ValueError("theta must be a nonempty proper subset")
    v = find_v(spec, theta)
    sub = xi_spectrum(spec.sub_bundle(theta))
    F = deficit(spec, v)
    rest = [j for j in range(m) if j not in theta]
    values = list(sub.eigenvalues) + [F[j] for j in rest]
    vecs = np.zeros((m, m))
    vecs[np.ix_(theta, range(len(theta)))] = sub.eigenvectors
    for k, j in enumerate(rest):
        vecs[j, len(theta) + k] = 1.0
    brackets = list(sub.brackets) + [None] * len(rest)
    srt = np.argsort(values, kind="stable")
    values = np.asarray(values)[srt]
    n_neg = int(np.sum(values < 0))
    n_pos = int(np.sum(values > 0))
    if n_neg != m - len(theta) + 1 or n_pos != len(theta) - 1:
        raise SpectralMismatch(
            f"v_theta spectrum {values}: expected {m - len(theta) + 1} negative, {len(theta) - 1} positive"
        )
    z = np.zeros(m)
    z[list(theta)] = sub.perron_vector
    cert = dict(sub.certificate)
    cert["off_support_deficits"] = [float(F[j]) for j in rest]
    return SpectralReport(
        eigenvalues=values,
        brackets=tuple(brackets[k] for k in srt),
        eigenvectors=vecs[:, srt],
        perron_vector=z,
        certificate=cert,
    )
