"""Independent reference computations used to cross-check the main solvers.

Nothing here shares code with the secular eigensolver or the ODE stepper:
eigenvalues come from Householder tridiagonalization plus Sturm-count
bisection (symmetric case) or from the Faddeev–LeVerrier characteristic
polynomial (general real spectrum).
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "tridiagonalize",
    "sturm_count",
    "symmetric_eigvals",
    "dpr1_eigvals",
    "leverrier_charpoly",
    "charpoly_eigvals",
    "comparison_time",
    "comparison_blowup_time",
]


def tridiagonalize(B):
    """Householder reduction of symmetric matrices (batched over axis 0).

    Returns ``(diag, off)`` with shapes (K, m) and (K, m-1).
    """
    T = np.array(B, dtype=float, copy=True)
    single = T.ndim == 2
    if single:
        T = T[None]
    K, m, _ = T.shape
    for k in range(m - 2):
        x = T[:, k + 1:, k].copy()
        norm = np.linalg.norm(x, axis=1)
        alpha = -np.where(x[:, 0] >= 0, 1.0, -1.0) * norm
        v = x
        v[:, 0] -= alpha
        vn = np.linalg.norm(v, axis=1)
        live = vn > 0
        v[live] /= vn[live, None]
        v[~live] = 0.0
        rows = T[:, k + 1:, :]
        T[:, k + 1:, :] = rows - 2.0 * v[:, :, None] * np.einsum("ki,kij->kj", v, rows)[:, None, :]
        cols = T[:, :, k + 1:]
        T[:, :, k + 1:] = cols - 2.0 * np.einsum("kij,kj->ki", cols, v)[:, :, None] * v[:, None, :]
    idx = np.arange(m)
    diag = T[:, idx, idx]
    off = T[:, idx[1:], idx[:-1]]
    if single:
        return diag[0], off[0]
    return diag, off


def sturm_count(diag, off, x):
    """Number of eigenvalues below ``x`` of symmetric tridiagonals.

    ``diag`` (K, m), ``off`` (K, m-1), ``x`` (K, J) → counts (K, J).
    """
    tiny = np.finfo(float).tiny ** 0.5
    off2 = off * off
    q = diag[:, :1] - x
    q = np.where(q == 0.0, -tiny, q)
    count = (q < 0).astype(int)
    for i in range(1, diag.shape[1]):
        q = diag[:, i:i + 1] - x - off2[:, i - 1:i] / q
        q = np.where(q == 0.0, -tiny, q)
        count += q < 0
    return count


def symmetric_eigvals(B, iters=80):
    """Ascending eigenvalues of symmetric matrices by Sturm bisection (batched)."""
    B = np.asarray(B, dtype=float)
    single = B.ndim == 2
    if single:
        B = B[None]
    diag, off = tridiagonalize(B)
    K, m = diag.shape
    radius = np.zeros_like(diag)
    radius[:, :-1] += np.abs(off)
    radius[:, 1:] += np.abs(off)
    lo0 = np.min(diag - radius, axis=1)
    hi0 = np.max(diag + radius, axis=1)
    pad = 1e-12 * np.maximum(np.abs(lo0), np.abs(hi0)) + 1e-300
    lo = np.repeat((lo0 - pad)[:, None], m, axis=1)
    hi = np.repeat((hi0 + pad)[:, None], m, axis=1)
    target = np.arange(m)[None, :]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = sturm_count(diag, off, mid) > target
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    vals = 0.5 * (lo + hi)
    return vals[0] if single else vals


def dpr1_eigvals(a, eps):
    """Eigenvalues of diag(ε a) + 1 aᵀ via the symmetric similarity diag(√a)·A·diag(√a)⁻¹.

    Accepts a single instance (m,) or a batch (K, m).
    """
    a = np.asarray(a, dtype=float)
    eps = np.asarray(eps, dtype=float)
    w = np.sqrt(a)
    B = w[..., :, None] * w[..., None, :]
    idx = np.arange(a.shape[-1])
    B[..., idx, idx] += eps * a
    return symmetric_eigvals(B)


def leverrier_charpoly(M):
    """Coefficients c_0..c_m of det(λI - M) = Σ c_k λ^(m-k), c_0 = 1."""
    M = np.asarray(M, dtype=float)
    m = M.shape[0]
    coeffs = [1.0]
    Mk = np.zeros_like(M)
    eye = np.eye(m)
    for k in range(1, m + 1):
        Mk = M @ (Mk + coeffs[-1] * eye)
        coeffs.append(-np.trace(Mk) / k)
    return np.array(coeffs)


def charpoly_eigvals(M, grid=4000, iters=200):
    """Real eigenvalues of ``M`` by sign changes of its characteristic polynomial.

    Only simple real roots are found; intended for small matrices with a
    real spectrum that cannot be symmetrized.
    """
    M = np.asarray(M, dtype=float)
    coeffs = leverrier_charpoly(M)
    R = np.max(np.sum(np.abs(M), axis=1)) * (1 + 1e-9) + 1e-12
    xs = np.linspace(-R, R, grid)
    vals = np.polyval(coeffs, xs)
    roots = []
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0):
        lo, hi = xs[i], xs[i + 1]
        flo = np.polyval(coeffs, lo)
        if flo == 0.0:
            roots.append(lo)
            continue
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            fm = np.polyval(coeffs, mid)
            if np.sign(fm) == np.sign(flo):
                lo, flo = mid, fm
            else:
                hi = mid
            if hi - lo <= 1e-15 * R:
                break
        r = 0.5 * (lo + hi)
        if not roots or abs(r - roots[-1]) > 1e-9 * R:
            roots.append(r)
    return np.array(roots)


def comparison_time(A, B, z):
    """u(z) - c for the solution of dz/du = z²(Az - B), valid for z > B/A.

    u(z) = 1/(B z) + (A/B²) ln(1 - B/(A z)) + c.
    """
    return 1.0 / (B * z) + (A / B**2) * math.log(1.0 - B / (A * z))


def comparison_blowup_time(A, B, u1, z0, z_target=math.inf):
    """Time at which the comparison solution with z(u1) = z0 reaches ``z_target``.

    With z_target = ∞ this is the blow-up time c.  A solution Y with
    dY/du ≥ Y²(AY - B) and Y(u1) ≥ z0 > B/A reaches any level no later
    than this value.
    """
    if not z0 > B / A:
        raise ValueError("comparison start must exceed B/A")
    c = u1 - comparison_time(A, B, z0)
    if math.isinf(z_target):
        return c
    return c + comparison_time(A, B, z_target)
