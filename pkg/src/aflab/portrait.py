"""Phase-portrait sampling of the r = 1 flow on a rectangular grid."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bundle import coupling_constants
from .circle import blowup_threshold, deficit, energy, find_xi, lambda_bar

__all__ = ["Portrait", "GridTooLarge", "portrait_grid", "basin_tags", "MAX_GRID_POINTS"]

MAX_GRID_POINTS = 10**6
SIGN_BAND = 1e-12


class GridTooLarge(ValueError):
    pass


@dataclass
class Portrait:
    Y: np.ndarray          # (N, m) grid points, last axis varying fastest
    shape: tuple
    F_sign: np.ndarray     # (N, m) in {-1, 0, 1}
    G_norm: np.ndarray
    lambda_bar: np.ndarray
    basin: np.ndarray      # strings

    @property
    def region(self):
        out = np.full(len(self.Y), "mixed", dtype=object)
        out[np.all(self.F_sign >= 0, axis=1)] = "plus"
        out[np.all(self.F_sign <= 0, axis=1) & ~np.all(self.F_sign == 0, axis=1)] = "minus"
        return out

    def table(self):
        m = self.Y.shape[1]
        header = ([f"Y_{i}" for i in range(1, m + 1)] + [f"sign_F_{i}" for i in range(1, m + 1)]
                  + ["region", "G_norm", "lambda_bar", "basin"])
        reg = self.region
        rows = [[*self.Y[k], *self.F_sign[k], reg[k], self.G_norm[k], self.lambda_bar[k], self.basin[k]]
                for k in range(len(self.Y))]
        return header, rows


def _field(spec, Y):
    E = energy(spec, Y)
    return -Y * (2.0 * spec.p_arr * Y - spec.q2 * Y * Y - E[..., None])


def basin_tags(spec, Y, u_max=60.0, h=0.02, xi_radius=1e-6):
    """Forward fate of each row of Y by fixed-step RK4 with certificates.

    origin : Σ Y_i drops below the radius on which Σ Y_i strictly decreases.
    blowup : some Y_i exceeds its escape threshold.
    xi     : still within ``xi_radius`` of ξ at u_max.
    """
    Y = np.array(Y, dtype=float)
    rho = coupling_constants(spec).rho
    thr = blowup_threshold(spec)
    xi = find_xi(spec)
    tags = np.full(len(Y), "undecided", dtype=object)
    active = np.ones(len(Y), dtype=bool)

    def settle(idx, Z):
        origin = Z.sum(axis=1) < rho
        blow = np.any(Z > thr, axis=1)
        tags[idx[origin]] = "origin"
        tags[idx[blow & ~origin]] = "blowup"
        active[idx[origin | blow]] = False

    settle(np.arange(len(Y)), Y)
    for _ in range(int(round(u_max / h))):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Z = Y[idx]
        k1 = _field(spec, Z)
        k2 = _field(spec, Z + 0.5 * h * k1)
        k3 = _field(spec, Z + 0.5 * h * k2)
        k4 = _field(spec, Z + h * k3)
        Z = np.maximum(Z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), 0.0)
        Y[idx] = Z
        settle(idx, Z)
    idx = np.flatnonzero(active)
    near = np.linalg.norm(Y[idx] - xi, axis=1) < xi_radius
    tags[idx[near]] = "xi"
    return tags


def _chunk(args):
    spec, Y, u_max, h = args
    return basin_tags(spec, Y, u_max, h)


def portrait_grid(spec, ymax, shape, *, threads=1, u_max=60.0, h=0.02, basins=True) -> Portrait:
    """Sample [0, ymax]^m on a grid with ``shape`` points per axis (m ∈ {2, 3})."""
    if spec.r != 1 or spec.m not in (2, 3):
        raise ValueError("portrait needs r = 1 and m in {2, 3}")
    shape = tuple(int(s) for s in np.broadcast_to(shape, (spec.m,)))
    if any(s < 1 for s in shape):
        raise ValueError("grid shape must be positive")
    total = int(np.prod(shape))
    if total > MAX_GRID_POINTS:
        raise GridTooLarge(f"grid of {total} points exceeds the cap {MAX_GRID_POINTS}")
    axes = [np.linspace(0.0, ymax, s) for s in shape]
    Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.m)
    F = deficit(spec, Y)
    band = SIGN_BAND * (1.0 + np.sum(Y * Y, axis=1, keepdims=True))
    sign = np.where(F > band, 1, np.where(F < -band, -1, 0))
    G = np.linalg.norm(Y * F, axis=1)
    lam = np.full(total, np.nan)
    pos = np.all(Y > 0, axis=1)
    lam[pos] = lambda_bar(spec, Y[pos])
    if not basins:
        tags = np.full(total, "", dtype=object)
    elif threads > 1 and total > 1000:
        parts = np.array_split(Y, threads * 4)
        with ProcessPoolExecutor(max_workers=threads) as pool:
            tags = np.concatenate(list(pool.map(_chunk, [(spec, P, u_max, h) for P in parts])))
    else:
        tags = basin_tags(spec, Y, u_max, h)
    return Portrait(Y=Y, shape=shape, F_sign=sign, G_norm=G, lambda_bar=lam, basin=tags)
