"""Dormand–Prince 5(4) embedded pair with FSAL and a quartic interpolant.

The stepper is a generator of accepted steps; callers own event logic and
decide when to stop consuming it.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Step", "StepUnderflowError", "dopri_steps", "rms_norm"]

# Butcher tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th minus 4th order weights, including the FSAL stage
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension, coefficients of x, x², x³, x⁴ per stage
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class StepUnderflowError(RuntimeError):
    def __init__(self, t, h):
        self.t, self.h = t, h
        super().__init__(f"step size {abs(h):.3e} underflow at t={t:.17g}")


def rms_norm(x):
    return float(np.sqrt(np.mean(x * x)))


class Step:
    """One accepted step with its dense-output polynomial."""

    __slots__ = ("t0", "y0", "t1", "y1", "f1", "h", "_Q")

    def __init__(self, t0, y0, t1, y1, f1, K):
        self.t0, self.y0, self.t1, self.y1, self.f1 = t0, y0, t1, y1, f1
        self.h = t1 - t0
        self._Q = K.T @ P

    def __call__(self, t):
        x = (t - self.t0) / self.h
        return self.y0 + self.h * (self._Q @ np.array([x, x * x, x**3, x**4]))


def _initial_step(fun, t0, y0, f0, direction, rtol, atol):
    scale = atol + np.abs(y0) * rtol
    d0 = rms_norm(y0 / scale)
    d1 = rms_norm(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = fun(t0 + direction * h0, y1)
    d2 = rms_norm((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def dopri_steps(fun, t0, y0, t_bound, *, rtol, atol, h0=None, accept=None,
                project=None, min_step_frac=1e-14, max_step=np.inf, max_steps=1_000_000):
    """Yield accepted :class:`Step` objects from ``t0`` towards ``t_bound``.

    accept : callable(y) -> bool, optional
        Guard on trial states; a rejected state halves the step.
    project : callable(y) -> y, optional
        Applied to each accepted state (for example re-symmetrization).
    max_step : float
        Upper bound on |h|, used to guarantee sampling density.

    Raises StepUnderflowError when |h| falls below ``min_step_frac·|t_bound - t0|``.
    """
    t = float(t0)
    y = np.array(y0, dtype=float)
    span = abs(t_bound - t)
    if span == 0:
        return
    direction = 1.0 if t_bound > t else -1.0
    atol = np.broadcast_to(np.asarray(atol, dtype=float), y.shape)
    h_min = min_step_frac * span
    f = fun(t, y)
    h = abs(h0) if h0 else _initial_step(fun, t, y, f, direction, rtol, atol)
    K = np.empty((7, y.size))
    for _ in range(max_steps):
        if direction * (t - t_bound) >= 0:
            return
        rejected = False
        while True:
            h = min(h, max_step, abs(t_bound - t))
            if h < h_min and abs(t_bound - t) > h_min:
                raise StepUnderflowError(t, h)
            hs = direction * h
            K[0] = f
            for s in range(1, 6):
                K[s] = fun(t + C[s] * hs, y + hs * (A[s] @ K[:s]))
            y_new = y + hs * (B @ K[:6])
            t_new = t + hs if abs(t_bound - (t + hs)) > 1e-15 * span else t_bound
            if not np.all(np.isfinite(y_new)) or (accept is not None and not accept(y_new)):
                h *= 0.5
                rejected = True
                continue
            f_new = fun(t_new, y_new)
            K[6] = f_new
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = rms_norm(hs * (E @ K) / scale)
            if not np.isfinite(err):
                h *= 0.5
                rejected = True
                continue
            if err <= 1.0:
                factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
                if rejected:
                    factor = min(1.0, factor)
                break
            h *= max(MIN_FACTOR, SAFETY * err ** -0.2)
            rejected = True
        if project is not None:
            y_proj = project(y_new)
            if y_proj is not y_new:
                y_new = y_proj
                f_new = fun(t_new, y_new)
        step = Step(t, y, t_new, y_new, f_new, K.copy())
        t, y, f = t_new, y_new, f_new
        h *= factor
        yield step
    raise RuntimeError("maximum number of steps exceeded")
