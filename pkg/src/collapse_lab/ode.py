"""Adaptive Dormand-Prince 5(4) integration with cubic Hermite dense output."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

# Dormand & Prince (1980), FSAL form
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
# fifth-order weights minus embedded fourth-order weights
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


@dataclass
class OdeSolution:
    """Accepted steps: times, states and derivatives (for Hermite output)."""

    ts: np.ndarray
    ys: np.ndarray
    fs: np.ndarray
    n_rejected: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.ts) - 1

    def __call__(self, t):
        return hermite_eval(self.ts, self.ys, self.fs, t)


def hermite_eval(ts, ys, fs, tq):
    """Cubic Hermite interpolation between accepted steps."""
    ts = np.asarray(ts)
    tq_arr = np.atleast_1d(np.asarray(tq, dtype=float))
    idx = np.clip(np.searchsorted(ts, tq_arr, side="right") - 1, 0, len(ts) - 2)
    out = []
    for t, i in zip(tq_arr, idx):
        h = ts[i + 1] - ts[i]
        x = (t - ts[i]) / h
        h00 = (1 + 2 * x) * (1 - x) ** 2
        h10 = x * (1 - x) ** 2
        h01 = x * x * (3 - 2 * x)
        h11 = x * x * (x - 1)
        out.append(h00 * ys[i] + h10 * h * fs[i] + h01 * ys[i + 1] + h11 * h * fs[i + 1])
    out = np.array(out)
    return out[0] if np.ndim(tq) == 0 else out


def _rms(x):
    return float(np.sqrt(np.mean(np.abs(x) ** 2)))


def dp54(fun, t0, y0, t1, *, rtol=1e-9, atol=1e-12, h_cap=None, max_steps=1_000_000,
         first_step=None):
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t1`` (``t1 > t0``).

    ``h_cap(t)``, when given, bounds the step size at time ``t``.
    """
    y = np.array(y0, dtype=complex)
    t = float(t0)
    t1 = float(t1)
    f = fun(t, y)
    ts, ys, fs = [t], [y.copy()], [f.copy()]
    if t1 <= t:
        return OdeSolution(np.array(ts), np.array(ys), np.array(fs))

    def cap(tt):
        c = t1 - tt
        if h_cap is not None:
            c = min(c, h_cap(tt))
        return c

    if first_step is None:
        sc = atol + rtol * np.abs(y)
        d0, d1 = _rms(y / sc), _rms(f / sc)
        h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    else:
        h = first_step
    h = min(h, cap(t))
    n_rej = 0
    k = [None] * 7
    for _ in range(max_steps):
        if t >= t1:
            break
        h = min(h, cap(t))
        if h <= 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise NumericError(f"step size underflow at t={t!r} (h={h:.3e})", t=t, h=h,
                               steps=len(ts) - 1)
        k[0] = f
        for i in range(1, 7):
            yi = y.copy()
            for j, a in enumerate(A[i]):
                if a:
                    yi += h * a * k[j]
            k[i] = fun(t + C[i] * h, yi)
            if i == 6:
                y_new = yi
        err_vec = h * sum(E[i] * k[i] for i in range(7) if E[i])
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(err_vec / sc)
        if err <= 1.0:
            # snap so no sub-ulp remainder is left before t1
            t_new = t + h if t + h < t1 - 16 * np.finfo(float).eps * max(abs(t1), 1.0) else t1
            t, y, f = t_new, y_new, k[6]
            ts.append(t)
            ys.append(y.copy())
            fs.append(f.copy())
            fac = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
            h *= fac
        else:
            n_rej += 1
            h *= max(MIN_FACTOR, SAFETY * err ** -0.2)
    else:
        raise NumericError(f"step limit {max_steps} reached at t={t!r}", t=t, steps=max_steps)
    return OdeSolution(np.array(ts), np.array(ys), np.array(fs), n_rej)


def rk4_fixed(fun, t0, y0, h, n):
    """``n`` classical RK4 steps of size ``h``; returns states at each step (incl. start)."""
    y = np.array(y0, dtype=complex)
    out = [y.copy()]
    t = t0
    for _ in range(n):
        k1 = fun(t, y)
        k2 = fun(t + h / 2, y + h / 2 * k1)
        k3 = fun(t + h / 2, y + h / 2 * k2)
        k4 = fun(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t + h
        out.append(y.copy())
    return np.array(out)
