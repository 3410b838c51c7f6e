"""Pure-Python hot kernels (reference implementation and import fallback).

``_ckernels.pyx`` implements the same functions with the same signatures and
status codes; :mod:`collapse_lab.kernels` picks one at import time.

Collapse integration runs in a frame where every target basis is the
reference basis, so each projector is a 0/1 mask over composite indices.
"""
import math

import numpy as np

from .errors import DegenerateTarget, NumericError
from .ode import dp54

STATUS_OK = 0
STATUS_DEGENERATE = 1
STATUS_UNDERFLOW = 2
STATUS_MAX_STEPS = 3


class _Stop(Exception):
    def __init__(self, status, t, value):
        self.status, self.t, self.value = status, t, value


def collapse_rate(coeffs, tau, T, gamma, t):
    x = math.pi * (t - tau) / T
    f = 0.0
    for n, d in enumerate(coeffs):
        f += d * math.cos(n * x)
    return gamma * (f - 1.0) / f


def rotated_rhs(H, psi, masks, lam, hbar, floor):
    """Collapse RHS in the masked frame; raises ``_Stop`` on a degenerate target.

    The on-target coefficient ``1 - 1/p`` is formed as ``-q/a`` from the
    directly summed off-target weight ``q``, which keeps the generator
    expectation free of cancellation when ``|lam|`` is large.
    """
    out = (-1j / hbar) * (H @ psi)
    if masks.shape[0] == 0:
        return out
    w = psi.real ** 2 + psi.imag ** 2
    coef = np.zeros(psi.size)
    for mask in masks:
        on = mask.astype(bool)
        a = float(w[on].sum())
        q = float(w[~on].sum())
        if a <= floor * (a + q):
            raise _Stop(STATUS_DEGENERATE, None, a / (a + q) if a + q > 0 else 0.0)
        coef += np.where(on, -q / a, 1.0)
    out += lam * coef * psi
    return out


def integrate_collapse(H, psi0, masks, coeffs, tau, T, gamma, hbar, t0, t1, rtol, atol,
                       cap_frac, max_steps, floor, first_step):
    """Integrate the masked-frame collapse equation from ``t0`` to ``t1``.

    Returns ``(ts, ys, fs, n_rejected, status, status_t, status_value)``.
    """
    H = np.asarray(H, dtype=complex)
    masks = np.asarray(masks, dtype=np.int8).reshape(-1, H.shape[0])
    has_targets = masks.shape[0] > 0
    t_end = tau + T
    state = {"t": t0}

    def fun(t, y):
        state["t"] = t
        lam = collapse_rate(coeffs, tau, T, gamma, t) if has_targets else 0.0
        return rotated_rhs(H, y, masks, lam, hbar, floor)

    h_cap = (lambda t: cap_frac * (t_end - t)) if cap_frac > 0 else None
    try:
        sol = dp54(fun, t0, psi0, t1, rtol=rtol, atol=atol, h_cap=h_cap, max_steps=max_steps,
                   first_step=first_step if first_step > 0 else None)
    except _Stop as stop:
        return None, None, None, 0, stop.status, state["t"], stop.value
    except NumericError as exc:
        status = STATUS_MAX_STEPS if "limit" in str(exc) else STATUS_UNDERFLOW
        return None, None, None, 0, status, exc.diagnostics.get("t", state["t"]), \
            exc.diagnostics.get("h", 0.0)
    return sol.ts, sol.ys, sol.fs, sol.n_rejected, STATUS_OK, sol.ts[-1], 0.0


# ---------------------------------------------------------------------------
# Jacobi pair objective for the preferred-basis residual


def _pair_coefficients(theta, phi):
    c = np.cos(theta)
    sr = np.sin(theta)
    s = sr * np.exp(1j * phi)
    sb = np.conj(s)
    ss = sr * sr
    cp = np.stack([c * c + 0j, c * sb, s * c, ss + 0j])
    cq = np.stack([ss + 0j, -sb * c, -c * s, c * c + 0j])
    return c, s, sb, ss, cp, cq


def pair_objective(theta, phi, M, Q, Gpp, Gqq, Gpq, floor):
    """Residual terms touched by rotating columns ``p, q`` by ``(theta, phi)``.

    Vectorized over broadcastable ``theta``/``phi``.  ``M[a, j]`` holds
    ``<A_a|H|Phi_j>`` for the four product vectors ``A_a`` spanned by the
    rotation and the untouched normalized columns ``Phi_j``; ``Q[a, b]`` is
    ``<A_a|H|A_b>``; ``G`` is the Gram data of the raw conditional states.
    """
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    c, s, sb, ss, cp, cq = _pair_coefficients(theta, phi)
    cross = 2.0 * c * np.real(sb * Gpq)
    np2 = c * c * Gpp + ss * Gqq + cross
    nq2 = ss * Gpp + c * c * Gqq - cross
    okp = np2 > floor * floor
    okq = nq2 > floor * floor
    safe_p = np.where(okp, np2, 1.0)
    safe_q = np.where(okq, nq2, 1.0)
    total = np.zeros(theta.shape)
    if M.shape[1]:
        zp = np.einsum("a...,aj->...j", cp.conj(), M)
        zq = np.einsum("a...,aj->...j", cq.conj(), M)
        total += np.where(okp, (np.abs(zp) ** 2).sum(-1) / safe_p, 0.0)
        total += np.where(okq, (np.abs(zq) ** 2).sum(-1) / safe_q, 0.0)
    zpq = np.einsum("a...,ab,b...->...", cp.conj(), Q, cq)
    total += np.where(okp & okq, np.abs(zpq) ** 2 / (safe_p * safe_q), 0.0)
    return total if total.ndim else float(total)


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(fun, a, b, tol=1e-13, max_iter=100):
    """Minimize a unimodal scalar ``fun`` on ``[a, b]``."""
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * (1.0 + abs(c) + abs(d)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fun(d)
    return (c, fc) if fc < fd else (d, fd)


PHASE_PROBE = 1e-6


def optimize_pair(M, Q, Gpp, Gqq, Gpq, floor, n_theta, n_phi, rounds):
    """Pick the pair rotation minimizing :func:`pair_objective`.

    A coarse ``(theta, phi)`` grid seeds alternating golden-section
    refinements of angle and phase.  Returns ``(theta, phi, value)``.
    """
    M = np.asarray(M, dtype=complex)
    Q = np.asarray(Q, dtype=complex)
    # theta and theta +- pi/2 differ by a column swap, which leaves R unchanged
    th = -0.25 * math.pi + 0.5 * math.pi * np.arange(n_theta) / n_theta
    ph = math.pi * np.arange(n_phi) / n_phi
    grid = pair_objective(th[:, None], ph[None, :], M, Q, Gpp, Gqq, Gpq, floor)
    i, j = np.unravel_index(int(np.argmin(grid)), grid.shape)
    tb, pb, vb = float(th[i]), float(ph[j]), float(grid[i, j])
    dt, dp = 0.5 * math.pi / n_theta, math.pi / n_phi

    def obj(t, p):
        return float(pair_objective(t, p, M, Q, Gpp, Gqq, Gpq, floor))

    if abs(tb) < 1e-12:
        tb = 0.0
        # every phase ties at theta = 0; take the phase of steepest first-order descent
        a = obj(PHASE_PROBE, 0.0) - obj(-PHASE_PROBE, 0.0)
        b = obj(PHASE_PROBE, 0.5 * math.pi) - obj(-PHASE_PROBE, 0.5 * math.pi)
        pb = math.fmod(math.atan2(b, a) + math.pi, math.pi)

    for _ in range(rounds):
        t_new, v = golden_section(lambda t: obj(t, pb), tb - dt, tb + dt)
        if v < vb:
            tb, vb = t_new, v
        p_new, v = golden_section(lambda p: obj(tb, p), pb - dp, pb + dp)
        if v < vb:
            pb, vb = p_new, v
        dt *= 0.5
        dp *= 0.5
    return tb, pb, vb


def raise_for_status(status, status_t, status_value, floor):
    if status == STATUS_OK:
        return
    if status == STATUS_DEGENERATE:
        raise DegenerateTarget(status_value, floor, status_t)
    if status == STATUS_UNDERFLOW:
        raise NumericError(f"step size underflow at t={status_t!r}", t=status_t, h=status_value)
    raise NumericError(f"step limit reached at t={status_t!r}", t=status_t)
