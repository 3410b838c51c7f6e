"""Diagnostics: reduced density matrices, the energy identity, endpoint
exponent fits, second-derivative continuity and factorization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis_solver import PreferredBasis
from .dynamics import (
    HBAR,
    CollapseTarget,
    IntegratorOptions,
    MaskedFrame,
    Propagator,
    finalize_collapse,
    integrate_window,
    multi_collapse_rhs,
    split_target,
)
from .errors import DomainError, FitError
from .hilbert import (
    DEGENERACY_FLOOR,
    OperatorMatrix,
    StateVector,
    TensorPartition,
    embed_operator,
    hermitian_defect,
    subsystem_matrix,
)
from .ode import dp54, rk4_fixed
from .window import SUM_TOL, CollapseWindow, f_eval, lambda_inv

RDM_HERMITIAN_TOL = 1e-10
RDM_PSD_TOL = 1e-10
FIT_S_MAX = 0.2
DEFAULT_FIT_S_MAX = 0.1


# ---------------------------------------------------------------------------
# reduced density matrix


@dataclass(frozen=True)
class ReducedDensityMatrix:
    """Gram matrix ``M_{kk'} = <phi_k|phi_k'>`` of the conditional states."""

    subsystem: int
    basis: PreferredBasis
    M: np.ndarray

    def __post_init__(self):
        M = np.array(self.M, dtype=complex)
        d = self.basis.dim
        if M.shape != (d, d):
            raise DomainError(f"M has shape {M.shape}, basis dim is {d}")
        if not np.all(np.isfinite(M)):
            raise DomainError("M has non-finite entries")
        scale = max(1.0, float(np.abs(np.trace(M))))
        defect = hermitian_defect(M)
        if defect > RDM_HERMITIAN_TOL * scale:
            raise DomainError(f"M is not Hermitian (defect {defect:.2e})")
        low = float(np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0])
        if low < -RDM_PSD_TOL * scale:
            raise DomainError(f"M is not positive semidefinite (min eigenvalue {low:.2e})")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.M).real)

    @property
    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.M).real.copy()


def reduced_density_matrix(psi: StateVector, basis: PreferredBasis, s: int) -> ReducedDensityMatrix:
    part = psi.partition
    part.check_subsystem(s)
    if basis.dim != part.dims[s]:
        raise DomainError(f"basis dim {basis.dim} != subsystem {s} dim {part.dims[s]}")
    if not np.all(np.isfinite(psi.amps)):
        raise DomainError("state has non-finite amplitudes")
    c = basis.U.conj().T @ subsystem_matrix(psi.amps, part.dims, s)
    return ReducedDensityMatrix(s, basis, c.conj() @ c.T)


def _matrix(M):
    return M.M if isinstance(M, ReducedDensityMatrix) else np.asarray(M)


def coherence_l1(M) -> float:
    """Off-diagonal mass ``sum_{k != k'} |M_{kk'}|``."""
    m = _matrix(M)
    a = np.abs(m)
    return float(a.sum() - np.trace(a))


def mean_coherence(M) -> float:
    """``coherence_l1 / (d - 1)``; lies in [0, 1] for unit trace, 0 when d = 1."""
    m = _matrix(M)
    d = m.shape[0]
    return 0.0 if d < 2 else coherence_l1(m) / (d - 1)


# ---------------------------------------------------------------------------
# energy identity


def energy_identity_gap(H: OperatorMatrix, psi: StateVector, w: CollapseWindow, t,
                        targets, hbar: float = HBAR) -> float:
    """``|<psi| i hbar rhs> - <psi|H|psi>|`` for the active collapse RHS."""
    rhs = multi_collapse_rhs(H, psi, w, t, targets, hbar)
    lhs = 1j * hbar * np.vdot(psi.amps, rhs.amps)
    return float(abs(lhs - np.vdot(psi.amps, H.entries @ psi.amps)))


def energy_rate(H: OperatorMatrix, psi: StateVector, w: CollapseWindow, t, targets,
                hbar: float = HBAR) -> float:
    """``d<H>/dt = 2 Re <H psi|rhs>``; reported, not expected to vanish."""
    rhs = multi_collapse_rhs(H, psi, w, t, targets, hbar)
    return float(2.0 * np.vdot(H.entries @ psi.amps, rhs.amps).real)


# ---------------------------------------------------------------------------
# endpoint exponent fit


@dataclass
class AsymptoticFit:
    alpha_hat: float
    beta_hat: float
    r_squared: float
    s_range: tuple
    n_samples: int

    def as_dict(self):
        return {
            "alpha_hat": self.alpha_hat,
            "beta_hat": self.beta_hat,
            "r_squared": self.r_squared,
            "s_range": list(self.s_range),
            "n_samples": self.n_samples,
        }


def log_weight(amps) -> float:
    """``ln sum |a|^2`` without underflow for tiny amplitudes."""
    a = np.abs(np.asarray(amps))
    m = float(a.max(initial=0.0))
    if m == 0.0:
        return -np.inf
    return 2.0 * np.log(m) + float(np.log(np.sum((a / m) ** 2)))


def fit_asymptotic_exponent(t, weights, w: CollapseWindow, *, power: int = 1, log: bool = False,
                            s_range=None, min_samples: int = 20) -> AsymptoticFit:
    """Fit ``lambda_inv ~ alpha s^-beta`` (``s = tau+T-t``) from a decaying series.

    ``weights`` scale like ``|c|^power`` for an off-target amplitude ``c``:
    ``power=1`` for amplitudes, ``power=2`` for squared weights.  With
    ``log=True`` the natural logarithms are passed instead.  The log
    derivative ``d ln w/dt / power`` estimates ``lambda_inv``; ``ln|.|`` is
    regressed on ``ln s``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(weights, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise FitError("times and weights must be 1-D arrays of equal length")
    lo, hi = s_range if s_range is not None else (w.eta * w.T, DEFAULT_FIT_S_MAX * w.T)
    tiny = 1e-9 * w.T
    if not (w.eta * w.T - tiny <= lo < hi <= FIT_S_MAX * w.T + tiny):
        raise DomainError(f"fit range must lie in [eta*T, {FIT_S_MAX}*T], got ({lo}, {hi})")
    order = np.argsort(t)
    t, y = t[order], y[order]
    s = w.end - t
    sel = (s >= lo - tiny) & (s <= hi + tiny)
    if sel.sum() < min_samples:
        raise FitError(f"only {int(sel.sum())} samples in the fit range, need {min_samples}")
    if log:
        lnw = y
        if not np.all(np.isfinite(lnw[sel])):
            raise FitError("log-weights must be finite in the fit range")
    else:
        if np.any(y[sel] <= 0) or not np.all(np.isfinite(y[sel])):
            raise FitError("weights must be positive and finite in the fit range")
        lnw = np.log(np.where(sel, y, 1.0))
    # derivative over the selected points only, so the range edges are one-sided
    ts, ls = t[sel], lnw[sel]
    rate = np.gradient(ls, ts) / power
    if np.max(np.abs(rate)) <= 1e-12 or np.any(rate >= 0):
        raise FitError("log derivative is not strictly negative; no power-law decay to fit")
    x = np.log(s[sel])
    yy = np.log(-rate)
    slope, intercept = np.polyfit(x, yy, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((yy - pred) ** 2))
    ss_tot = float(np.sum((yy - yy.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return AsymptoticFit(-float(np.exp(intercept)), -float(slope), r2, (float(lo), float(hi)),
                         int(sel.sum()))


def window_fit(H: OperatorMatrix, psi0: StateVector, w: CollapseWindow, target: CollapseTarget,
               *, n_samples: int = 400, s_range=None, hbar: float = HBAR, backend=None):
    """Integrate one window and fit the off-target decay of ``target``.

    Integration runs at pure relative tolerance so the decaying amplitudes
    stay resolved far below the usual absolute floor.  Returns
    ``(fit, s, log_weights)``.
    """
    lo, hi = s_range if s_range is not None else (w.eta * w.T, DEFAULT_FIT_S_MAX * w.T)
    opts = IntegratorOptions(rtol=1e-10, atol=1e-300)
    run = integrate_window(H, psi0, w, [target], hbar=hbar, options=opts, backend=backend)
    s = np.geomspace(lo, hi, n_samples)
    t = np.clip(w.end - s, w.tau, w.cutoff)
    frame = MaskedFrame(psi0.partition, [target])
    off = ~frame.masks[0].astype(bool)
    lw = np.array([log_weight(frame.to_frame(run.state_at(ti))[off]) for ti in t])
    fit = fit_asymptotic_exponent(t, lw, w, power=2, log=True, s_range=(lo, hi))
    return fit, s, lw


# ---------------------------------------------------------------------------
# continuity of the second derivative


@dataclass
class ContinuityReport:
    boundary: str
    mismatch: float
    left_norm: float
    right_norm: float
    h: float

    def passed(self, tol: float = 1e-4) -> bool:
        return self.mismatch <= tol


def _edge_derivative(F, h, side):
    """Derivative at the boundary from samples at ``side * j * h`` (j = 1..4)."""
    x = side * np.arange(1, len(F) + 1, dtype=float)
    V = np.vander(x, len(F), increasing=True)
    coef = np.linalg.solve(V, np.asarray(F))
    return coef[1] / h


def continuity_check(H: OperatorMatrix, psi_tau: StateVector, w: CollapseWindow, targets,
                     boundary: str = "start", *, h=None, hbar: float = HBAR,
                     floor: float = DEGENERACY_FLOOR, n_points: int = 4) -> ContinuityReport:
    """Compare one-sided second derivatives of psi at ``tau`` or ``tau+T``.

    ``psi_tau`` is the state at the window start.  Each side differentiates
    the RHS that is active there, sampled at ``j*h`` (j >= 1) away from the
    boundary and extrapolated to it.
    """
    if boundary not in ("start", "end"):
        raise DomainError(f"boundary must be 'start' or 'end', got {boundary!r}")
    h = 1e-5 * w.T if h is None else float(h)
    if not 0 < n_points * h < w.eta * w.T:
        raise DomainError("finite-difference stencil must fit inside the endpoint cutoff")
    Hm = H.entries
    schro = Propagator(H, hbar)

    def f_schro(y):
        return (-1j / hbar) * (Hm @ y)

    def f_collapse(t, y):
        return multi_collapse_rhs(H, psi_tau.with_amps(y), w, t, targets, hbar, floor).amps

    js = np.arange(1, n_points + 1)
    if boundary == "start":
        left = [f_schro(schro(psi_tau.amps, -j * h)) for j in js]
        ys = rk4_fixed(f_collapse, w.tau, psi_tau.amps, h, n_points)
        right = [f_collapse(w.tau + j * h, ys[j]) for j in js]
        y_end = None
    else:
        f_end = f_eval(w, w.end)
        if abs(f_end) <= SUM_TOL:
            run = integrate_window(H, psi_tau, w, targets, hbar=hbar)
            frame = run.frame
            keep = frame.joint
            Hr = frame.operator(H)
            Hp = np.where(np.outer(keep, keep), Hr, 0.0)

            def f_tail(y):
                return frame.from_frame((-1j / hbar) * (Hp @ frame.to_frame(y)))

            left = [f_tail(run.state_at(w.end - j * h)) for j in js]
            y_end = run.final.amps
        else:
            # f stays positive up to tau+T: integrate straight to the end
            if np.min(f_eval(w, np.linspace(w.tau, w.end, 2001))) <= 0:
                raise DomainError("window rate is singular inside [tau, tau+T]")

            def f_direct(t, y):
                lam = lambda_inv(w, t, check=False)
                total = np.zeros_like(y)
                for tg in targets:
                    on, off, a, q = split_target(y, psi_tau.partition, tg)
                    total += off - (q / a) * on
                return lam * total + f_schro(y)

            t_mid = w.end - n_points * h
            sol = dp54(f_direct, w.tau, psi_tau.amps, t_mid, rtol=1e-11, atol=1e-14)
            ys = rk4_fixed(f_direct, t_mid, sol.ys[-1], h, n_points)
            # ys[n_points - j] sits at w.end - j*h
            left = [f_direct(w.end - j * h, ys[n_points - j]) for j in js]
            y_end = finalize_collapse(psi_tau.with_amps(ys[-1]), targets, floor).amps
        right = [f_schro(schro(y_end, j * h)) for j in js]
    d_left = _edge_derivative(left, h, -1.0)
    d_right = _edge_derivative(right, h, 1.0)
    nl, nr = float(np.linalg.norm(d_left)), float(np.linalg.norm(d_right))
    mismatch = float(np.linalg.norm(d_left - d_right)) / max(nl, nr, floor)
    return ContinuityReport(boundary, mismatch, nl, nr, h)


# ---------------------------------------------------------------------------
# factorization


@dataclass
class FactorizationReport:
    max_deviation: float
    times: np.ndarray
    deviations: np.ndarray


def factorization_check(H1, Henv, psi1: StateVector, chi: StateVector, w: CollapseWindow,
                        target: CollapseTarget, *, coupling=None, grid: int = 41,
                        hbar: float = HBAR, options: IntegratorOptions | None = None,
                        backend=None) -> FactorizationReport:
    """Max over the grid of ``||psi(t) - psi1(t) (x) chi(t)||``.

    The composite Hamiltonian is ``H1 (x) I + I (x) Henv`` plus an optional
    composite ``coupling`` (for negative controls).  ``target`` acts on
    subsystem 0 of the standalone subsystem.
    """
    h1 = H1.entries if isinstance(H1, OperatorMatrix) else np.asarray(H1, dtype=complex)
    he = Henv.entries if isinstance(Henv, OperatorMatrix) else np.asarray(Henv, dtype=complex)
    d1, de = h1.shape[0], he.shape[0]
    if psi1.amps.size != d1 or chi.amps.size != de:
        raise DomainError("state factors do not match the Hamiltonian blocks")
    if target.subsystem != 0:
        raise DomainError("target must act on subsystem 0 of the standalone factor")
    dims = (d1, de)
    Hc = np.kron(h1, np.eye(de)) + np.kron(np.eye(d1), he)
    if coupling is not None:
        Hc = Hc + (coupling.entries if isinstance(coupling, OperatorMatrix) else coupling)
    Hc = OperatorMatrix.from_matrix(dims, Hc)
    psi_c = StateVector.from_amps(dims, np.kron(psi1.amps, chi.amps))
    opts = options or IntegratorOptions(rtol=1e-11, atol=1e-14)
    comp = integrate_window(Hc, psi_c, w, [target], grid, hbar=hbar, options=opts,
                            backend=backend)
    sub_part = TensorPartition((d1,))
    alone = integrate_window(OperatorMatrix(sub_part, h1, True), StateVector(sub_part, psi1.amps),
                             w, [target], grid, hbar=hbar, options=opts, backend=backend)
    env = Propagator(he, hbar)
    times = np.array([smp.t for smp in comp.samples])
    dev = np.array([
        np.linalg.norm(a.psi.amps - np.kron(b.psi.amps, env(chi.amps, a.t - w.tau)))
        for a, b in zip(comp.samples, alone.samples)
    ])
    return FactorizationReport(float(dev.max()), times, dev)


def position_coupling(X1, B, g, dims):
    """``g X1 (x) B`` embedded on subsystems 0 and 1 of ``dims``."""
    op = g * np.kron(np.asarray(X1, dtype=complex), np.asarray(B, dtype=complex))
    return OperatorMatrix.from_matrix(dims, embed_operator(op, [0, 1], dims))
