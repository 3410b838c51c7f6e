"""Schrodinger and collapse right-hand sides, and the window integrator.

The collapse equation for targets ``j`` (disjoint subsystems) is

    i hbar dpsi/dt = i hbar lambda_inv(t) (m - sum_j P_j / p_j) psi + H psi

with ``P_j`` the projector onto the selected basis vector of subsystem ``s_j``
and ``p_j = ||P_j psi||^2 / ||psi||^2``.  Using the relative weight makes
``<psi|G|psi> = 0`` hold for any norm, not only on the unit sphere.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .basis_solver import PreferredBasis
from .errors import CollapseFailed, DegenerateTarget, DomainError
from .hilbert import (
    DEGENERACY_FLOOR,
    OperatorMatrix,
    StateVector,
    TensorPartition,
    from_subsystem_matrix,
    kron_all,
    subsystem_matrix,
)
from .ode import dp54, hermite_eval
from .window import CollapseWindow, lambda_inv

HBAR = 1.0


@dataclass(frozen=True)
class CollapseTarget:
    """Subsystem ``subsystem`` collapsing onto column ``k_tilde`` of ``basis``."""

    subsystem: int
    basis: PreferredBasis
    k_tilde: int

    def __post_init__(self):
        if self.basis.subsystem != self.subsystem:
            raise DomainError(
                f"basis belongs to subsystem {self.basis.subsystem}, target is {self.subsystem}"
            )
        if not 0 <= self.k_tilde < self.basis.dim:
            raise DomainError(f"k_tilde={self.k_tilde} out of range for dim {self.basis.dim}")

    @property
    def vector(self) -> np.ndarray:
        return self.basis.U[:, self.k_tilde]


@dataclass
class TrajectorySample:
    t: float
    psi: StateVector
    weights: np.ndarray
    energy: float
    norm: float


@dataclass(frozen=True)
class IntegratorOptions:
    rtol: float = 1e-9
    atol: float = 1e-12
    cap_frac: float = 0.1
    max_steps: int = 5_000_000
    floor: float = DEGENERACY_FLOOR


def _check_targets(partition: TensorPartition, targets: Sequence[CollapseTarget]):
    seen = set()
    for tg in targets:
        partition.check_subsystem(tg.subsystem)
        if tg.basis.dim != partition.dims[tg.subsystem]:
            raise DomainError(
                f"target basis dim {tg.basis.dim} != subsystem {tg.subsystem} dim "
                f"{partition.dims[tg.subsystem]}"
            )
        if tg.subsystem in seen:
            raise DomainError(f"targets overlap on subsystem {tg.subsystem}")
        seen.add(tg.subsystem)


def project_target(amps, partition: TensorPartition, target: CollapseTarget):
    """``P psi`` with ``P = |u><u|`` on the target subsystem, identity elsewhere."""
    s = target.subsystem
    u = target.vector
    mat = subsystem_matrix(amps, partition.dims, s)
    return from_subsystem_matrix(np.outer(u, u.conj() @ mat), partition.dims, s)


def split_target(amps, partition: TensorPartition, target: CollapseTarget):
    """``(P psi, (1-P) psi, ||P psi||^2, ||(1-P) psi||^2)``.

    The off-target part is assembled from the other basis columns rather
    than by subtraction, so its rounding error scales with its own size.
    """
    s = target.subsystem
    U = target.basis.U
    k = target.k_tilde
    mat = subsystem_matrix(amps, partition.dims, s)
    c = U.conj().T @ mat
    others = np.delete(np.arange(U.shape[1]), k)
    on = from_subsystem_matrix(np.outer(U[:, k], c[k]), partition.dims, s)
    off = from_subsystem_matrix(U[:, others] @ c[others], partition.dims, s)
    a = float(np.vdot(c[k], c[k]).real)
    q = float(np.vdot(c[others], c[others]).real)
    return on, off, a, q


# ---------------------------------------------------------------------------
# right-hand sides (reference route, original frame)


def schrodinger_rhs(H: OperatorMatrix, psi: StateVector, hbar: float = HBAR) -> StateVector:
    if H.partition.total_dim != psi.partition.total_dim:
        raise DomainError("Hamiltonian and state dimensions differ")
    return psi.with_amps((-1j / hbar) * (H.entries @ psi.amps))


def generator(psi: StateVector, w: CollapseWindow, t: float,
              targets: Sequence[CollapseTarget], floor: float = DEGENERACY_FLOOR):
    """Non-Hamiltonian part ``lambda_inv(t) (m - sum_j P_j/p_j) psi``."""
    part = psi.partition
    _check_targets(part, targets)
    amps = psi.amps
    total = np.zeros_like(amps)
    for tg in targets:
        on, off, a, q = split_target(amps, part, tg)
        if a <= floor * (a + q):
            raise DegenerateTarget(a / (a + q) if a + q else 0.0, floor, t)
        total += off - (q / a) * on
    if not targets:
        return total
    return lambda_inv(w, t) * total


def collapse_rhs(H, psi, w, t, target: CollapseTarget, hbar: float = HBAR,
                 floor: float = DEGENERACY_FLOOR) -> StateVector:
    return multi_collapse_rhs(H, psi, w, t, [target], hbar, floor)


def multi_collapse_rhs(H, psi, w, t, targets, hbar: float = HBAR,
                       floor: float = DEGENERACY_FLOOR) -> StateVector:
    g = generator(psi, w, t, targets, floor)
    return psi.with_amps(g + (-1j / hbar) * (H.entries @ psi.amps))


# ---------------------------------------------------------------------------
# exact propagation for stationary H


class Propagator:
    """``exp(-i H dt / hbar)`` through a cached Hermitian eigendecomposition."""

    def __init__(self, H, hbar: float = HBAR):
        m = H.entries if isinstance(H, OperatorMatrix) else np.asarray(H, dtype=complex)
        self.evals, self.evecs = np.linalg.eigh(m)
        self.hbar = hbar

    def __call__(self, amps, dt):
        c = self.evecs.conj().T @ amps
        return self.evecs @ (np.exp(-1j * self.evals * dt / self.hbar) * c)


# ---------------------------------------------------------------------------
# window integration


class MaskedFrame:
    """Frame in which every target basis is the reference basis.

    ``W`` is the tensor product of the target unitaries (identity on other
    subsystems); each projector becomes a 0/1 mask over composite indices.
    """

    def __init__(self, partition: TensorPartition, targets: Sequence[CollapseTarget]):
        _check_targets(partition, targets)
        self.partition = partition
        self.targets = list(targets)
        by_sub = {tg.subsystem: tg for tg in targets}
        mats = [by_sub[s].basis.U if s in by_sub else np.eye(d)
                for s, d in enumerate(partition.dims)]
        self.identity = not targets
        self.W = None if self.identity else kron_all(mats)
        idx = np.indices(partition.dims).reshape(partition.n_subsystems, -1)
        masks = [idx[tg.subsystem] == tg.k_tilde for tg in targets]
        self.masks = np.array(masks, dtype=np.int8).reshape(len(masks), partition.total_dim)
        self.joint = np.all(self.masks.astype(bool), axis=0) if targets else None

    def operator(self, H) -> np.ndarray:
        m = H.entries if isinstance(H, OperatorMatrix) else np.asarray(H, dtype=complex)
        return m if self.identity else self.W.conj().T @ m @ self.W

    def to_frame(self, amps):
        return np.asarray(amps) if self.identity else self.W.conj().T @ amps

    def from_frame(self, amps):
        return np.asarray(amps) if self.identity else self.W @ amps

    def off_target_weights(self, y):
        """Per-target weight outside the selected component (frame amplitudes)."""
        w = np.abs(y) ** 2
        return np.array([w[~m.astype(bool)].sum() for m in self.masks])


@dataclass
class WindowRun:
    """Result of :func:`integrate_window`."""

    window: CollapseWindow
    targets: list
    samples: list
    final: StateVector
    pre_projection: StateVector | None
    residual_weights: np.ndarray
    n_steps: int
    n_rejected: int
    step_times: np.ndarray = field(repr=False, default=None)
    step_states: np.ndarray = field(repr=False, default=None)
    frame: MaskedFrame = field(repr=False, default=None)
    _tail: object = field(repr=False, default=None)
    _dense: tuple = field(repr=False, default=None)

    def states_at_steps(self):
        """Accepted-step states mapped back to the reference frame."""
        if self.step_states is None:
            raise DomainError("integrate_window was called with record_steps=False")
        return self.step_times, np.array([self.frame.from_frame(y) for y in self.step_states])

    def state_at(self, t: float) -> np.ndarray:
        """Amplitudes at time ``t`` in the window (dense output or projected tail)."""
        ts, ys, fs = self._dense
        if t <= ts[-1] or self._tail is None:
            y = ys[0] if len(ts) == 1 else hermite_eval(ts, ys, fs, t)
        else:
            y = self._tail(t)
        return self.frame.from_frame(y)


def _monitor_weights(amps, partition, monitor):
    if monitor is None:
        return np.array([])
    s, U = monitor
    c = np.asarray(U).conj().T @ subsystem_matrix(amps, partition.dims, s)
    return np.einsum("ke,ke->k", c.conj(), c).real


def make_sample(t, amps, partition, H, monitor) -> TrajectorySample:
    psi = StateVector(partition, amps)
    energy = float(np.vdot(amps, H.entries @ amps).real)
    return TrajectorySample(float(t), psi, _monitor_weights(amps, partition, monitor), energy,
                            float(np.linalg.norm(amps)))


def finalize_collapse(psi: StateVector, targets: Sequence[CollapseTarget],
                      floor: float = DEGENERACY_FLOOR) -> StateVector:
    """Exact end-state projection ``(prod_j P_j) psi`` renormalized."""
    part = psi.partition
    _check_targets(part, targets)
    amps = psi.amps
    for tg in targets:
        amps = project_target(amps, part, tg)
    n = float(np.linalg.norm(amps))
    if n < floor:
        raise CollapseFailed(f"projected norm {n:.3e} below floor {floor:.1e}", norm=n)
    return psi.with_amps(amps / n)


def _time_grid(grid, w):
    if grid is None:
        return np.array([w.tau, w.end])
    if np.isscalar(grid):
        n = int(grid)
        if n < 2:
            raise DomainError("grid needs at least two points")
        return np.linspace(w.tau, w.end, n)
    g = np.asarray(grid, dtype=float)
    if np.any(g < w.tau) or np.any(g > w.end):
        raise DomainError("grid times must lie in [tau, tau+T]")
    return g


def integrate_window(H: OperatorMatrix, psi0: StateVector, w: CollapseWindow,
                     targets: Sequence[CollapseTarget] = (), grid=None, *,
                     hbar: float = HBAR, options: IntegratorOptions | None = None,
                     record_steps: bool = False, monitor=None, backend=None) -> WindowRun:
    """Integrate one collapse window and apply the end-state projection.

    With targets, the adaptive integration runs to ``tau+T-eta*T``; the state
    is then projected and carried to ``tau+T`` by the Hamiltonian restricted
    to the selected subspace.  Without targets it is plain Schrodinger
    evolution over the whole window.

    ``monitor = (subsystem, U)`` selects the basis for sample weights; it
    defaults to the first target's basis.
    """
    opts = options or IntegratorOptions()
    part = psi0.partition
    if H.partition.total_dim != part.total_dim:
        raise DomainError("Hamiltonian and state dimensions differ")
    frame = MaskedFrame(part, targets)
    Hr = frame.operator(H)
    y0 = frame.to_frame(psi0.amps)
    if monitor is None and targets:
        monitor = (targets[0].subsystem, targets[0].basis.U)
    for m in frame.masks:
        wts = np.abs(y0) ** 2
        a, tot = float(wts[m.astype(bool)].sum()), float(wts.sum())
        if a <= opts.floor * tot:
            raise DegenerateTarget(a / tot if tot else 0.0, opts.floor, w.tau)

    kern = kernels.get_backend(backend)
    t1 = w.cutoff if targets else w.end
    cap = opts.cap_frac if targets else 0.0
    times = _time_grid(grid, w)
    # land exactly on grid times so samples need no interpolation
    stops = np.unique(np.append(times[(times > w.tau) & (times < t1)], t1))
    ts_parts, ys_parts, fs_parts = [], [], []
    n_rej = 0
    t_a, y_a, h0, budget = w.tau, y0, 0.0, opts.max_steps
    if not targets:
        # nothing collapses: exact propagation from tau, served through the tail
        stops = []
        ts_parts, ys_parts = [np.array([w.tau])], [y0[None, :]]
        fs_parts = [((-1j / hbar) * (Hr @ y0))[None, :]]
    for t_b in stops:
        ts, ys, fs, rej, status, st_t, st_v = kern.integrate_collapse(
            Hr, y_a, frame.masks, np.asarray(w.coeffs), w.tau, w.T, w.gamma, hbar, t_a, t_b,
            opts.rtol, opts.atol, cap, budget, opts.floor, h0,
        )
        kernels.raise_for_status(status, st_t, st_v, opts.floor)
        n_rej += rej
        budget -= len(ts) - 1
        skip = 1 if ts_parts else 0
        ts_parts.append(ts[skip:])
        ys_parts.append(ys[skip:])
        fs_parts.append(fs[skip:])
        if len(ts) > 1:
            h0 = float(np.max(np.diff(ts[-3:])))
        t_a, y_a = t_b, ys[-1]
    ts = np.concatenate(ts_parts)
    ys = np.concatenate(ys_parts)
    fs = np.concatenate(fs_parts)

    tail = None
    pre = None
    residual = np.zeros(len(targets))
    if targets:
        y_cut = ys[-1]
        pre = StateVector(part, frame.from_frame(y_cut))
        residual = frame.off_target_weights(y_cut) / float(np.vdot(y_cut, y_cut).real)
        keep = frame.joint
        y_proj = np.where(keep, y_cut, 0.0)
        n = float(np.linalg.norm(y_proj))
        if n < opts.floor:
            raise CollapseFailed(f"projected norm {n:.3e} below floor {opts.floor:.1e}", norm=n)
        y_proj = y_proj / n
        sub = np.flatnonzero(keep)
        prop = Propagator(Hr[np.ix_(sub, sub)], hbar)
        t_cut = ts[-1]

        def tail(t, _y=y_proj[sub], _sub=sub):
            out = np.zeros(part.total_dim, dtype=complex)
            out[_sub] = prop(_y, t - t_cut)
            return out

        y_end = tail(w.end)
        y_end /= np.linalg.norm(y_end)
    else:
        prop = Propagator(Hr, hbar)

        def tail(t, _y=y0):
            return prop(_y, t - w.tau)

        y_end = tail(w.end)

    samples = []
    for t in times:
        i = int(np.searchsorted(ts, t))
        if i < len(ts) and ts[i] == t:
            y = ys[i]
        elif t <= ts[-1]:
            y = hermite_eval(ts, ys, fs, t)
        elif tail is not None:
            y = tail(t)
        else:
            y = ys[-1]
        if t == w.end:
            y = y_end
        samples.append(make_sample(t, frame.from_frame(y), part, H, monitor))

    run = WindowRun(
        window=w, targets=list(targets), samples=samples,
        final=StateVector(part, frame.from_frame(y_end)), pre_projection=pre,
        residual_weights=residual, n_steps=len(ts) - 1, n_rejected=int(n_rej),
        frame=frame, _tail=tail, _dense=(ts, ys, fs),
    )
    if record_steps:
        run.step_times, run.step_states = ts, ys
    return run


# ---------------------------------------------------------------------------
# scalar model


@dataclass
class ScalarOracleResult:
    s: np.ndarray
    numeric: np.ndarray  # i hbar c(s)
    closed_form: np.ndarray  # i hbar c(s) from the analytic solution
    kind: str


def scalar_oracle(alpha, beta, gamma_src, hbar, s_grid, *, c0=None, rtol=1e-11):
    """Scalar model ``i hbar c' = i hbar alpha s^-beta c + gamma_src``, ``s = tau+T-t``.

    For ``beta == 1`` the closed form is ``i hbar c = -gamma_src s / (alpha+1)``
    and the numeric run starts on it.  For ``beta > 1`` the homogeneous
    solution ``c ~ exp(alpha/(beta-1) s^(1-beta))`` is returned as the closed
    form (exact when ``gamma_src == 0``).
    """
    alpha = complex(alpha)
    if alpha.real >= 0:
        raise DomainError(f"real(alpha) must be < 0, got {alpha}")
    if beta < 1:
        raise DomainError(f"beta must be >= 1, got {beta}")
    s = np.asarray(s_grid, dtype=float)
    if s.ndim != 1 or s.size < 1 or np.any(s <= 0) or np.any(np.diff(s) >= 0):
        raise DomainError("s_grid must be positive and strictly decreasing")

    if beta == 1:
        closed = -gamma_src * s / (alpha + 1.0)
        kind = "particular"
    else:
        start = 1.0 if c0 is None else c0
        closed = 1j * hbar * start * np.exp(
            alpha / (beta - 1.0) * (s ** (1.0 - beta) - s[0] ** (1.0 - beta))
        )
        kind = "homogeneous" if gamma_src == 0 else "homogeneous-asymptotic"
    y0 = closed[0] / (1j * hbar) if c0 is None or beta == 1 else c0

    def fun(t, y):
        return alpha * (-t) ** (-beta) * y + gamma_src / (1j * hbar)

    num = [y0]
    y = np.array([y0], dtype=complex)
    for a, b in zip(s[:-1], s[1:]):
        sol = dp54(fun, -a, y, -b, rtol=rtol, atol=1e-300)
        y = sol.ys[-1]
        num.append(y[0])
    return ScalarOracleResult(s, 1j * hbar * np.array(num), np.asarray(closed), kind)
