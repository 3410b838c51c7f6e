"""Preferred-basis determination on a subsystem.

For a basis ``U`` of subsystem ``s`` with columns ``u_k``, the conditional
states are ``phi_k = <u_k|psi>`` and the product vectors
``Phi_k = u_k (x) phi_k/||phi_k||``.  The matrix ``g_{k'k} = <Phi_k'|H|Phi_k>``
has the energy candidates on its diagonal; the residual
``R = sum_{k'>k} |g_{k'k}|^2`` vanishes when ``U`` is a preferred basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from . import kernels
from .errors import DomainError
from .hilbert import (
    DEGENERACY_FLOOR,
    HERMITIAN_TOL,
    OperatorMatrix,
    StateVector,
    hermitian_defect,
    subsystem_matrix,
)

UNITARY_TOL = 1e-10
COMPLEX_E_TOL = 1e-10


def _gauge_fix(U):
    """Rotate each column so its largest-magnitude entry is real positive."""
    U = np.array(U, dtype=complex)
    for k in range(U.shape[1]):
        i = int(np.argmax(np.abs(U[:, k])))
        a = U[i, k]
        if a != 0:
            U[:, k] *= np.conj(a) / abs(a)
            U[i, k] = abs(a)
    return U


def unitarity_defect(U) -> float:
    U = np.asarray(U)
    return float(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[1]))))


@dataclass(frozen=True)
class PreferredBasis:
    """Orthonormal basis of one subsystem, columns in the reference basis."""

    subsystem: int
    U: np.ndarray = field(repr=False)

    def __post_init__(self):
        U = np.array(self.U, dtype=complex)
        if U.ndim != 2 or U.shape[0] != U.shape[1]:
            raise DomainError(f"basis matrix must be square, got shape {U.shape}")
        defect = unitarity_defect(U)
        if defect > UNITARY_TOL:
            raise DomainError(f"basis is not unitary: max|U^H U - I| = {defect:.2e}")
        U.setflags(write=False)
        object.__setattr__(self, "U", U)

    @property
    def dim(self) -> int:
        return self.U.shape[0]

    @classmethod
    def reference(cls, subsystem: int, dim: int) -> "PreferredBasis":
        return cls(subsystem, np.eye(dim, dtype=complex))

    def gauge_fixed(self) -> "PreferredBasis":
        return PreferredBasis(self.subsystem, _gauge_fix(self.U))


@dataclass
class BasisSolution:
    basis: PreferredBasis
    E: np.ndarray
    residual: float
    iterations: int
    converged: bool
    seed: str = ""
    seed_residuals: dict = field(default_factory=dict)
    vacuous: list = field(default_factory=list)


@dataclass(frozen=True)
class SolverOptions:
    n_random: int = 8
    use_identity: bool = True
    use_mean_field: bool = True
    max_sweeps: int = 60
    tol: float = 1e-10
    stagnation_rtol: float = 1e-12
    stagnation_sweeps: int = 3
    n_theta: int = 24
    n_phi: int = 12
    rounds: int = 8
    seed: int = 0
    floor: float = DEGENERACY_FLOOR
    backend: str | None = None
    polish_below: float = 1e-2
    polish_maxiter: int = 400


class _Problem:
    """``H`` and ``psi`` reordered so subsystem ``s`` is the leading factor."""

    def __init__(self, H: OperatorMatrix, psi: StateVector, s: int, floor: float):
        part = psi.partition
        part.check_subsystem(s)
        if H.partition.dims != part.dims:
            raise DomainError(f"operator dims {H.partition.dims} != state dims {part.dims}")
        n = part.n_subsystems
        dims = part.dims
        self.d = dims[s]
        self.env = part.total_dim // self.d
        t = np.moveaxis(H.entries.reshape(dims + dims), [s, n + s], [0, n])
        self.H = t.reshape(part.total_dim, part.total_dim)
        self.Psi = subsystem_matrix(psi.amps, dims, s)
        self.floor = floor

    def conditionals(self, U):
        phi = U.conj().T @ self.Psi
        norms = np.linalg.norm(phi, axis=1)
        ok = norms >= self.floor
        return phi, norms, ok

    def product_vectors(self, U, phi, norms, ok):
        safe = np.where(ok, norms, 1.0)
        hat = np.where(ok[:, None], phi / safe[:, None], 0.0)
        # Phi[:, k] = u_k (x) hat_k
        return np.einsum("ik,ke->iek", U, hat).reshape(self.d * self.env, self.d)

    def g(self, U):
        phi, norms, ok = self.conditionals(U)
        Phi = self.product_vectors(U, phi, norms, ok)
        return Phi.conj().T @ (self.H @ Phi), ok

    def mean_field(self):
        rho_env = self.Psi.T @ self.Psi.conj()  # rho[e, e'] = sum_i psi_ie conj(psi_ie')
        t = self.H.reshape(self.d, self.env, self.d, self.env)
        return np.einsum("iejf,fe->ij", t, rho_env)


def _residual_from_g(g, ok):
    low = np.tril(np.abs(g) ** 2, -1)
    keep = np.outer(ok, ok)
    return float(low[keep].sum())


def residual_matrix(U, H: OperatorMatrix, psi: StateVector, s: int,
                    floor: float = DEGENERACY_FLOOR, *, return_vacuous: bool = False):
    """Matrix ``g_{k'k} = <Phi_k'|H|Phi_k>``.

    Rows and columns of degenerate conditional states are zero; with
    ``return_vacuous`` their indices are returned as well.
    """
    prob = _Problem(H, psi, s, floor)
    U = np.asarray(U, dtype=complex)
    if U.shape != (prob.d, prob.d):
        raise DomainError(f"U has shape {U.shape}, subsystem dim is {prob.d}")
    g, ok = prob.g(U)
    if return_vacuous:
        return g, [int(k) for k in np.flatnonzero(~ok)]
    return g


def residual_norm(U, H, psi, s, floor: float = DEGENERACY_FLOOR) -> float:
    """``sum_{k'>k} |g_{k'k}|^2`` over non-degenerate indices."""
    g, vac = residual_matrix(U, H, psi, s, floor, return_vacuous=True)
    ok = np.ones(g.shape[0], dtype=bool)
    ok[vac] = False
    return _residual_from_g(g, ok)


def random_unitary(rng, d):
    """Haar-distributed unitary from the QR of a complex Gaussian."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    ph = np.diagonal(r) / np.abs(np.diagonal(r))
    return q * ph


def _sweeps(prob: _Problem, U, opts: SolverOptions, kern):
    """Jacobi sweeps of complex pair rotations; returns ``(U, R, sweeps)``."""
    U = np.array(U, dtype=complex)
    d = prob.d
    g, ok = prob.g(U)
    R = _residual_from_g(g, ok)
    stagnant = 0
    sweeps = 0
    for sweeps in range(1, opts.max_sweeps + 1):
        if R < opts.tol:
            sweeps -= 1
            break
        phi, norms, ok = prob.conditionals(U)
        Phi = prob.product_vectors(U, phi, norms, ok)
        HPhi = prob.H @ Phi
        for p in range(d - 1):
            for q in range(p + 1, d):
                others = [j for j in range(d) if j != p and j != q and ok[j]]
                up, uq = U[:, p], U[:, q]
                fp, fq = phi[p], phi[q]
                A = np.stack([np.kron(up, fp), np.kron(up, fq), np.kron(uq, fp), np.kron(uq, fq)])
                Ac = A.conj()
                M = Ac @ HPhi[:, others]
                Q = Ac @ (prob.H @ A.T)
                Gpp = float(np.vdot(fp, fp).real)
                Gqq = float(np.vdot(fq, fq).real)
                Gpq = complex(np.vdot(fp, fq))
                cur = float(kern.pair_objective(0.0, 0.0, M, Q, Gpp, Gqq, Gpq, prob.floor))
                th, ph, val = kern.optimize_pair(M, Q, Gpp, Gqq, Gpq, prob.floor,
                                                 opts.n_theta, opts.n_phi, opts.rounds)
                if not val < cur:
                    continue
                c = np.cos(th)
                sn = np.sin(th) * np.exp(1j * ph)
                U[:, p], U[:, q] = c * up + sn * uq, -np.conj(sn) * up + c * uq
                phi[p], phi[q] = c * fp + np.conj(sn) * fq, -sn * fp + c * fq
                for k in (p, q):
                    norms[k] = np.linalg.norm(phi[k])
                    ok[k] = norms[k] >= prob.floor
                    hat = phi[k] / norms[k] if ok[k] else np.zeros_like(phi[k])
                    Phi[:, k] = np.kron(U[:, k], hat)
                    HPhi[:, k] = prob.H @ Phi[:, k]
        # re-orthonormalize against round-off drift
        qm, rm = np.linalg.qr(U)
        U = qm * (np.diagonal(rm) / np.abs(np.diagonal(rm)))
        g, ok = prob.g(U)
        R_new = _residual_from_g(g, ok)
        if R > 0 and (R - R_new) / R < opts.stagnation_rtol:
            stagnant += 1
        else:
            stagnant = 0
        R = R_new
        if stagnant >= opts.stagnation_sweeps:
            break
    return U, R, sweeps


def _hermitian_from(x, d):
    iu = np.triu_indices(d, 1)
    m = len(iu[0])
    A = np.zeros((d, d), dtype=complex)
    A[iu] = x[:m] + 1j * x[m:2 * m]
    return A + A.conj().T + np.diag(x[2 * m:])


def _polish(prob: _Problem, U, opts: SolverOptions):
    """BFGS on ``U exp(iA)`` over Hermitian ``A``; Jacobi sweeps converge only linearly."""
    d = prob.d

    def R(x):
        g, ok = prob.g(U @ expm(1j * _hermitian_from(x, d)))
        return _residual_from_g(g, ok)

    res = minimize(R, np.zeros(d * d), method="BFGS",
                   options={"gtol": 1e-14, "maxiter": opts.polish_maxiter})
    V = U @ expm(1j * _hermitian_from(res.x, d))
    qm, rm = np.linalg.qr(V)
    V = qm * (np.diagonal(rm) / np.abs(np.diagonal(rm)))
    g, ok = prob.g(V)
    return V, _residual_from_g(g, ok), int(res.nit)


def solve_preferred_basis(H: OperatorMatrix, psi: StateVector, s: int,
                          opts: SolverOptions | None = None) -> BasisSolution:
    """Minimize the residual over unitary bases of subsystem ``s`` (multi-start)."""
    opts = opts or SolverOptions()
    if not psi.is_normalized(1e-9):
        raise DomainError(f"state must be normalized, norm is {psi.norm():.12g}")
    prob = _Problem(H, psi, s, opts.floor)
    kern = kernels.get_backend(opts.backend)
    d = prob.d
    seeds = []
    if opts.use_mean_field:
        heff = prob.mean_field()
        seeds.append(("mean-field", np.linalg.eigh(0.5 * (heff + heff.conj().T))[1]))
    if opts.use_identity:
        seeds.append(("identity", np.eye(d, dtype=complex)))
    rng = np.random.default_rng(opts.seed)
    for i in range(opts.n_random):
        seeds.append((f"random-{i}", random_unitary(rng, d)))
    if not seeds:
        raise DomainError("solver options leave no starting bases")

    best = None
    seed_res = {}
    for name, U0 in seeds:
        if d == 1:
            U, R, it = U0, 0.0, 0
        else:
            U, R, it = _sweeps(prob, U0, opts, kern)
            if opts.tol <= R < opts.polish_below:
                V, Rp, extra = _polish(prob, U, opts)
                if Rp < R:
                    U, R, it = V, Rp, it + extra
        seed_res[name] = R
        if best is None or R < best[1]:
            best = (U, R, it, name)
        if R < opts.tol * 1e-2:
            break
    U, _, it, name = best
    U = _gauge_fix(U)
    g, ok = prob.g(U)
    E = np.where(ok, np.diagonal(g), np.nan)
    order = np.argsort(np.where(np.isnan(E.real), np.inf, E.real), kind="stable")
    U = U[:, order]
    g, ok = prob.g(U)
    R = _residual_from_g(g, ok)
    E = np.diagonal(g).copy()
    E[~ok] = np.nan
    if np.all(np.abs(E.imag[ok]) <= COMPLEX_E_TOL):
        E = E.real.copy()
    return BasisSolution(
        basis=PreferredBasis(s, U), E=E, residual=R, iterations=it,
        converged=bool(R < opts.tol), seed=name, seed_residuals=seed_res,
        vacuous=[int(k) for k in np.flatnonzero(~ok)],
    )


def isolated_eigenbasis(H1, subsystem: int = 0):
    """Eigenbasis of a subsystem Hamiltonian, ascending, gauge fixed."""
    m = H1.entries if isinstance(H1, OperatorMatrix) else np.asarray(H1, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"Hamiltonian must be square, got shape {m.shape}")
    defect = hermitian_defect(m)
    if defect > HERMITIAN_TOL * max(1.0, float(np.max(np.abs(m)))):
        raise DomainError(f"Hamiltonian is not Hermitian (defect {defect:.2e})")
    evals, evecs = np.linalg.eigh(m)
    return PreferredBasis(subsystem, _gauge_fix(evecs)), evals


def dof_count(d: int):
    """``(constraints, unknowns)`` for a subsystem of dimension ``d``."""
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    constraints = d * (d + 1) // 2 + d * (d + 1) // 2
    unknowns = d * d + d
    assert constraints == unknowns
    return constraints, unknowns
