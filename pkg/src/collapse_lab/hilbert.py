"""Finite-dimensional tensor-product states and operators.

Composite indices are row-major: the leftmost subsystem index varies slowest.
Every public operation here is a pure function of immutable inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from .errors import DegenerateConditionalState, DomainError

HERMITIAN_TOL = 1e-12
DEGENERACY_FLOOR = 1e-12


def _frozen(arr):
    arr = np.array(arr, dtype=complex)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TensorPartition:
    """Ordered subsystem dimensions of a composite space."""

    dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise DomainError("a partition needs at least one subsystem")
        if any(d < 1 for d in dims):
            raise DomainError(f"subsystem dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_subsystems(self) -> int:
        return len(self.dims)

    def check_subsystem(self, s: int) -> int:
        if not 0 <= s < len(self.dims):
            raise DomainError(f"subsystem {s} out of range for dims {self.dims}")
        return s

    def complement(self, s) -> "TensorPartition":
        """Partition of the space left after removing subsystem(s) ``s``."""
        drop = {s} if np.isscalar(s) else set(s)
        for k in drop:
            self.check_subsystem(k)
        rest = tuple(d for k, d in enumerate(self.dims) if k not in drop)
        return TensorPartition(rest or (1,))


def flatten_index(partition: TensorPartition, indices: Sequence[int]) -> int:
    """Row-major composite index of per-subsystem ``indices``."""
    if len(indices) != partition.n_subsystems:
        raise DomainError(f"expected {partition.n_subsystems} indices, got {len(indices)}")
    flat = 0
    for i, d in zip(indices, partition.dims):
        if not 0 <= i < d:
            raise DomainError(f"index {i} out of range for dimension {d}")
        flat = flat * d + int(i)
    return flat


def unflatten_index(partition: TensorPartition, index: int) -> tuple:
    if not 0 <= index < partition.total_dim:
        raise DomainError(f"composite index {index} out of range [0, {partition.total_dim})")
    return tuple(int(i) for i in np.unravel_index(index, partition.dims))


@dataclass(frozen=True)
class StateVector:
    """Amplitude vector over a composite index space."""

    partition: TensorPartition
    amps: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amps).reshape(-1)
        if amps.size != self.partition.total_dim:
            raise DomainError(
                f"state has {amps.size} amplitudes, partition needs {self.partition.total_dim}"
            )
        if not np.all(np.isfinite(amps)):
            raise DomainError("state amplitudes must be finite")
        object.__setattr__(self, "amps", amps)

    @classmethod
    def from_amps(cls, dims, amps) -> "StateVector":
        return cls(TensorPartition(tuple(dims)), amps)

    @classmethod
    def basis(cls, dims, indices) -> "StateVector":
        part = TensorPartition(tuple(dims))
        amps = np.zeros(part.total_dim, dtype=complex)
        amps[flatten_index(part, indices)] = 1.0
        return cls(part, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def is_normalized(self, tol: float = 1e-12) -> bool:
        return abs(self.norm() - 1.0) <= tol

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0.0:
            raise DomainError("cannot normalize the zero vector")
        return StateVector(self.partition, self.amps / n)

    def with_amps(self, amps) -> "StateVector":
        return StateVector(self.partition, amps)


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense operator on a composite space."""

    partition: TensorPartition
    entries: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        m = _frozen(self.entries)
        n = self.partition.total_dim
        if m.shape != (n, n):
            raise DomainError(f"operator shape {m.shape} does not match total_dim {n}")
        if self.hermitian:
            asym = hermitian_defect(m)
            if asym > HERMITIAN_TOL * max(1.0, float(np.abs(m).max(initial=0.0))):
                raise DomainError(f"operator flagged Hermitian but max |A - A^H| = {asym:.3e}")
        object.__setattr__(self, "entries", m)

    @classmethod
    def from_matrix(cls, dims, entries, hermitian=None) -> "OperatorMatrix":
        entries = np.asarray(entries, dtype=complex)
        if hermitian is None:
            hermitian = hermitian_defect(entries) <= HERMITIAN_TOL * max(
                1.0, float(np.abs(entries).max(initial=0.0))
            )
        return cls(TensorPartition(tuple(dims)), entries, bool(hermitian))

    @classmethod
    def zeros(cls, dims) -> "OperatorMatrix":
        part = TensorPartition(tuple(dims))
        return cls(part, np.zeros((part.total_dim,) * 2), True)

    def __add__(self, other):
        if not isinstance(other, OperatorMatrix):
            return NotImplemented
        if other.partition != self.partition:
            raise DomainError("cannot add operators on different partitions")
        return OperatorMatrix(
            self.partition, self.entries + other.entries, self.hermitian and other.hermitian
        )

    def scaled(self, c) -> "OperatorMatrix":
        herm = self.hermitian and np.isreal(c)
        return OperatorMatrix(self.partition, c * self.entries, bool(herm))


def hermitian_defect(m) -> float:
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    return float(np.abs(m - m.conj().T).max())


def _entries(op):
    return op.entries if isinstance(op, OperatorMatrix) else np.asarray(op, dtype=complex)


def _amps(psi):
    return psi.amps if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)


# ---------------------------------------------------------------------------
# reshaping helpers


def subsystem_matrix(amps, dims, s):
    """View amplitudes as a ``(dims[s], E)`` matrix, complement in row-major order."""
    t = np.asarray(amps).reshape(dims)
    return np.moveaxis(t, s, 0).reshape(dims[s], -1)


def from_subsystem_matrix(mat, dims, s):
    """Inverse of :func:`subsystem_matrix`."""
    rest = [d for k, d in enumerate(dims) if k != s]
    t = np.asarray(mat).reshape([dims[s]] + rest)
    return np.moveaxis(t, 0, s).reshape(-1)


def embed_operator(op, subsystems, dims):
    """Lift ``op`` acting on ``subsystems`` (in the listed order) to the full space."""
    subsystems = list(subsystems)
    dims = list(dims)
    n = len(dims)
    if len(set(subsystems)) != len(subsystems):
        raise DomainError(f"repeated subsystem in {subsystems}")
    for s in subsystems:
        if not 0 <= s < n:
            raise DomainError(f"subsystem {s} out of range for dims {dims}")
    op = np.asarray(op, dtype=complex)
    sub_dim = int(np.prod([dims[s] for s in subsystems]))
    if op.shape != (sub_dim, sub_dim):
        raise DomainError(f"operator shape {op.shape} does not match subsystem dim {sub_dim}")
    rest = [k for k in range(n) if k not in subsystems]
    rest_dim = int(np.prod([dims[k] for k in rest])) if rest else 1
    full = np.kron(op, np.eye(rest_dim))
    order = subsystems + rest
    shape = [dims[k] for k in order]
    t = full.reshape(shape + shape)
    perm = [order.index(k) for k in range(n)]
    t = t.transpose(perm + [n + p for p in perm])
    return t.reshape(int(np.prod(dims)), -1)


def kron_all(mats):
    return reduce(np.kron, mats)


# ---------------------------------------------------------------------------
# operations


def tensor_state(parts: Sequence[StateVector]) -> StateVector:
    """Tensor product of states, subsystem order as given."""
    if not parts:
        raise DomainError("tensor_state needs at least one factor")
    dims = tuple(d for p in parts for d in p.partition.dims)
    amps = reduce(np.kron, [p.amps for p in parts])
    return StateVector(TensorPartition(dims), amps)


def partial_inner(basis_vec, psi: StateVector, s: int) -> np.ndarray:
    """Conditional state ``<b|psi>`` on the complement of subsystem ``s``."""
    part = psi.partition
    part.check_subsystem(s)
    b = np.asarray(basis_vec, dtype=complex).reshape(-1)
    if b.size != part.dims[s]:
        raise DomainError(f"basis vector has length {b.size}, subsystem {s} has dim {part.dims[s]}")
    return b.conj() @ subsystem_matrix(psi.amps, part.dims, s)


def conditional_normalized(phi, floor: float = DEGENERACY_FLOOR) -> np.ndarray:
    phi = np.asarray(phi, dtype=complex)
    n = float(np.linalg.norm(phi))
    if n < floor:
        raise DegenerateConditionalState(n, floor)
    return phi / n


def partial_matrix_element(H, bra_vec, ket_vec, s: int) -> OperatorMatrix:
    """Operator ``<bra|H|ket>`` on the complement of subsystem ``s``.

    Entry ``(j', j)`` is ``sum_{i', i} conj(bra[i']) H[(i', j'), (i, j)] ket[i]``.
    """
    if not isinstance(H, OperatorMatrix):
        raise DomainError("partial_matrix_element needs an OperatorMatrix")
    part = H.partition
    part.check_subsystem(s)
    bra = np.asarray(bra_vec, dtype=complex).reshape(-1)
    ket = np.asarray(ket_vec, dtype=complex).reshape(-1)
    d = part.dims[s]
    if bra.size != d or ket.size != d:
        raise DomainError(f"bra/ket lengths ({bra.size}, {ket.size}) do not match dim {d}")
    n = part.n_subsystems
    t = H.entries.reshape(part.dims + part.dims)
    t = np.moveaxis(t, [s, n + s], [0, 1])
    red = np.tensordot(bra.conj(), t, axes=(0, 0))
    red = np.tensordot(ket, red, axes=(0, 0))
    comp = part.complement(s)
    m = red.reshape(comp.total_dim, comp.total_dim)
    herm = H.hermitian and np.allclose(bra, ket, rtol=0.0, atol=1e-15)
    return OperatorMatrix(comp, m, bool(herm))


def apply(H, psi):
    """Matrix-vector product; returns the same kind as ``psi``."""
    m = _entries(H)
    v = _amps(psi)
    if m.shape[1] != v.size:
        raise DomainError(f"cannot apply {m.shape} operator to length-{v.size} state")
    out = m @ v
    return psi.with_amps(out) if isinstance(psi, StateVector) else out


def inner(psi, phi) -> complex:
    """``<psi|phi>``, conjugate-linear in the first argument."""
    a, b = _amps(psi), _amps(phi)
    if a.size != b.size:
        raise DomainError(f"length mismatch {a.size} vs {b.size}")
    return complex(np.vdot(a, b))


def norm(psi) -> float:
    return float(np.linalg.norm(_amps(psi)))


def axpy(a, x, y):
    """``a*x + y``."""
    xv, yv = _amps(x), _amps(y)
    if xv.size != yv.size:
        raise DomainError(f"length mismatch {xv.size} vs {yv.size}")
    out = a * xv + yv
    return y.with_amps(out) if isinstance(y, StateVector) else out


def expectation(H, psi) -> float:
    v = _amps(psi)
    return float(np.real(np.vdot(v, _entries(H) @ v)))


def subsystem_weights(psi, U, s) -> np.ndarray:
    """Weights ``||<u_k|psi>||^2`` for the columns ``u_k`` of ``U``."""
    part = psi.partition
    c = np.asarray(U, dtype=complex).conj().T @ subsystem_matrix(psi.amps, part.dims, s)
    return np.einsum("ke,ke->k", c.conj(), c).real
