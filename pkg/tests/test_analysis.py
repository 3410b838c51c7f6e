import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapse_lab.analysis import (
    ReducedDensityMatrix,
    coherence_l1,
    continuity_check,
    energy_identity_gap,
    energy_rate,
    factorization_check,
    fit_asymptotic_exponent,
    log_weight,
    mean_coherence,
    position_coupling,
    reduced_density_matrix,
    window_fit,
)
from collapse_lab.basis_solver import PreferredBasis, random_unitary
from collapse_lab.dynamics import CollapseTarget
from collapse_lab.errors import DomainError, FitError
from collapse_lab.hilbert import OperatorMatrix, StateVector
from collapse_lab.window import CollapseWindow, log_survival

from conftest import random_hermitian, random_system, random_vector

REF2 = PreferredBasis.reference(0, 2)


def _state(dims, amps):
    return StateVector.from_amps(dims, amps)


def test_rdm_examples(rng):
    chi = random_vector(rng, 3)
    M = reduced_density_matrix(_state((3, 3), np.kron([1, 0, 0], chi)),
                               PreferredBasis.reference(0, 3), 0)
    np.testing.assert_allclose(M.M, np.diag([1, 0, 0]), atol=1e-15)
    bell = _state((2, 2), np.array([1, 0, 0, 1]) / np.sqrt(2))
    np.testing.assert_allclose(reduced_density_matrix(bell, REF2, 0).M, np.eye(2) / 2, atol=1e-15)
    psi = _state((2, 3), 1.7 * random_vector(rng, 6))
    M = reduced_density_matrix(psi, PreferredBasis(1, random_unitary(rng, 3)), 1)
    assert M.trace == pytest.approx(1.7**2, abs=1e-12)
    with pytest.raises(DomainError):
        reduced_density_matrix(psi, REF2, 1)


def test_rdm_invariants_enforced():
    with pytest.raises(DomainError):
        ReducedDensityMatrix(0, REF2, np.array([[1.0, 0.5], [0.0, 0.0]]))
    with pytest.raises(DomainError):
        ReducedDensityMatrix(0, REF2, np.diag([1.5, -0.5]))


def test_rdm_permutation_covariance(rng):
    psi = _state((3, 2), random_vector(rng, 6))
    U = random_unitary(rng, 3)
    perm = [2, 0, 1]
    M = reduced_density_matrix(psi, PreferredBasis(0, U), 0).M
    Mp = reduced_density_matrix(psi, PreferredBasis(0, U[:, perm]), 0).M
    np.testing.assert_array_equal(Mp, M[np.ix_(perm, perm)])


def test_coherence_examples(rng):
    assert coherence_l1(np.diag([0.2, 0.8])) == 0.0
    plus = np.full((2, 2), 0.5)
    assert coherence_l1(plus) == pytest.approx(1.0)
    assert mean_coherence(plus) == pytest.approx(1.0)
    assert mean_coherence(np.ones((1, 1))) == 0.0
    v = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    M = v @ v.conj().T
    brute = sum(abs(M[i, j]) for i in range(4) for j in range(4) if i != j)
    assert coherence_l1(M) == pytest.approx(brute, rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_coherence_gauge_invariant(seed):
    rng = np.random.default_rng(seed)
    psi = _state((3, 2), random_vector(rng, 6))
    U = random_unitary(rng, 3)
    ph = np.exp(1j * rng.uniform(0, 2 * np.pi, 3))
    a = coherence_l1(reduced_density_matrix(psi, PreferredBasis(0, U), 0))
    b = coherence_l1(reduced_density_matrix(psi, PreferredBasis(0, U * ph), 0))
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_energy_identity_examples(rng):
    w = CollapseWindow()
    _, psi = random_system(rng, (2, 2, 2))
    tg0 = CollapseTarget(0, PreferredBasis(0, random_unitary(rng, 2)), 1)
    tg2 = CollapseTarget(2, PreferredBasis(2, random_unitary(rng, 2)), 0)
    assert energy_identity_gap(OperatorMatrix.zeros((2, 2, 2)), psi, w, 0.4, [tg0]) <= 1e-15
    H = OperatorMatrix.from_matrix((2, 2, 2), random_hermitian(rng, 8))
    assert energy_identity_gap(H, psi, w, 0.4, [tg0]) <= 1e-12
    assert energy_identity_gap(H, psi, w, 0.7, [tg0, tg2]) <= 1e-12
    # the energy itself is not conserved by the collapse term
    assert abs(energy_rate(H, psi, w, 0.7, [tg0])) > 1e-6


def test_log_weight():
    assert log_weight([3.0, 4.0]) == pytest.approx(np.log(25.0))
    assert log_weight([1e-200, 0.0]) == pytest.approx(-400 * np.log(10))
    assert log_weight([0.0]) == -np.inf


def test_fit_synthetic_amplitude():
    w = CollapseWindow()
    s = np.geomspace(w.eta * w.T, 0.1 * w.T, 300)
    t = w.end - s
    fit = fit_asymptotic_exponent(t, -1.0 / s, w, log=True)
    assert fit.beta_hat == pytest.approx(2.0, abs=1e-3)
    assert fit.alpha_hat == pytest.approx(-1.0, rel=1e-3)
    assert fit.r_squared >= 0.9999
    # the same series through exp, and as a weight with power 2
    small = fit_asymptotic_exponent(t[s > 0.005], np.exp(-1.0 / s[s > 0.005]), w,
                                    s_range=(0.005, 0.1))
    assert small.beta_hat == pytest.approx(2.0, abs=1e-3)
    sq = fit_asymptotic_exponent(t, -2.0 / s, w, log=True, power=2)
    assert sq.alpha_hat == pytest.approx(-1.0, rel=1e-3)
    d = fit.as_dict()
    assert set(d) >= {"alpha_hat", "beta_hat", "r_squared", "s_range"}


def test_fit_errors():
    w = CollapseWindow()
    t = np.linspace(0.9, 0.998, 50)
    with pytest.raises(FitError):
        fit_asymptotic_exponent(t, np.ones_like(t), w)
    with pytest.raises(FitError):
        fit_asymptotic_exponent(t[:5], np.exp(-1 / (1 - t[:5])), w)
    with pytest.raises(FitError):
        fit_asymptotic_exponent(t, -np.ones_like(t), w)
    with pytest.raises(DomainError):
        fit_asymptotic_exponent(t, np.ones_like(t), w, s_range=(1e-3, 0.5))


def test_window_fit_default_exponents():
    w = CollapseWindow()
    psi = _state((2,), [np.sqrt(0.6), np.sqrt(0.4)])
    fit, s, lw = window_fit(OperatorMatrix.zeros((2,)), psi, w, CollapseTarget(0, REF2, 0))
    assert fit.beta_hat == pytest.approx(2.0, abs=0.02)
    assert fit.alpha_hat == pytest.approx(-4 / np.pi**2, rel=0.02)
    assert fit.r_squared >= 0.999
    # H = 0: off-target log weight follows 2 Lambda exactly
    ref = np.log(0.4) + 2 * log_survival(w, w.end - s)
    np.testing.assert_allclose(lw - lw[-1], ref - ref[-1], rtol=1e-6, atol=1e-6)


def test_continuity_schrodinger_boundary(rng):
    # placing no collapse on either side: both one-sided derivatives are Schrodinger
    H = OperatorMatrix.from_matrix((2, 2), np.kron(np.diag([0.3, -0.5]), np.eye(2))
                                   + np.kron(np.eye(2), random_hermitian(rng, 2)))
    psi = _state((2, 2), np.kron([1, 0], random_vector(rng, 2)))
    # target already pure: the collapse term vanishes identically
    rep = continuity_check(H, psi, CollapseWindow(), [CollapseTarget(0, REF2, 0)], "start")
    assert rep.mismatch <= 1e-9


def test_continuity_valid_and_invalid_windows(rng):
    H = OperatorMatrix.from_matrix((2, 2), np.kron(np.diag([0.4, -0.9]), np.eye(2))
                                   + np.kron(np.eye(2), random_hermitian(rng, 2)))
    psi = _state((2, 2), random_vector(rng, 4))
    tg = [CollapseTarget(0, REF2, 0)]
    w = CollapseWindow()
    assert continuity_check(H, psi, w, tg, "start").mismatch <= 1e-4
    assert continuity_check(H, psi, w, tg, "end").mismatch <= 1e-4
    assert continuity_check(H, psi, CollapseWindow(coeffs=(0.6, 0.4)), tg, "end").mismatch >= 0.1
    with pytest.raises(DomainError):
        continuity_check(H, psi, w, tg, "middle")
    with pytest.raises(DomainError):
        continuity_check(H, psi, w, tg, "start", h=1e-3)


def test_factorization_examples(rng):
    w = CollapseWindow()
    tg = CollapseTarget(0, REF2, 0)
    h1, he = random_hermitian(rng, 2), random_hermitian(rng, 3)
    p1 = _state((2,), random_vector(rng, 2))
    chi = _state((3,), random_vector(rng, 3))
    assert factorization_check(h1, np.zeros((3, 3)), p1, chi, w, tg).max_deviation <= 1e-9
    rep = factorization_check(np.zeros((2, 2)), he, p1, chi, w, tg)
    assert rep.max_deviation <= 1e-8
    assert len(rep.times) == len(rep.deviations) == 41
    cup = position_coupling(np.diag([0.0, 1.0]), random_hermitian(rng, 3), 1.0, (2, 3))
    assert factorization_check(h1, he, p1, chi, w, tg, coupling=cup).max_deviation >= 1e-2
    with pytest.raises(DomainError):
        factorization_check(h1, he, chi, p1, w, tg)


def test_position_coupling_embedding():
    X = np.diag([0.0, 1.0])
    B = np.array([[0, 1], [1, 0]])
    op = position_coupling(X, B, 2.0, (2, 2, 3))
    np.testing.assert_allclose(op.entries, 2.0 * np.kron(np.kron(X, B), np.eye(3)))
