import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapse_lab.basis_solver import PreferredBasis, random_unitary
from collapse_lab.dynamics import (
    CollapseTarget,
    IntegratorOptions,
    MaskedFrame,
    Propagator,
    collapse_rhs,
    finalize_collapse,
    generator,
    integrate_window,
    multi_collapse_rhs,
    schrodinger_rhs,
    scalar_oracle,
    split_target,
)
from collapse_lab.errors import CollapseFailed, DegenerateTarget, DomainError
from collapse_lab.hilbert import OperatorMatrix, StateVector
from collapse_lab.window import CollapseWindow, log_survival

from conftest import random_hermitian, random_system, random_vector

REF2 = PreferredBasis.reference(0, 2)


def _target(s, d, k, U=None):
    return CollapseTarget(s, PreferredBasis(s, np.eye(d) if U is None else U), k)


def test_target_validation():
    with pytest.raises(DomainError):
        CollapseTarget(1, REF2, 0)
    with pytest.raises(DomainError):
        CollapseTarget(0, REF2, 2)
    np.testing.assert_array_equal(CollapseTarget(0, REF2, 1).vector, [0, 1])


def test_schrodinger_rhs_examples(rng):
    psi = StateVector.from_amps((3,), random_vector(rng, 3))
    np.testing.assert_array_equal(schrodinger_rhs(OperatorMatrix.zeros((3,)), psi).amps, 0)
    E = np.array([0.5, -1.0, 2.0])
    H = OperatorMatrix.from_matrix((3,), np.diag(E))
    out = schrodinger_rhs(H, StateVector.basis((3,), (2,)))
    np.testing.assert_allclose(out.amps, [0, 0, -2j])
    Hr, psi = random_system(rng, (2, 3))
    assert abs(2 * np.vdot(psi.amps, schrodinger_rhs(Hr, psi).amps).real) <= 1e-12
    assert np.allclose(schrodinger_rhs(H, StateVector.basis((3,), (1,)), hbar=2.0).amps, [0, 0.5j, 0])


def test_collapse_rhs_frozen_example():
    # H = 0, psi = (sqrt .6, sqrt .4), target 0, t = T/2, lambda = -1
    w = CollapseWindow()
    psi = StateVector.from_amps((2,), [np.sqrt(0.6), np.sqrt(0.4)])
    out = collapse_rhs(OperatorMatrix.zeros((2,)), psi, w, 0.5, CollapseTarget(0, REF2, 0)).amps
    np.testing.assert_allclose(out, [0.5163977794943222, -0.6324555320336759], atol=1e-15)
    # brute-force matrix build of lambda (1 - P/p)
    P = np.diag([1.0, 0.0])
    np.testing.assert_allclose(out, -1.0 * (np.eye(2) - P / 0.6) @ psi.amps, atol=1e-15)
    assert abs(np.vdot(psi.amps, out)) <= 1e-15


def test_collapse_rhs_reductions(rng):
    H, psi = random_system(rng, (2, 3))
    w = CollapseWindow()
    tg = CollapseTarget(0, PreferredBasis(0, random_unitary(rng, 2)), 1)
    np.testing.assert_allclose(collapse_rhs(H, psi, w, 0.0, tg).amps,
                               schrodinger_rhs(H, psi).amps, atol=1e-15)
    pure = StateVector.from_amps((2, 3), np.kron(tg.vector, random_vector(rng, 3)))
    np.testing.assert_allclose(generator(pure, w, 0.7, [tg]), 0, atol=1e-15)
    np.testing.assert_allclose(multi_collapse_rhs(H, psi, w, 0.3, [tg]).amps,
                               collapse_rhs(H, psi, w, 0.3, tg).amps, atol=0)


def test_generator_matches_target_rate_form(rng):
    # off-target part decays at lambda, target part at lambda (1 - 1/p)
    _, psi = random_system(rng, (3, 2))
    w = CollapseWindow()
    tg = _target(0, 3, 2)
    on, off, a, q = split_target(psi.amps, psi.partition, tg)
    assert a + q == pytest.approx(1.0)
    lam = -0.8
    g = generator(psi, w, 0.4, [tg])
    lam = w.gamma * (np.cos(0.2 * np.pi) ** 2 - 1) / np.cos(0.2 * np.pi) ** 2
    np.testing.assert_allclose(g, lam * off + lam * (1 - 1 / a) * on, atol=1e-14)


def test_degenerate_target():
    psi = StateVector.from_amps((2,), [1.0, 0.0])
    with pytest.raises(DegenerateTarget):
        collapse_rhs(OperatorMatrix.zeros((2,)), psi, CollapseWindow(), 0.5, CollapseTarget(0, REF2, 1))


def test_overlapping_targets_rejected():
    psi = StateVector.from_amps((2, 2), np.full(4, 0.5))
    w = CollapseWindow()
    with pytest.raises(DomainError):
        multi_collapse_rhs(OperatorMatrix.zeros((2, 2)), psi, w, 0.5,
                           [CollapseTarget(0, REF2, 0), CollapseTarget(0, REF2, 1)])


def test_multi_collapse_pure_targets_is_hamiltonian(rng):
    H = OperatorMatrix.from_matrix((2, 2, 2), random_hermitian(rng, 8))
    tgs = [_target(0, 2, 1), _target(2, 2, 0)]
    psi = StateVector.from_amps((2, 2, 2), np.kron(np.kron([0, 1], random_vector(rng, 2)), [1, 0]))
    np.testing.assert_allclose(multi_collapse_rhs(H, psi, CollapseWindow(), 0.6, tgs).amps,
                               schrodinger_rhs(H, psi).amps, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.999))
def test_generator_expectation_vanishes(seed, t):
    rng = np.random.default_rng(seed)
    _, psi = random_system(rng, (2, 2, 2))
    tgs = [CollapseTarget(0, PreferredBasis(0, random_unitary(rng, 2)), int(rng.integers(2))),
           CollapseTarget(1, PreferredBasis(1, random_unitary(rng, 2)), int(rng.integers(2)))]
    g = generator(psi, CollapseWindow(), t, tgs)
    assert abs(np.vdot(psi.amps, g)) <= 1e-12 * max(1.0, np.linalg.norm(g))


def test_propagator_matches_expm(rng):
    from scipy.linalg import expm

    H = random_hermitian(rng, 4)
    v = random_vector(rng, 4)
    prop = Propagator(OperatorMatrix.from_matrix((4,), H), hbar=0.5)
    np.testing.assert_allclose(prop(v, 0.3), expm(-1j * H * 0.3 / 0.5) @ v, atol=1e-13)


def test_masked_frame_roundtrip(rng):
    _, psi = random_system(rng, (2, 3))
    tg = CollapseTarget(1, PreferredBasis(1, random_unitary(rng, 3)), 2)
    frame = MaskedFrame(psi.partition, [tg])
    y = frame.to_frame(psi.amps)
    np.testing.assert_allclose(frame.from_frame(y), psi.amps, atol=1e-14)
    on, off, a, q = split_target(psi.amps, psi.partition, tg)
    assert frame.off_target_weights(y)[0] == pytest.approx(q, abs=1e-14)


def test_finalize_collapse():
    tg = CollapseTarget(0, REF2, 0)
    bell = StateVector.from_amps((2, 2), np.array([1, 0, 0, 1]) / np.sqrt(2))
    np.testing.assert_allclose(finalize_collapse(bell, [tg]).amps, [1, 0, 0, 0], atol=1e-15)
    near = StateVector.from_amps((2, 2), [0.6, 0.8j, 1e-13, 0])
    out = finalize_collapse(near, [tg])
    assert out.amps[2] == 0 and out.amps[3] == 0
    assert out.is_normalized(1e-15)
    done = StateVector.from_amps((2, 2), [0.6, 0.8j, 0, 0])
    np.testing.assert_allclose(finalize_collapse(done, [tg]).amps, done.amps, atol=1e-16)
    with pytest.raises(CollapseFailed):
        finalize_collapse(StateVector.from_amps((2, 2), [0, 0, 1, 0]), [tg])


def test_integrate_closed_form_h0():
    w = CollapseWindow()
    p0 = 0.35
    psi = StateVector.from_amps((2,), [np.sqrt(p0), np.sqrt(1 - p0)])
    grid = np.linspace(0.0, 0.99, 100)
    run = integrate_window(OperatorMatrix.zeros((2,)), psi, w, [CollapseTarget(0, REF2, 0)], grid)
    p = np.array([s.weights[0] for s in run.samples])
    closed = 1 - (1 - p0) * np.exp(2 * log_survival(w, grid))
    assert np.max(np.abs(p / closed - 1)) <= 1e-6
    assert np.all(np.diff(p) >= -1e-12)  # monotone target growth
    assert run.residual_weights[0] <= 1e-12
    np.testing.assert_allclose(run.final.amps, [1, 0], atol=1e-15)


def test_integrate_samples_and_norm(rng):
    H, psi = random_system(rng, (2, 3))
    w = CollapseWindow(tau=1.0, T=2.0)
    tg = CollapseTarget(0, PreferredBasis(0, random_unitary(rng, 2)), 0)
    run = integrate_window(H, psi, w, [tg], 33, record_steps=True)
    assert len(run.samples) == 33
    assert run.samples[0].t == 1.0 and run.samples[-1].t == 3.0
    for s in run.samples:
        assert s.weights.sum() == pytest.approx(s.norm**2, abs=1e-9)
    norms = np.linalg.norm(run.step_states, axis=1)
    assert np.max(np.abs(norms - 1)) <= 1e-8
    # end state pure in the target column
    w_end = run.samples[-1].weights
    assert w_end[1] <= 1e-28 and w_end[0] == pytest.approx(1.0)


def test_integrate_generic_h_residual_bound(rng):
    # generic H feeds the off-target amplitude right up to the cutoff
    H, psi = random_system(rng, (2, 2))
    tg = CollapseTarget(0, REF2, 0)
    run = integrate_window(H, psi, CollapseWindow(), [tg])
    assert run.residual_weights[0] <= 1e-10


def test_integrate_without_targets_conserves_energy(rng):
    H, psi = random_system(rng, (3, 2))
    run = integrate_window(H, psi, CollapseWindow(T=3.0), [], 21)
    e = np.array([s.energy for s in run.samples])
    assert np.max(np.abs(e - e[0])) <= 1e-9
    np.testing.assert_allclose(run.final.amps, Propagator(H)(psi.amps, 3.0), atol=1e-12)
    np.testing.assert_allclose(run.state_at(1.7), Propagator(H)(psi.amps, 1.7), atol=1e-12)


def test_integrate_backends_agree(rng):
    from collapse_lab import kernels

    if "compiled" not in kernels.available_backends():
        pytest.skip("compiled kernels not built")
    H, psi = random_system(rng, (2, 2))
    tg = CollapseTarget(1, PreferredBasis(1, random_unitary(rng, 2)), 1)
    a = integrate_window(H, psi, CollapseWindow(), [tg], 11, backend="compiled")
    b = integrate_window(H, psi, CollapseWindow(), [tg], 11, backend="python")
    assert a.n_steps == b.n_steps
    np.testing.assert_allclose(a.final.amps, b.final.amps, atol=1e-13)


def test_integrate_rejects_degenerate_start():
    psi = StateVector.from_amps((2,), [1.0, 0.0])
    with pytest.raises(DegenerateTarget):
        integrate_window(OperatorMatrix.zeros((2,)), psi, CollapseWindow(), [CollapseTarget(0, REF2, 1)])


def test_grid_outside_window():
    psi = StateVector.from_amps((2,), [0.6, 0.8])
    with pytest.raises(DomainError):
        integrate_window(OperatorMatrix.zeros((2,)), psi, CollapseWindow(), [], [0.5, 1.2])


def test_state_at_matches_steps(rng):
    H, psi = random_system(rng, (2, 2))
    tg = CollapseTarget(0, REF2, 1)
    run = integrate_window(H, psi, CollapseWindow(), [tg], record_steps=True,
                           options=IntegratorOptions(rtol=1e-11, atol=1e-14))
    i = len(run.step_times) // 2
    np.testing.assert_allclose(run.state_at(run.step_times[i]), run.step_states[i], atol=1e-15)


def test_scalar_oracle_beta_one():
    res = scalar_oracle(-2.0, 1, 1.0, 1.0, np.array([0.5, 0.2, 0.1]))
    # Eq.(beta = 1): i hbar c = -gamma/(alpha+1) s = 0.1 at s = 0.1
    assert res.closed_form[-1] == pytest.approx(0.1, abs=1e-15)
    np.testing.assert_allclose(res.numeric, res.closed_form, rtol=1e-8, atol=0)
    other = scalar_oracle(-3.5 + 0.5j, 1, 0.7, 2.0, np.geomspace(1.0, 1e-3, 8))
    np.testing.assert_allclose(other.numeric, other.closed_form, rtol=1e-8)


def test_scalar_oracle_beta_two_ratio():
    alpha = -0.3
    s = np.array([0.4, 0.2, 0.1, 0.05])
    res = scalar_oracle(alpha, 2, 0.0, 1.0, s)
    c = np.abs(res.numeric)
    for i in range(len(s) - 1):
        assert c[i + 1] / c[i] == pytest.approx(np.exp(alpha / s[i]), rel=1e-6)
    assert res.kind == "homogeneous"


def test_scalar_oracle_vanishes_at_endpoint():
    res = scalar_oracle(-0.5, 3, 0.0, 1.0, np.geomspace(0.5, 0.02, 6))
    assert abs(res.numeric[-1]) < 1e-100
    np.testing.assert_allclose(np.abs(res.numeric), np.abs(res.closed_form), rtol=1e-6)


@pytest.mark.parametrize("args", [(0.5, 1), (-1.0, 0.5)])
def test_scalar_oracle_domain(args):
    with pytest.raises(DomainError):
        scalar_oracle(args[0], args[1], 1.0, 1.0, np.array([0.2, 0.1]))
    with pytest.raises(DomainError):
        scalar_oracle(-1.0, 1, 1.0, 1.0, np.array([0.1, 0.2]))
