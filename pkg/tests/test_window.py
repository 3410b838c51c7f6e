import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapse_lab.errors import DomainError
from collapse_lab.window import (
    CollapseWindow,
    endpoint_alpha,
    f_derivative,
    f_eval,
    lambda_inv,
    lambda_target_inv,
    log_survival,
    random_valid_coeffs,
    validate_window,
)

# Lambda(tau + 0.5) for the default window with gamma T = 1 is 0.5 - 2/pi
LAMBDA_HALF = -0.13661977236758134


def test_defaults():
    w = CollapseWindow()
    assert w.coeffs == (0.5, 0.5)
    assert w.gamma == 1.0
    assert w.eta == 1e-3
    assert CollapseWindow(T=4.0).gamma == 0.25
    assert w.cutoff == pytest.approx(0.999)


@pytest.mark.parametrize("kw", [{"T": 0.0}, {"T": -1.0}, {"gamma": 0.0}, {"eta": 0.0},
                                {"eta": 0.2}, {"coeffs": ()}])
def test_window_domain(kw):
    with pytest.raises(DomainError):
        CollapseWindow(**kw)


def test_f_default_values():
    w = CollapseWindow(tau=0.3, T=1.0)
    assert f_eval(w, 0.3) == pytest.approx(1.0, abs=1e-15)
    assert f_eval(w, 1.3) == pytest.approx(0.0, abs=1e-15)
    assert f_eval(w, 0.8) == pytest.approx(0.5, abs=1e-15)
    t = np.linspace(0.3, 1.3, 11)
    np.testing.assert_allclose(f_eval(w, t), np.cos(np.pi * (t - 0.3) / 2) ** 2, atol=1e-15)


def test_derivative_matches_finite_difference(rng):
    w = CollapseWindow(T=2.0, coeffs=random_valid_coeffs(rng, 6))
    t = np.linspace(0.1, 1.9, 7)
    h = 1e-6
    fd = (f_eval(w, t + h) - f_eval(w, t - h)) / (2 * h)
    np.testing.assert_allclose(f_derivative(w, t), fd, atol=1e-8)


def test_validate_examples():
    assert validate_window(CollapseWindow()).valid
    rep = validate_window(CollapseWindow(coeffs=(1.0,)))
    assert not rep.valid
    assert any("f(tau+T)" in f for f in rep.failures)
    assert rep.derivative_conditions == "analytic"


def test_validate_three_term_has_interior_zero():
    # 0.3 + 0.5 cos x + 0.2 cos 2x = 0.4 (cos x + 1)(cos x + 1/4): zero at cos x = -1/4
    w = CollapseWindow(coeffs=(0.3, 0.5, 0.2))
    rep = validate_window(w)
    assert rep.start_value == pytest.approx(1.0)
    assert rep.end_value == pytest.approx(0.0, abs=1e-15)
    assert not rep.valid
    assert rep.min_interior < 0
    x0 = np.arccos(-0.25)
    assert f_eval(w, x0 / np.pi) == pytest.approx(0.0, abs=1e-14)
    assert len(rep.failures) == 1 and "positive" in rep.failures[0]


def test_validate_reports_every_failure():
    # f(tau) = 0.3, f(tau+T) = -0.1, and f turns negative before the cutoff
    rep = validate_window(CollapseWindow(coeffs=(0.5, 0.2, -0.4)))
    assert len(rep.failures) == 3


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_random_valid_coeffs_satisfy_window_laws(seed, n):
    w = CollapseWindow(T=1.7, tau=-0.4, coeffs=random_valid_coeffs(np.random.default_rng(seed), n))
    assert len(w.coeffs) <= n
    assert validate_window(w).valid
    assert f_eval(w, w.tau) == pytest.approx(1.0, abs=1e-12)
    assert abs(f_eval(w, w.end)) <= 1e-12
    assert abs(f_derivative(w, w.tau)) <= 1e-12
    assert abs(f_derivative(w, w.end)) <= 1e-12
    t = np.random.default_rng(seed).uniform(-5, 5, 9)
    np.testing.assert_allclose(f_eval(w, t + 2 * w.T), f_eval(w, t), atol=1e-12)


def test_lambda_examples():
    w = CollapseWindow()
    assert lambda_inv(w, 0.0) == 0.0
    assert lambda_inv(w, 0.5) == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        lambda_inv(w, 0.9995)
    with pytest.raises(DomainError):
        lambda_inv(w, -0.1)
    lambda_inv(w, w.cutoff)  # the cutoff itself is admissible


def test_lambda_endpoint_limit():
    w = CollapseWindow(T=1.0)
    s = np.array([1e-1, 1e-2, 1.01e-3])
    vals = lambda_inv(w, w.end - s) * s**2
    target = -4.0 / np.pi**2
    err = np.abs(vals / target - 1)
    assert np.all(np.diff(err) < 0)
    assert err[-1] < 1e-5
    assert endpoint_alpha(w) == pytest.approx(target, rel=1e-14)
    w2 = CollapseWindow(T=3.0, gamma=0.7)
    assert endpoint_alpha(w2) == pytest.approx(-0.7 * 4 * 9 / np.pi**2, rel=1e-14)


def test_lambda_target():
    w = CollapseWindow()
    assert lambda_target_inv(w, 0.4, 1.0) == 0.0
    assert lambda_target_inv(w, 0.0, 0.3) == 0.0
    assert lambda_target_inv(w, 0.5, 0.5) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        lambda_target_inv(w, 0.5, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lambda_flat_start_and_nonpositive(seed):
    w = CollapseWindow(coeffs=random_valid_coeffs(np.random.default_rng(seed), 5))
    h = 1e-5
    # first derivative at tau vanishes: one-sided difference is O(h)
    assert abs(lambda_inv(w, w.tau + h) - lambda_inv(w, w.tau)) / h < 1e-3
    t = np.linspace(w.tau, w.cutoff, 200)
    assert np.all(lambda_inv(w, t) <= 1e-15)
    assert validate_window(w).max_interior <= 1.0 + 1e-15


def test_window_above_one_is_valid_but_reported():
    # cos^2(x/2) (g0 + g1 cos x) with g0 + g1 = 1 bulges above 1 when g1 < -1/4
    g0, g1 = 1.8, -0.8
    d = (g0 / 2 + g1 / 4, (g0 + g1) / 2, g1 / 4)
    rep = validate_window(CollapseWindow(coeffs=d))
    assert rep.valid
    assert rep.max_interior > 1.0


def test_log_survival_closed_form():
    w = CollapseWindow()
    assert log_survival(w, 0.0) == 0.0
    assert log_survival(w, 0.5) == pytest.approx(LAMBDA_HALF, abs=1e-15)
    assert log_survival(w, w.cutoff) <= -400


def test_log_survival_quadrature_matches_closed_form():
    # (0.5, 0.5) written with a zero third coefficient takes the quadrature path
    wq = CollapseWindow(coeffs=(0.5, 0.5, 0.0))
    assert not wq.is_default
    t = np.array([0.1, 0.5, 0.9])
    np.testing.assert_allclose(log_survival(wq, t), log_survival(CollapseWindow(), t), atol=1e-10)


def test_log_survival_monotone(rng):
    w = CollapseWindow(coeffs=random_valid_coeffs(rng, 4))
    t = np.linspace(w.tau, 0.95, 30)
    lam = log_survival(w, t)
    assert lam[0] == 0.0
    assert np.all(np.diff(lam) <= 1e-12)
    with pytest.raises(DomainError):
        log_survival(w, 1.0)
