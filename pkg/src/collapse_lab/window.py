"""Cyclic coefficient family, collapse rates and the survival integral.

A window ``[tau, tau+T]`` carries real cosine coefficients ``D_n`` with

    f(t) = sum_n D_n cos(n pi (t - tau) / T)
    lambda_inv(t) = gamma (f(t) - 1) / f(t)

and the survival integral ``Lambda(t) = int_tau^t lambda_inv``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericError

DEFAULT_COEFFS = (0.5, 0.5)
SUM_TOL = 1e-12
POSITIVITY_GRID = 10_000


@dataclass(frozen=True)
class CollapseWindow:
    """Collapse interval and its cyclic coefficient family.

    ``gamma`` defaults to ``1/T`` when left as ``None``.
    """

    tau: float = 0.0
    T: float = 1.0
    coeffs: tuple = DEFAULT_COEFFS
    gamma: float | None = None
    eta: float = 1e-3

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"window duration T must be > 0, got {self.T}")
        coeffs = tuple(float(c) for c in self.coeffs)
        if not coeffs:
            raise DomainError("window needs at least one cosine coefficient")
        object.__setattr__(self, "coeffs", coeffs)
        gamma = 1.0 / self.T if self.gamma is None else float(self.gamma)
        if not gamma > 0:
            raise DomainError(f"rate scale gamma must be > 0, got {gamma}")
        object.__setattr__(self, "gamma", gamma)
        if not 0 < self.eta <= 0.1:
            raise DomainError(f"endpoint cutoff eta must lie in (0, 0.1], got {self.eta}")

    @property
    def end(self) -> float:
        return self.tau + self.T

    @property
    def cutoff(self) -> float:
        """Last time integrated before the end-state projection."""
        return self.tau + self.T * (1.0 - self.eta)

    @property
    def is_default(self) -> bool:
        c = self.coeffs
        return len(c) == 2 and abs(c[0] - 0.5) < 1e-15 and abs(c[1] - 0.5) < 1e-15

    def shifted(self, tau: float) -> "CollapseWindow":
        return CollapseWindow(tau, self.T, self.coeffs, self.gamma, self.eta)


def _phase(w, t):
    return np.pi * (np.asarray(t, dtype=float) - w.tau) / w.T


def f_eval(w: CollapseWindow, t):
    """Cosine series ``f(t)``; 2T-periodic, defined for every t."""
    x = _phase(w, t)
    n = np.arange(len(w.coeffs))
    out = np.cos(np.multiply.outer(x, n)) @ np.asarray(w.coeffs)
    return float(out) if np.ndim(out) == 0 else out


def f_derivative(w: CollapseWindow, t):
    x = _phase(w, t)
    n = np.arange(len(w.coeffs))
    out = -(np.sin(np.multiply.outer(x, n)) @ (np.asarray(w.coeffs) * n)) * (np.pi / w.T)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class WindowReport:
    valid: bool
    failures: list = field(default_factory=list)
    start_value: float = 0.0
    end_value: float = 0.0
    min_interior: float = 0.0
    max_interior: float = 1.0
    derivative_conditions: str = "analytic"

    def __bool__(self):
        return self.valid


def validate_window(w: CollapseWindow, grid: int = POSITIVITY_GRID) -> WindowReport:
    """Check the four boundary conditions and interior positivity of ``f``.

    The derivative conditions at both ends hold identically for a cosine
    series, so they are reported as analytic rather than tested.
    """
    d = np.asarray(w.coeffs)
    n = np.arange(d.size)
    start = float(d.sum())
    end = float((d * (-1.0) ** n).sum())
    ts = np.linspace(w.tau, w.cutoff, grid)
    fs = f_eval(w, ts)
    fmin, fmax = float(np.min(fs)), float(np.max(fs))
    failures = []
    if abs(start - 1.0) > SUM_TOL:
        failures.append(f"f(tau) = {start!r} != 1")
    if abs(end) > SUM_TOL:
        failures.append(f"f(tau+T) = {end!r} != 0")
    if fmin <= 0.0:
        failures.append(f"f not positive on [tau, tau+T-eta*T]: min {fmin!r}")
    # f > 1 somewhere makes the rate positive there; allowed, but reported
    return WindowReport(not failures, failures, start, end, fmin, fmax)


def _check_inside(w, t):
    t = np.asarray(t, dtype=float)
    # a few ulps of slack so the cutoff itself is admissible
    slack = 4 * np.finfo(float).eps * max(abs(w.tau), abs(w.end), 1.0)
    if np.any(t < w.tau - slack) or np.any(t > w.cutoff + slack):
        raise DomainError(
            f"t outside [tau, tau+T-eta*T] = [{w.tau}, {w.cutoff}]; the rate is singular beyond"
        )


def lambda_inv(w: CollapseWindow, t, *, check: bool = True):
    """Collapse rate ``gamma (f-1)/f`` (nonpositive on valid windows)."""
    if check:
        _check_inside(w, t)
    f = f_eval(w, t)
    return w.gamma * (f - 1.0) / f


def lambda_target_inv(w: CollapseWindow, t, p):
    """Rate on the selected component that keeps ``<psi|G|psi> = 0``."""
    if np.any(np.asarray(p) <= 0):
        raise DomainError(f"target weight must be > 0, got {p}")
    return lambda_inv(w, t) * (1.0 - 1.0 / np.asarray(p, dtype=float))


def log_survival(w: CollapseWindow, t, *, epsabs: float = 1e-10):
    """Survival integral ``Lambda(t)``; 0 at tau and nonincreasing."""
    _check_inside(w, t)
    t_arr = np.asarray(t, dtype=float)
    if w.is_default:
        u = t_arr - w.tau
        out = w.gamma * (u - (2.0 * w.T / np.pi) * np.tan(np.pi * u / (2.0 * w.T)))
        return float(out) if out.ndim == 0 else out

    def one(ti):
        if ti == w.tau:
            return 0.0
        val, err = integrate.quad(
            lambda x: lambda_inv(w, x, check=False), w.tau, ti, epsabs=epsabs, epsrel=0.0,
            limit=200,
        )
        if not err <= epsabs:
            raise NumericError(
                f"survival quadrature reached only {err:.2e} (needed {epsabs:.0e})",
                achieved=err, t=ti,
            )
        return val

    if t_arr.ndim == 0:
        return one(float(t_arr))
    return np.array([one(float(x)) for x in t_arr.ravel()]).reshape(t_arr.shape)


def endpoint_alpha(w: CollapseWindow) -> float:
    """Leading coefficient of ``lambda_inv ~ alpha (tau+T-t)^-2`` for a double zero of f."""
    d = np.asarray(w.coeffs)
    n = np.arange(d.size)
    # f(tau+T-s) ~ 0.5 f''(tau+T) s^2
    f2 = -float(np.sum(d * n**2 * (-1.0) ** n)) * (np.pi / w.T) ** 2
    if f2 <= 0:
        raise DomainError("f has no double zero at the window end")
    return -w.gamma * 2.0 / f2


def random_valid_coeffs(rng, n_terms: int = 8) -> tuple:
    """Random coefficient set satisfying every window condition.

    Builds ``f = cos^2(x/2) g(x)`` with ``g`` a strictly positive cosine
    polynomial normalized to ``g(0) = 1``; the product stays a cosine series
    of at most ``n_terms`` terms.  ``g`` has nonnegative coefficients, so
    ``g <= g(0)`` and ``0 < f <= 1`` inside the window, which keeps the rate
    nonpositive.
    """
    if n_terms < 2:
        raise DomainError("a valid window needs at least two cosine terms")
    m = n_terms - 1  # g has terms 0..m-1, f has 0..m
    c = rng.uniform(0.0, 1.0, size=m)
    if m > 1:
        c[0] = c[1:].sum() + rng.uniform(0.05, 1.0)
    else:
        c[0] = 1.0
    c /= c.sum()
    # (1 + cos x)/2 * sum_k c_k cos(kx); cos x cos kx = (cos(k+1)x + cos(k-1)x)/2
    d = np.zeros(m + 1)
    for k, ck in enumerate(c):
        d[k] += 0.5 * ck
        d[k + 1] += 0.25 * ck
        d[abs(k - 1)] += 0.25 * ck
    return tuple(float(x) for x in d)
