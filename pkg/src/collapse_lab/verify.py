"""Invariant suite behind ``collapse-lab verify``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import (
    continuity_check,
    energy_identity_gap,
    factorization_check,
    position_coupling,
    reduced_density_matrix,
    window_fit,
)
from .basis_solver import PreferredBasis, random_unitary, solve_preferred_basis
from .dynamics import CollapseTarget, IntegratorOptions, MaskedFrame, integrate_window
from .errors import CollapseLabError
from .hilbert import OperatorMatrix, StateVector, TensorPartition, subsystem_matrix
from .window import (
    CollapseWindow,
    f_derivative,
    f_eval,
    log_survival,
    random_valid_coeffs,
    validate_window,
)


@dataclass
class CheckResult:
    name: str
    value: float | None
    bound: float | None
    relation: str = "<="
    passed: bool | None = None
    detail: str = ""

    @classmethod
    def judge(cls, name, value, bound, relation="<=", detail=""):
        ok = value <= bound if relation == "<=" else value >= bound
        return cls(name, float(value), bound, relation, bool(ok), detail)

    def row(self) -> str:
        status = {True: "PASS", False: "FAIL", None: "N/A"}[self.passed]
        val = "-" if self.value is None else f"{self.value:.3e}"
        bound = "" if self.bound is None else f"{self.relation} {self.bound:.3g}"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{self.name:<44} {val:>11} {bound:<9} {status}{extra}"

    def as_dict(self):
        return {"name": self.name, "value": self.value, "bound": self.bound,
                "relation": self.relation, "passed": self.passed, "detail": self.detail}


def _random_hermitian(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (a + a.conj().T)


def _random_state(rng, dims):
    n = int(np.prod(dims))
    a = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return StateVector.from_amps(dims, a / np.linalg.norm(a))


def window_law_defect(w: CollapseWindow) -> float:
    """Max violation of the boundary values, end slopes and 2T periodicity of f."""
    t = np.linspace(w.tau, w.end, 17)
    return max(
        abs(f_eval(w, w.tau) - 1.0),
        abs(f_eval(w, w.end)),
        abs(f_derivative(w, w.tau)),
        abs(f_derivative(w, w.end)),
        float(np.max(np.abs(f_eval(w, t + 2 * w.T) - f_eval(w, t)))),
    )


def run_drift_and_gap(H, psi, w, targets):
    """``(max norm drift, max energy-identity gap)`` over accepted steps."""
    run = integrate_window(H, psi, w, targets, record_steps=True)
    ts, ys = run.states_at_steps()
    drift = float(np.max(np.abs(np.linalg.norm(ys, axis=1) - 1.0)))
    part = psi.partition
    gap = max(energy_identity_gap(H, StateVector(part, y), w, t, targets) for t, y in zip(ts, ys))
    return drift, gap


def closed_form_error(p0: float, w: CollapseWindow, n: int = 200) -> float:
    """Max relative error of ``p(t) = 1 - (1-p0) e^{2 Lambda}`` for H = 0, d = 2."""
    psi = StateVector.from_amps((2,), [np.sqrt(p0), np.sqrt(1.0 - p0)])
    tg = CollapseTarget(0, PreferredBasis.reference(0, 2), 0)
    t = np.linspace(w.tau, w.cutoff, n)
    run = integrate_window(OperatorMatrix.zeros((2,)), psi, w, [tg], t)
    p_num = np.array([s.weights[0] / s.norm ** 2 for s in run.samples])
    p_ref = 1.0 - (1.0 - p0) * np.exp(2.0 * log_survival(w, t))
    return float(np.max(np.abs(p_num - p_ref) / p_ref))


def default_suite(seed: int = 0):
    rng = np.random.default_rng(seed)
    w = CollapseWindow()
    out = []

    defects = [window_law_defect(w)]
    valid = [validate_window(w).valid]
    for _ in range(50):
        ww = CollapseWindow(coeffs=random_valid_coeffs(rng, int(rng.integers(2, 9))))
        defects.append(window_law_defect(ww))
        valid.append(validate_window(ww).valid)
    out.append(CheckResult.judge("window laws (default + 50 random)", max(defects), 1e-12,
                                 detail="" if all(valid) else "positivity failed"))
    if not all(valid):
        out[-1].passed = False

    dims = (2, 3)
    H = OperatorMatrix.from_matrix(dims, _random_hermitian(rng, 6))
    psi = _random_state(rng, dims)
    tg = CollapseTarget(0, PreferredBasis(0, random_unitary(rng, 2)), 1)
    d1, g1 = run_drift_and_gap(H, psi, w, [tg])
    dims3 = (2, 2, 2)
    H3 = OperatorMatrix.from_matrix(dims3, _random_hermitian(rng, 8))
    psi3 = _random_state(rng, dims3)
    tgs = [CollapseTarget(0, PreferredBasis(0, random_unitary(rng, 2)), 0),
           CollapseTarget(2, PreferredBasis(2, random_unitary(rng, 2)), 1)]
    d2, g2 = run_drift_and_gap(H3, psi3, w, tgs)
    out.append(CheckResult.judge("norm drift to cutoff", max(d1, d2), 1e-8))
    out.append(CheckResult.judge("energy identity at accepted steps", max(g1, g2), 1e-10))

    out.append(CheckResult.judge("closed-form target weight (H=0)",
                                 closed_form_error(0.6, w), 1e-6))

    ref = PreferredBasis.reference(0, 2)
    psi2 = StateVector.from_amps((2,), [np.sqrt(0.6), np.sqrt(0.4)])
    run = integrate_window(OperatorMatrix.zeros((2,)), psi2, w, [CollapseTarget(0, ref, 0)])
    out.append(CheckResult.judge("residual at cutoff (H=0)", float(run.residual_weights.max()),
                                 1e-12))

    fit, _, _ = window_fit(OperatorMatrix.zeros((2,)), psi2, w, CollapseTarget(0, ref, 0))
    alpha = -4.0 * w.gamma * w.T ** 2 / np.pi ** 2
    out.append(CheckResult.judge("endpoint exponent |beta - 2|", abs(fit.beta_hat - 2.0), 0.02))
    out.append(CheckResult.judge("endpoint coefficient rel. error",
                                 abs(fit.alpha_hat / alpha - 1.0), 0.02))
    out.append(CheckResult.judge("fit r^2", fit.r_squared, 0.999, ">="))

    # H commutes with the target projector: diagonal on subsystem 0
    Hc = OperatorMatrix.from_matrix(
        (2, 2), np.kron(np.diag([0.4, -0.9]), np.eye(2))
        + np.kron(np.eye(2), _random_hermitian(rng, 2)))
    psi_c = _random_state(rng, (2, 2))
    tgc = CollapseTarget(0, ref, 0)
    out.append(CheckResult.judge("continuity at tau",
                                 continuity_check(Hc, psi_c, w, [tgc], "start").mismatch, 1e-4))
    out.append(CheckResult.judge("continuity at tau+T",
                                 continuity_check(Hc, psi_c, w, [tgc], "end").mismatch, 1e-4))
    bad = CollapseWindow(coeffs=(0.6, 0.4))
    out.append(CheckResult.judge("continuity, invalid window (control)",
                                 continuity_check(Hc, psi_c, bad, [tgc], "end").mismatch,
                                 1e-1, ">="))

    h1 = _random_hermitian(rng, 2)
    he = _random_hermitian(rng, 3)
    p1 = _random_state(rng, (2,))
    chi = _random_state(rng, (3,))
    out.append(CheckResult.judge("factorization, product scenario",
                                 factorization_check(h1, he, p1, chi, w, tgc).max_deviation,
                                 1e-8))
    cup = position_coupling(np.diag([0.0, 1.0]), _random_hermitian(rng, 3), 1.0, (2, 3))
    out.append(CheckResult.judge(
        "factorization, entangling control",
        factorization_check(h1, he, p1, chi, w, tgc, coupling=cup).max_deviation, 1e-2, ">="))
    return out


def split_local(H: OperatorMatrix):
    """``(H1, Henv)`` if ``H = H1 (x) I + I (x) Henv`` across subsystem 0 | rest."""
    dims = H.partition.dims
    if len(dims) < 2:
        return None
    d1 = dims[0]
    de = H.partition.total_dim // d1
    t = H.entries.reshape(d1, de, d1, de)
    h1 = np.einsum("iaja->ij", t) / de
    he = np.einsum("iaib->ab", t) / d1
    shift = np.trace(h1).real / d1
    h1 = h1 - shift * np.eye(d1)
    rebuilt = np.kron(h1, np.eye(de)) + np.kron(np.eye(d1), he)
    if np.max(np.abs(rebuilt - H.entries)) > 1e-12 * max(1.0, float(np.abs(H.entries).max())):
        return None
    return h1, he


def _schmidt_product(psi: StateVector):
    m = subsystem_matrix(psi.amps, psi.partition.dims, 0)
    u, s, vh = np.linalg.svd(m)
    if s.size > 1 and s[1] > 1e-12:
        return None
    return StateVector(TensorPartition((m.shape[0],)), u[:, 0] * s[0]), \
        StateVector(TensorPartition((m.shape[1],)), vh[0])


def scenario_suite(scn):
    """Checks applicable to one scenario's system, state and window."""
    out = []
    w = scn.window
    rep = validate_window(w)
    out.append(CheckResult("window validation", rep.min_interior, None, "",
                           rep.valid, "; ".join(rep.failures)))
    cfg = scn.config
    s = cfg.policy.subsystems(len(scn.dims))[0]
    basis = (cfg.pinned_bases or {}).get(s)
    source = "pinned"
    if basis is None:
        sol = solve_preferred_basis(scn.H, scn.initial, s, cfg.solver)
        basis, source = (sol.basis, "solved") if sol.converged else (
            PreferredBasis.reference(s, scn.dims[s]), "reference")
    M = reduced_density_matrix(scn.initial, basis, s)
    k = int(np.argmax(M.diagonal))
    tg = CollapseTarget(s, basis, k)
    info = f"subsystem {s}, k={k}, {source} basis"
    if not rep.valid:
        return out
    try:
        drift, gap = run_drift_and_gap(scn.H, scn.initial, w, [tg])
        out.append(CheckResult.judge("norm drift to cutoff", drift, 1e-8, detail=info))
        out.append(CheckResult.judge("energy identity at accepted steps", gap, 1e-10))
    except CollapseLabError as exc:
        out.append(CheckResult("norm drift to cutoff", None, 1e-8, "<=", False, str(exc)))
    out.append(CheckResult.judge("continuity at tau",
                                 continuity_check(scn.H, scn.initial, w, [tg], "start").mismatch,
                                 1e-4))
    frame = MaskedFrame(scn.initial.partition, [tg])
    Hr = frame.operator(scn.H)
    keep = frame.joint
    leak = float(np.max(np.abs(Hr[np.ix_(~keep, keep)]), initial=0.0))
    if leak <= 1e-12:
        out.append(CheckResult.judge(
            "continuity at tau+T",
            continuity_check(scn.H, scn.initial, w, [tg], "end").mismatch, 1e-4))
    else:
        out.append(CheckResult("continuity at tau+T", None, 1e-4, "<=", None,
                               f"H couples target to complement ({leak:.1e})"))
    try:
        zero = OperatorMatrix.zeros(scn.dims)
        fit, _, _ = window_fit(zero, scn.initial, w, tg)
        out.append(CheckResult("endpoint fit r^2 (H=0)", fit.r_squared, 0.999, ">=",
                               fit.r_squared >= 0.999,
                               f"alpha={fit.alpha_hat:.4g} beta={fit.beta_hat:.4g}"))
    except CollapseLabError as exc:
        out.append(CheckResult("endpoint fit r^2 (H=0)", None, 0.999, ">=", False, str(exc)))
    split = split_local(scn.H) if s == 0 else None
    factors = _schmidt_product(scn.initial) if split else None
    if split and factors:
        sub_tg = CollapseTarget(0, basis, k)
        dev = factorization_check(split[0], split[1], factors[0], factors[1], w, sub_tg,
                                  options=IntegratorOptions(rtol=1e-11, atol=1e-14))
        out.append(CheckResult.judge("factorization", dev.max_deviation, 1e-8))
    else:
        out.append(CheckResult("factorization", None, 1e-8, "<=", None,
                               "needs a non-interacting H and a product state"))
    return out
