"""Alternating Schrodinger / collapse evolution over half-cycles.

Half-cycle ``j`` spans ``[t0 + jT, t0 + (j+1)T]``.  Only half-cycles with
``j % 2 == qualified_parity`` may start a collapse; the others are pure
Schrodinger evolution.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import rng as rngmod
from .analysis import mean_coherence, reduced_density_matrix
from .basis_solver import PreferredBasis, SolverOptions, solve_preferred_basis
from .dynamics import (
    HBAR,
    CollapseTarget,
    IntegratorOptions,
    Propagator,
    integrate_window,
    make_sample,
)
from .errors import DomainError
from .hilbert import DEGENERACY_FLOOR, OperatorMatrix, StateVector
from .window import CollapseWindow

POLICY_KINDS = ("threshold", "linear")
BASIS_MODES = ("solve", "pinned")
FALLBACKS = ("skip", "pinned")


@dataclass(frozen=True)
class TriggerPolicy:
    """Map from mean off-diagonal coherence to a trigger probability.

    Lower coherence means a higher probability.  ``theta = 0`` with the
    threshold kind never triggers.  ``enabled`` lists the subsystems that may
    collapse; ``None`` enables all of them.
    """

    kind: str = "threshold"
    theta: float = 0.1
    enabled: tuple | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise DomainError(f"policy kind must be one of {POLICY_KINDS}, got {self.kind!r}")
        theta = float(self.theta)
        lo_ok = theta >= 0 if self.kind == "threshold" else theta > 0
        if not (lo_ok and theta <= 1.0):
            raise DomainError(f"theta out of range for {self.kind} policy: {theta}")
        object.__setattr__(self, "theta", theta)
        if self.enabled is not None:
            object.__setattr__(self, "enabled", tuple(int(s) for s in self.enabled))

    def subsystems(self, n: int):
        if self.enabled is None:
            return tuple(range(n))
        for s in self.enabled:
            if not 0 <= s < n:
                raise DomainError(f"enabled subsystem {s} out of range for {n} subsystems")
        return self.enabled


@dataclass(frozen=True)
class ScheduleConfig:
    window: CollapseWindow = field(default_factory=CollapseWindow)
    policy: TriggerPolicy = field(default_factory=TriggerPolicy)
    t0: float = 0.0
    n_half_cycles: int = 1
    qualified_parity: int = 0
    seed: int = 0
    pinned_bases: Mapping | None = None
    basis_mode: str = "solve"
    basis_fallback: str = "skip"
    multi_target: bool = True
    solver: SolverOptions = field(default_factory=SolverOptions)
    integrator: IntegratorOptions = field(default_factory=IntegratorOptions)
    samples_per_half_cycle: int = 0
    hbar: float = HBAR
    floor: float = DEGENERACY_FLOOR

    def __post_init__(self):
        if self.n_half_cycles < 0:
            raise DomainError("n_half_cycles must be >= 0")
        if self.qualified_parity not in (0, 1):
            raise DomainError("qualified_parity must be 0 or 1")
        if self.basis_mode not in BASIS_MODES:
            raise DomainError(f"basis_mode must be one of {BASIS_MODES}")
        if self.basis_fallback not in FALLBACKS:
            raise DomainError(f"basis_fallback must be one of {FALLBACKS}")
        rngmod.check_seed(self.seed)
        if self.pinned_bases is not None:
            for s, b in self.pinned_bases.items():
                if b.subsystem != s:
                    raise DomainError(f"pinned basis for {s} is labelled subsystem {b.subsystem}")

    def span(self, j: int):
        T = self.window.T
        return self.t0 + j * T, self.t0 + (j + 1) * T

    def qualified(self, j: int) -> bool:
        return j % 2 == self.qualified_parity

    def window_at(self, j: int) -> CollapseWindow:
        return self.window.shifted(self.span(j)[0])


@dataclass
class HalfCycleEvent:
    j: int
    qualified: bool
    coherence: list = field(default_factory=list)
    triggered: bool = False
    subsystem: list = field(default_factory=list)
    k_tilde: list = field(default_factory=list)
    p_target: list = field(default_factory=list)
    basis_source: dict = field(default_factory=dict)

    def as_dict(self):
        # fixed field order for the JSONL log
        return {
            "j": self.j,
            "qualified": self.qualified,
            "coherence": list(self.coherence),
            "triggered": self.triggered,
            "subsystem": list(self.subsystem),
            "k_tilde": list(self.k_tilde),
            "p_target": list(self.p_target),
        }


@dataclass
class RunRecord:
    trajectory: int
    events: list
    final: StateVector
    samples: list = field(default_factory=list)
    boundary_norms: list = field(default_factory=list)

    def outcomes(self):
        """``(subsystem, k_tilde)`` pairs in event order."""
        return [(s, k) for ev in self.events for s, k in zip(ev.subsystem, ev.k_tilde)]


def trigger_probability(M, policy: TriggerPolicy) -> float:
    """Trigger probability from the mean coherence of ``M``."""
    m = M.M if hasattr(M, "M") else np.asarray(M)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"reduced density matrix must be square, got {m.shape}")
    if m.shape[0] == 1:
        return 1.0
    c = mean_coherence(m)
    if policy.kind == "threshold":
        return 1.0 if c < policy.theta else 0.0
    return float(min(1.0, max(0.0, 1.0 - c / policy.theta)))


def sample_target(M, rng, floor: float = DEGENERACY_FLOOR) -> int:
    """Draw ``k`` with probability ``M_kk`` (renormalized)."""
    m = M.M if hasattr(M, "M") else np.asarray(M)
    p = np.diagonal(m).real.astype(float)
    if np.any(p < -1e-12):
        raise DomainError(f"negative diagonal in reduced density matrix: {p}")
    p = np.where(p > floor, p, 0.0)
    total = p.sum()
    if total <= 0:
        raise DomainError("every diagonal weight is below the floor")
    cdf = np.cumsum(p / total)
    u = rng.random()
    k = int(np.searchsorted(cdf, u, side="right"))
    k = min(k, p.size - 1)
    while p[k] == 0.0:  # guard against u landing on a flat cdf segment by rounding
        k -= 1
    return k


def _basis_for(state, H, config: ScheduleConfig, s: int):
    pinned = (config.pinned_bases or {}).get(s)
    if config.basis_mode == "pinned":
        if pinned is None:
            raise DomainError(f"basis_mode='pinned' but no basis pinned for subsystem {s}")
        return pinned, "pinned"
    sol = solve_preferred_basis(H, state, s, config.solver)
    if sol.converged:
        return sol.basis, "solved"
    if config.basis_fallback == "pinned" and pinned is not None:
        return pinned, "fallback-pinned"
    return None, "skipped"


def advance_half_cycle(state: StateVector, H: OperatorMatrix, config: ScheduleConfig, j: int,
                       rng, *, propagator: Propagator | None = None, monitor=None):
    """Evolve one half-cycle; returns ``(state', event, samples)``."""
    if not state.is_normalized(1e-8):
        raise DomainError(f"state must be normalized at half-cycle start (norm {state.norm():.12g})")
    w = config.window_at(j)
    grid = config.samples_per_half_cycle or None
    ev = HalfCycleEvent(j, config.qualified(j))
    targets = []
    if ev.qualified:
        part = state.partition
        for s in config.policy.subsystems(part.n_subsystems):
            basis, source = _basis_for(state, H, config, s)
            ev.basis_source[s] = source
            if basis is None:
                ev.coherence.append(None)
                continue
            M = reduced_density_matrix(state, basis, s)
            ev.coherence.append(mean_coherence(M))
            u = rng.random()
            if u < trigger_probability(M, config.policy):
                k = sample_target(M, rng, config.floor)
                targets.append((CollapseTarget(s, basis, k), float(M.diagonal[k] / M.trace)))
        if len(targets) > 1 and not config.multi_target:
            targets = [targets[int(rng.integers(len(targets)))]]
    if targets:
        ev.triggered = True
        ev.subsystem = [tg.subsystem for tg, _ in targets]
        ev.k_tilde = [tg.k_tilde for tg, _ in targets]
        ev.p_target = [p for _, p in targets]
        run = integrate_window(H, state, w, [tg for tg, _ in targets], grid, hbar=config.hbar,
                               options=config.integrator, monitor=monitor)
        return run.final, ev, run.samples
    prop = propagator or Propagator(H, config.hbar)
    out = state.with_amps(prop(state.amps, w.T))
    samples = []
    if grid:
        for t in np.linspace(w.tau, w.end, int(grid)):
            samples.append(make_sample(t, prop(state.amps, t - w.tau), state.partition, H, monitor))
    return out, ev, samples


def run_trajectory(initial: StateVector, H: OperatorMatrix, config: ScheduleConfig,
                   trajectory: int = 0, *, monitor=None) -> RunRecord:
    """Sequential half-cycles with per-cell random streams."""
    if not initial.is_normalized(1e-9):
        raise DomainError(f"initial state must be normalized (norm {initial.norm():.12g})")
    prop = Propagator(H, config.hbar)
    state = initial
    events, samples, norms = [], [], [initial.norm()]
    for j in range(config.n_half_cycles):
        g = rngmod.stream(config.seed, trajectory, j)
        state, ev, smp = advance_half_cycle(state, H, config, j, g, propagator=prop,
                                            monitor=monitor)
        events.append(ev)
        samples.extend(smp)
        norms.append(state.norm())
    return RunRecord(trajectory, events, state, samples, norms)


@dataclass
class EnsembleSummary:
    n_trajectories: int
    outcome_counts: dict
    n_events: int
    n_triggered: int
    n_qualified: int
    mean_coherence_at_trigger: float | None
    max_norm_defect: float
    records: list = field(default_factory=list, repr=False)

    def frequencies(self, subsystem: int):
        counts = self.outcome_counts.get(subsystem, {})
        total = sum(counts.values())
        return {k: c / total for k, c in sorted(counts.items())} if total else {}


def _run_chunk(args):
    initial, H, config, indices, keep, monitor = args
    out = []
    for i in indices:
        rec = run_trajectory(initial, H, config, i, monitor=monitor)
        if i not in keep:
            rec.samples = []
            rec.final = None
        out.append(rec)
    return out


def run_ensemble(initial: StateVector, H: OperatorMatrix, config: ScheduleConfig, n_traj: int,
                 *, workers: int = 1, keep_records: int = 16, monitor=None) -> EnsembleSummary:
    """Independent trajectories ``0..n_traj-1``; results do not depend on ``workers``.

    Full records (samples and final state) are kept for the first
    ``keep_records`` trajectories; event logs are kept for all.
    """
    if n_traj < 1:
        raise DomainError("n_traj must be >= 1")
    keep = set(range(min(keep_records, n_traj)))
    workers = max(1, int(workers))
    if workers == 1:
        records = _run_chunk((initial, H, config, range(n_traj), keep, monitor))
    else:
        chunks = np.array_split(np.arange(n_traj), min(workers * 4, n_traj))
        jobs = [(initial, H, config, [int(i) for i in c], keep, monitor) for c in chunks if len(c)]
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1)) as ex:
            records = [r for part in ex.map(_run_chunk, jobs) for r in part]
    records.sort(key=lambda r: r.trajectory)
    counts: dict = {}
    coh = []
    n_events = n_trig = n_qual = 0
    norm_defect = 0.0
    for rec in records:
        norm_defect = max(norm_defect, max(abs(n - 1.0) for n in rec.boundary_norms))
        for ev in rec.events:
            n_events += 1
            n_qual += ev.qualified
            if ev.triggered:
                n_trig += 1
                for s, k in zip(ev.subsystem, ev.k_tilde):
                    counts.setdefault(s, {}).setdefault(k, 0)
                    counts[s][k] += 1
                coh.extend(c for c in ev.coherence if c is not None)
    return EnsembleSummary(
        n_traj, counts, n_events, n_trig, n_qual,
        float(np.mean(coh)) if coh else None, norm_defect, records,
    )


def bernoulli_no_trigger(p_each: float, n_subsystems: int, n_cycles: int, seed: int = 0):
    """Trigger-layer check without dynamics.

    Each cycle start draws one uniform per subsystem from its own stream and
    triggers subsystem ``s`` when ``u_s < p_each``.  Returns the number of
    cycle starts with no trigger at all.
    """
    if not 0 <= p_each <= 1:
        raise DomainError("p_each must lie in [0, 1]")
    none = 0
    for c in range(n_cycles):
        g = rngmod.stream(seed, 0, c, rngmod.TRIGGER_LAYER)
        if np.all(g.random(n_subsystems) >= p_each):
            none += 1
    return none


def with_seed(config: ScheduleConfig, seed: int) -> ScheduleConfig:
    return replace(config, seed=rngmod.check_seed(seed))


__all__ = [
    "EnsembleSummary",
    "HalfCycleEvent",
    "PreferredBasis",
    "RunRecord",
    "ScheduleConfig",
    "TriggerPolicy",
    "advance_half_cycle",
    "bernoulli_no_trigger",
    "run_ensemble",
    "run_trajectory",
    "sample_target",
    "trigger_probability",
    "with_seed",
]
