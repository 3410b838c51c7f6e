"""Command-line entry point: ``collapse-lab {run,solve-basis,verify,fit-exponent}``.

Exit codes: 0 success, 2 validation failure, 3 numeric failure,
4 statistical or invariant-check failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import fit_asymptotic_exponent, mean_coherence, reduced_density_matrix
from .basis_solver import PreferredBasis, solve_preferred_basis
from .dynamics import Propagator
from .errors import DomainError, NumericError, ValidationError
from .rng import check_seed
from .scenario import parse_scenario
from .scheduler import run_ensemble
from .verify import default_suite, scenario_suite
from .window import CollapseWindow

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4
SEED_ENV = "COLLAPSE_LAB_SEED"
SAMPLE_CAP = 16

log = logging.getLogger("collapse_lab")


# ---------------------------------------------------------------------------
# serialization


def jsonable(x):
    """Plain JSON types; complex as ``[re, im]``, non-finite floats as null."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [jsonable(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [jsonable(float(x.real)), jsonable(float(x.imag))]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def dump_json(obj) -> str:
    # json writes floats with repr, i.e. the shortest round-trip decimal
    return json.dumps(jsonable(obj), indent=2) + "\n"


def wilson_interval(k: int, n: int, z: float = 1.959963984540054):
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, mid - half), min(1.0, mid + half))


def resolve_seed(flag, scenario_seed: int) -> int:
    """CLI flag, then the environment variable, then the scenario value."""
    if flag is not None:
        return check_seed(flag)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return check_seed(int(env, 0))
        except ValueError:
            raise ValidationError([f"{SEED_ENV}={env!r} is not an unsigned 64-bit integer"])
    return check_seed(scenario_seed)


def _out_dir(args, scn) -> Path:
    d = Path(args.out or (scn.out_dir if scn is not None and scn.out_dir else "collapse_lab_out"))
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# run


def _monitor_basis(scn):
    s = scn.config.policy.subsystems(len(scn.dims))[0]
    b = (scn.config.pinned_bases or {}).get(s) or PreferredBasis.reference(s, scn.dims[s])
    return s, b


def write_timeseries(path: Path, samples, s, basis: PreferredBasis):
    d = basis.dim
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "norm", "energy", "coherence"] + [f"w_{k}" for k in range(d)])
        for smp in samples:
            M = reduced_density_matrix(smp.psi, basis, s)
            wr.writerow([repr(smp.t), repr(smp.norm), repr(smp.energy),
                         repr(mean_coherence(M))] + [repr(float(x)) for x in smp.weights])


def _born_check(scn, summary):
    """Outcome frequencies at the first qualified half-cycle against Born weights.

    Only defined with pinned bases: the state before the first qualified
    half-cycle is deterministic, so its diagonal weights are the expected
    outcome probabilities.
    """
    cfg = scn.config
    if cfg.basis_mode != "pinned" or cfg.n_half_cycles <= cfg.qualified_parity:
        return None
    j0 = cfg.qualified_parity
    state = scn.initial
    if j0 == 1:
        state = state.with_amps(Propagator(scn.H, cfg.hbar)(state.amps, cfg.window.T))
    report = {}
    for s in cfg.policy.subsystems(len(scn.dims)):
        M = reduced_density_matrix(state, cfg.pinned_bases[s], s)
        expected = M.diagonal / M.trace
        counts = np.zeros(M.dim, dtype=int)
        for rec in summary.records:
            ev = rec.events[j0]
            for sub, k in zip(ev.subsystem, ev.k_tilde):
                if sub == s:
                    counts[k] += 1
        n = int(counts.sum())
        if n == 0:
            continue
        rows = []
        ok = True
        for k in range(M.dim):
            sigma = math.sqrt(expected[k] * (1 - expected[k]) / n)
            f = counts[k] / n
            within = abs(f - expected[k]) <= 3 * sigma + 1e-15
            ok &= within
            rows.append({"k": k, "expected": float(expected[k]), "observed": f,
                         "count": int(counts[k]), "within_3sigma": bool(within)})
        report[str(s)] = {"n": n, "outcomes": rows, "passed": bool(ok)}
    return report


def cmd_run(args) -> int:
    scn = parse_scenario(args.scenario)
    seed = resolve_seed(args.seed, scn.config.seed)
    grid = args.grid if args.grid is not None else scn.grid
    config = replace(scn.config, seed=seed, samples_per_half_cycle=grid or 0)
    n_traj = args.trajectories or scn.trajectories
    out = _out_dir(args, scn)
    s_mon, basis_mon = _monitor_basis(scn)
    summary = run_ensemble(scn.initial, scn.H, config, n_traj, workers=args.workers,
                           keep_records=SAMPLE_CAP, monitor=(s_mon, basis_mon.U))

    with open(out / "events.jsonl", "w") as fh:
        for rec in summary.records:
            for ev in rec.events:
                fh.write(json.dumps(jsonable({"trajectory": rec.trajectory, **ev.as_dict()}))
                         + "\n")
    written = []
    if grid:
        for rec in summary.records[:SAMPLE_CAP]:
            p = out / f"trajectory_{rec.trajectory:04d}.csv"
            write_timeseries(p, rec.samples, s_mon, basis_mon)
            written.append(p.name)

    parity_ok = all(not ev.triggered or ev.qualified
                    for rec in summary.records for ev in rec.events)
    norm_ok = summary.max_norm_defect <= 1e-8
    outcomes = {}
    for s, counts in sorted(summary.outcome_counts.items()):
        n = sum(counts.values())
        outcomes[str(s)] = [
            {"k": k, "count": c, "frequency": c / n, "ci95": list(wilson_interval(c, n))}
            for k, c in sorted(counts.items())
        ]
    born = _born_check(scn, summary)
    checks = {
        "events_only_in_qualified_half_cycles": parity_ok,
        "max_norm_defect": summary.max_norm_defect,
        "norm_within_1e-8": norm_ok,
        "born_first_qualified": born,
    }
    doc = {
        "scenario": scn.name,
        "seed": seed,
        "trajectories": n_traj,
        "half_cycles": config.n_half_cycles,
        "events": summary.n_events,
        "qualified": summary.n_qualified,
        "triggered": summary.n_triggered,
        "mean_coherence_at_trigger": summary.mean_coherence_at_trigger,
        "outcomes": outcomes,
        "checks": checks,
        "timeseries": written,
    }
    (out / "summary.json").write_text(dump_json(doc))
    print(f"wrote {out / 'summary.json'} ({summary.n_triggered} collapse events)")
    failed = not (parity_ok and norm_ok) or (born and not all(b["passed"] for b in born.values()))
    return EXIT_CHECK if failed else EXIT_OK


# ---------------------------------------------------------------------------
# solve-basis


def cmd_solve_basis(args) -> int:
    scn = parse_scenario(args.scenario)
    seed = resolve_seed(args.seed, scn.config.seed)
    opts = replace(scn.config.solver, seed=seed)
    out = _out_dir(args, scn)
    doc = {"scenario": scn.name, "seed": seed, "subsystems": []}
    all_ok = True
    for s in scn.config.policy.subsystems(len(scn.dims)):
        sol = solve_preferred_basis(scn.H, scn.initial, s, opts)
        all_ok &= sol.converged
        doc["subsystems"].append({
            "subsystem": s,
            "U": [[[float(z.real), float(z.imag)] for z in row] for row in sol.basis.U],
            "E": sol.E,
            "residual": sol.residual,
            "converged": sol.converged,
            "iterations": sol.iterations,
            "best_seed": sol.seed,
            "seeds": sol.seed_residuals,
            "vacuous": sol.vacuous,
        })
        print(f"subsystem {s}: residual {sol.residual:.3e} "
              f"({'converged' if sol.converged else 'not converged'})")
    (out / "basis.json").write_text(dump_json(doc))
    return EXIT_OK if all_ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    if args.scenario:
        scn = parse_scenario(args.scenario)
        results = scenario_suite(scn)
        title = scn.name
    else:
        if args.suite != "default":
            raise ValidationError([f"unknown suite {args.suite!r}; available: default"])
        results = default_suite(resolve_seed(args.seed, 0))
        title = "default"
    print(f"verify: {title}")
    for r in results:
        print("  " + r.row())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.json").write_text(dump_json({"suite": title,
                                                    "checks": [r.as_dict() for r in results]}))
    failed = [r for r in results if r.passed is False]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed or not applicable")
    return EXIT_CHECK if failed else EXIT_OK


# ---------------------------------------------------------------------------
# fit-exponent


def read_timeseries(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError([f"{path}: no data rows"])
    cols = [c for c in rows[0] if c.startswith("w_")]
    if "t" not in rows[0] or not cols:
        raise ValidationError([f"{path}: needs a 't' column and weight columns w_0..w_(d-1)"])
    t = np.array([float(r["t"]) for r in rows])
    w = np.array([[float(r[c]) for c in cols] for r in rows])
    return t, w


def cmd_fit_exponent(args) -> int:
    t, w = read_timeseries(args.csv)
    if args.scenario:
        window = parse_scenario(args.scenario).window
    else:
        window = CollapseWindow(tau=float(t.min()), T=float(t.max() - t.min()), eta=args.eta)
    k = int(np.argmax(w[-1]))
    off = np.delete(w, k, axis=1).sum(axis=1)  # not sum - w_k, which cancels
    # below the integrator's absolute tolerance the sampled weights are noise
    mask = (t >= window.tau) & (t <= window.cutoff) & (off > args.min_weight)
    fit = fit_asymptotic_exponent(t[mask], off[mask], window, power=2,
                                  min_samples=args.min_samples)
    doc = {"source": str(args.csv), "target_index": k, **fit.as_dict()}
    text = dump_json(doc)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "fit.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="collapse-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a trajectory ensemble")
    r.add_argument("--scenario", required=True)
    r.add_argument("--trajectories", type=int)
    r.add_argument("--seed", type=lambda x: int(x, 0))
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out")
    r.add_argument("--grid", type=int, help="samples per half-cycle in the time series")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("solve-basis", help="solve for the preferred basis")
    b.add_argument("--scenario", required=True)
    b.add_argument("--seed", type=lambda x: int(x, 0))
    b.add_argument("--out")
    b.set_defaults(func=cmd_solve_basis)

    v = sub.add_parser("verify", help="run the invariant suite")
    v.add_argument("--scenario")
    v.add_argument("--suite", default="default")
    v.add_argument("--seed", type=lambda x: int(x, 0))
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    f = sub.add_parser("fit-exponent", help="fit the endpoint decay of a time series")
    f.add_argument("csv")
    f.add_argument("--scenario")
    f.add_argument("--eta", type=float, default=1e-3)
    f.add_argument("--min-samples", type=int, default=20)
    f.add_argument("--min-weight", type=float, default=1e-16,
                   help="ignore off-target weights at or below this value")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit_exponent)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        for prob in exc.problems:
            print(f"error: {prob}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
