"""Scenario files: JSON description of a system, window and schedule.

Every problem found while validating is collected and reported together,
each anchored to the line of the offending (or enclosing) key.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis_solver import PreferredBasis, SolverOptions
from .errors import DomainError, ValidationError
from .hilbert import (
    HERMITIAN_TOL,
    OperatorMatrix,
    StateVector,
    TensorPartition,
    embed_operator,
    hermitian_defect,
    kron_all,
)
from .scheduler import ScheduleConfig, TriggerPolicy
from .window import CollapseWindow

SCENARIO_HERMITIAN_TOL = 1e-10
PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass
class Scenario:
    name: str
    dims: tuple
    H: OperatorMatrix
    initial: StateVector
    window: CollapseWindow
    config: ScheduleConfig
    grid: int = 0
    trajectories: int = 1
    out_dir: str | None = None
    source: str | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))


class _Locator:
    """Best-effort line numbers for key paths in the source text."""

    def __init__(self, text: str):
        self.text = text or ""

    def line(self, path) -> int | None:
        pos = 0
        found = None
        dec = json.JSONDecoder()
        for key in path:
            if isinstance(key, int):
                pos = self._element(dec, pos, key)
                if pos is None:
                    break
                found = self.text.count("\n", 0, pos) + 1
                continue
            m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(self.text, pos)
            if m is None:
                break
            pos = m.end()
            found = self.text.count("\n", 0, m.start()) + 1
        return found

    def _element(self, dec, pos, index):
        """Offset of element ``index`` of the array starting at or after ``pos``."""
        t = self.text
        start = t.find("[", pos)
        if start < 0:
            return None
        i = start + 1
        try:
            for _ in range(index):
                while t[i] in " \t\r\n":
                    i += 1
                _, i = dec.raw_decode(t, i)
                while t[i] in " \t\r\n,":
                    i += 1
            while t[i] in " \t\r\n":
                i += 1
        except (ValueError, IndexError):
            return None
        return i


class _Collector:
    def __init__(self, locator: _Locator):
        self.loc = locator
        self.problems = []

    def add(self, path, msg):
        dotted = ".".join(str(p) if isinstance(p, str) else f"[{p}]" for p in path) or "<root>"
        dotted = dotted.replace(".[", "[")
        line = self.loc.line(path)
        where = f"line {line}: " if line else ""
        self.problems.append(f"{where}{dotted}: {msg}")

    def get(self, obj, path, key, kind=None, required=True, default=None):
        if not isinstance(obj, dict):
            return default
        if key not in obj:
            if required:
                self.add(path + [key], "required field is missing")
            return default
        val = obj[key]
        if kind is not None and val is not None and not _isinstance(val, kind):
            self.add(path + [key], f"expected {_kind_name(kind)}, got {type(val).__name__}")
            return default
        return val


def _isinstance(val, kind):
    if kind is float:
        return isinstance(val, (int, float)) and not isinstance(val, bool)
    if kind is int:
        return isinstance(val, int) and not isinstance(val, bool)
    return isinstance(val, kind)


def _kind_name(kind):
    return {float: "number", int: "integer", list: "array", dict: "object", str: "string",
            bool: "boolean"}.get(kind, getattr(kind, "__name__", str(kind)))


def parse_complex(v):
    """A number or a two-element ``[re, im]`` array."""
    if isinstance(v, bool):
        raise ValueError("booleans are not numbers")
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, list) and len(v) == 2 and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        return complex(v[0], v[1])
    raise ValueError(f"cannot read {v!r} as a complex number")


def _complex_array(v, ndim):
    if ndim == 1:
        if not isinstance(v, list) or not v:
            raise ValueError("expected a non-empty array")
        return np.array([parse_complex(x) for x in v])
    if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
        raise ValueError("expected an array of rows")
    rows = [[parse_complex(x) for x in r] for r in v]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("rows have unequal lengths")
    return np.array(rows)


def _term(c: _Collector, term, path, dims):
    kind = c.get(term, path, "type", str)
    if kind is None:
        return None
    strength = c.get(term, path, "strength", float, required=False, default=1.0)
    try:
        if kind == "matrix":
            subs = c.get(term, path, "subsystems", list, required=False)
            subs = list(range(len(dims))) if subs is None else subs
            m = _complex_array(c.get(term, path, "matrix", list), 2)
            defect = hermitian_defect(m)
            if defect > SCENARIO_HERMITIAN_TOL * max(1.0, float(np.abs(m).max())):
                c.add(path + ["matrix"], f"matrix is not Hermitian (max asymmetry {defect:.3e})")
                return None
            op = embed_operator(m, subs, dims)
        elif kind == "diagonal":
            s = c.get(term, path, "subsystem", int)
            vals = c.get(term, path, "values", list)
            if s is None or vals is None:
                return None
            v = np.array([float(x) for x in vals])
            op = embed_operator(np.diag(v), [s], dims)
        elif kind == "pauli_chain":
            letters = c.get(term, path, "paulis", str)
            if letters is None:
                return None
            if len(letters) != len(dims):
                c.add(path + ["paulis"], f"needs one letter per subsystem ({len(dims)})")
                return None
            mats = []
            for s, ch in enumerate(letters.upper()):
                if ch not in PAULI:
                    c.add(path + ["paulis"], f"unknown Pauli letter {ch!r}")
                    return None
                if ch == "I":
                    mats.append(np.eye(dims[s]))
                elif dims[s] != 2:
                    c.add(path + ["paulis"], f"Pauli {ch} on subsystem {s} of dim {dims[s]}")
                    return None
                else:
                    mats.append(PAULI[ch])
            op = kron_all(mats)
        elif kind == "position_coupling":
            subs = c.get(term, path, "subsystems", list)
            x = c.get(term, path, "x", list)
            b = c.get(term, path, "b", list)
            g = c.get(term, path, "g", float, required=False, default=1.0)
            if subs is None or x is None or b is None:
                return None
            if len(subs) != 2:
                c.add(path + ["subsystems"], "position coupling needs exactly two subsystems")
                return None
            X = np.diag([float(v) for v in x])
            B = _complex_array(b, 2)
            defect = hermitian_defect(B)
            if defect > SCENARIO_HERMITIAN_TOL * max(1.0, float(np.abs(B).max())):
                c.add(path + ["b"], f"matrix is not Hermitian (max asymmetry {defect:.3e})")
                return None
            op = g * embed_operator(np.kron(X, B), subs, dims)
        else:
            c.add(path + ["type"], f"unknown term type {kind!r}")
            return None
    except (ValueError, DomainError) as exc:
        c.add(path, str(exc))
        return None
    return strength * op


def build_scenario(data: dict, text: str = "", source: str | None = None) -> Scenario:
    """Validate a parsed scenario object; raises ValidationError listing all problems."""
    c = _Collector(_Locator(text))
    if not isinstance(data, dict):
        raise ValidationError(["<root>: scenario must be a JSON object"])
    name = data.get("name", Path(source).stem if source else "scenario")

    dims = c.get(data, [], "dims", list)
    if dims is not None:
        if not dims or not all(_isinstance(d, int) and d >= 1 for d in dims):
            c.add(["dims"], "must be a non-empty array of positive integers")
            dims = None
        else:
            dims = tuple(dims)

    H = None
    terms = c.get(data, [], "hamiltonian", list)
    if dims is not None and terms is not None:
        D = int(np.prod(dims))
        total = np.zeros((D, D), dtype=complex)
        ok = True
        for i, term in enumerate(terms):
            op = _term(c, term, ["hamiltonian", i], dims)
            if op is None:
                ok = False
            else:
                total += op
        if ok:
            defect = hermitian_defect(total)
            if defect > SCENARIO_HERMITIAN_TOL * max(1.0, float(np.abs(total).max(initial=0.0))):
                c.add(["hamiltonian"], f"assembled Hamiltonian is not Hermitian ({defect:.3e})")
            else:
                total = 0.5 * (total + total.conj().T)
                herm = hermitian_defect(total) <= HERMITIAN_TOL
                H = OperatorMatrix(TensorPartition(dims), total, herm)

    initial = None
    ini = c.get(data, [], "initial", dict)
    if dims is not None and ini is not None:
        key = None
        try:
            if "product" in ini:
                parts = ini["product"]
                if not isinstance(parts, list) or len(parts) != len(dims):
                    raise ValueError(f"needs {len(dims)} factors")
                vecs = []
                for s, v in enumerate(parts):
                    a = _complex_array(v, 1)
                    if a.size != dims[s]:
                        raise ValueError(f"factor {s} has length {a.size}, dim is {dims[s]}")
                    vecs.append(a)
                amps = kron_all(vecs)
                key = "product"
            elif "dense" in ini:
                amps = _complex_array(ini["dense"], 1)
                key = "dense"
                if amps.size != int(np.prod(dims)):
                    raise ValueError(f"dense state has length {amps.size}, total_dim is "
                                     f"{int(np.prod(dims))}")
            else:
                raise ValueError("needs a 'product' or 'dense' entry")
            n = float(np.linalg.norm(amps))
            if not n > 0 or not np.isfinite(n):
                raise ValueError("state does not normalize (zero or non-finite norm)")
            initial = StateVector(TensorPartition(dims), amps / n)
        except ValueError as exc:
            c.add(["initial"] + ([key] if key else []), str(exc))

    window = None
    wd = c.get(data, [], "window", dict)
    if wd is not None:
        T = c.get(wd, ["window"], "T", float)
        tau = c.get(wd, ["window"], "tau", float, required=False, default=0.0)
        gamma = c.get(wd, ["window"], "gamma", float, required=False)
        eta = c.get(wd, ["window"], "eta", float, required=False, default=1e-3)
        coeffs = c.get(wd, ["window"], "coeffs", list, required=False, default=[0.5, 0.5])
        if coeffs is not None and not all(_isinstance(x, float) for x in coeffs):
            c.add(["window", "coeffs"], "coefficients must be real numbers")
            coeffs = None
        if T is not None and coeffs is not None:
            try:
                window = CollapseWindow(tau, T, tuple(coeffs), gamma, eta)
            except DomainError as exc:
                c.add(["window"], str(exc))

    policy = None
    pd = c.get(data, [], "policy", dict, required=False, default={})
    if pd is not None:
        try:
            policy = TriggerPolicy(
                c.get(pd, ["policy"], "kind", str, required=False, default="threshold"),
                c.get(pd, ["policy"], "theta", float, required=False, default=0.1),
                c.get(pd, ["policy"], "enabled", list, required=False),
            )
            if dims is not None:
                policy.subsystems(len(dims))
        except DomainError as exc:
            c.add(["policy"], str(exc))
            policy = None

    pinned = {}
    pb = c.get(data, [], "pinned_bases", dict, required=False, default={})
    for key, val in (pb or {}).items():
        path = ["pinned_bases", key]
        try:
            s = int(key)
            if dims is None or not 0 <= s < len(dims):
                raise ValueError(f"subsystem {key} out of range")
            if val == "identity":
                U = np.eye(dims[s], dtype=complex)
            else:
                U = _complex_array(val, 2)
            pinned[s] = PreferredBasis(s, U)
        except (ValueError, DomainError) as exc:
            c.add(path, str(exc))

    sd = c.get(data, [], "schedule", dict, required=False, default={})
    seed = c.get(data, [], "seed", int, required=False, default=0)
    config = None
    if sd is not None and window is not None and policy is not None:
        solver = SolverOptions(seed=seed or 0)
        try:
            config = ScheduleConfig(
                window=window,
                policy=policy,
                t0=c.get(sd, ["schedule"], "t0", float, required=False, default=window.tau),
                n_half_cycles=c.get(sd, ["schedule"], "n_half_cycles", int, required=False,
                                    default=1),
                qualified_parity=c.get(sd, ["schedule"], "qualified_parity", int,
                                       required=False, default=0),
                seed=seed or 0,
                pinned_bases=pinned or None,
                basis_mode=c.get(sd, ["schedule"], "basis_mode", str, required=False,
                                 default="pinned" if pinned else "solve"),
                basis_fallback=c.get(sd, ["schedule"], "basis_fallback", str, required=False,
                                     default="skip"),
                multi_target=c.get(sd, ["schedule"], "multi_target", bool, required=False,
                                   default=True),
                solver=solver,
                samples_per_half_cycle=c.get(data, [], "grid", int, required=False, default=0),
            )
        except DomainError as exc:
            c.add(["schedule"], str(exc))
    if H is not None and initial is not None and H.partition.total_dim != initial.amps.size:
        c.add(["initial"], "state and Hamiltonian dimensions differ")

    traj = c.get(data, [], "trajectories", int, required=False, default=1)
    if traj is not None and traj < 1:
        c.add(["trajectories"], "must be >= 1")
    out = c.get(data, [], "output", dict, required=False, default={}) or {}
    if c.problems:
        raise ValidationError(c.problems)
    return Scenario(
        name=str(name), dims=dims, H=H, initial=initial, window=window, config=config,
        grid=config.samples_per_half_cycle, trajectories=traj, out_dir=out.get("dir"),
        source=source, raw=data,
    )


def parse_scenario(path) -> Scenario:
    """Read and validate a scenario file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ValidationError([f"{p}: cannot read scenario ({exc.strerror})"])
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError([f"line {exc.lineno}, column {exc.colno}: JSON parse error: {exc.msg}"])
    return build_scenario(data, text, str(p))
