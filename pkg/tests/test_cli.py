import csv
import json
from pathlib import Path

import numpy as np
import pytest

from collapse_lab.cli import dump_json, main, resolve_seed, wilson_interval
from collapse_lab.errors import ValidationError
from collapse_lab.scenario import build_scenario, parse_scenario

from conftest import random_system

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

MINIMAL = {
    "dims": [2, 2],
    "hamiltonian": [{"type": "pauli_chain", "paulis": "XI", "strength": 0.5},
                    {"type": "pauli_chain", "paulis": "ZZ", "strength": 0.1}],
    "initial": {"product": [[1, 1], [1, 0]]},
    "window": {"T": 1.0},
    "policy": {"kind": "threshold", "theta": 1.0, "enabled": [0]},
    "pinned_bases": {"0": "identity"},
    "schedule": {"n_half_cycles": 2},
    "seed": 5,
    "grid": 9,
    "trajectories": 6,
}


def _write(tmp_path, data, name="scn.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data, indent=2))
    return p


def test_minimal_scenario_parses(tmp_path):
    scn = parse_scenario(_write(tmp_path, MINIMAL))
    assert scn.total_dim == 4
    assert scn.name == "scn"
    assert scn.initial.is_normalized(1e-15)
    assert scn.config.basis_mode == "pinned"
    assert scn.config.samples_per_half_cycle == 9
    np.testing.assert_allclose(scn.H.entries, scn.H.entries.conj().T)


def test_missing_window_T_is_named(tmp_path):
    bad = dict(MINIMAL, window={"eta": 1e-3})
    with pytest.raises(ValidationError) as exc:
        parse_scenario(_write(tmp_path, bad))
    assert any("window.T" in p and "missing" in p for p in exc.value.problems)
    assert all(p.startswith("line ") for p in exc.value.problems)


def test_non_hermitian_literal_reports_asymmetry(tmp_path):
    bad = dict(MINIMAL, hamiltonian=[{"type": "matrix", "subsystems": [0],
                                      "matrix": [[0, 1], [0.5, 0]]}])
    with pytest.raises(ValidationError) as exc:
        parse_scenario(_write(tmp_path, bad))
    msg = exc.value.problems[0]
    assert "hamiltonian[0].matrix" in msg and "5.000e-01" in msg


def test_every_problem_is_listed(tmp_path):
    bad = dict(MINIMAL, dims=[2, 2], initial={"product": [[0, 0], [1, 0]]},
               policy={"kind": "ramp"}, trajectories=0)
    bad.pop("window")
    with pytest.raises(ValidationError) as exc:
        parse_scenario(_write(tmp_path, bad))
    joined = "\n".join(exc.value.problems)
    for key in ("initial", "window", "policy", "trajectories"):
        assert key in joined
    assert len(exc.value.problems) >= 4


def test_line_anchors_point_at_the_key(tmp_path):
    p = _write(tmp_path, dict(MINIMAL, trajectories=0))
    with pytest.raises(ValidationError) as exc:
        parse_scenario(p)
    line = int(exc.value.problems[0].split(":")[0].split()[1])
    assert '"trajectories"' in p.read_text().splitlines()[line - 1]


def test_parse_errors(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{"dims": [2,\n  }')
    with pytest.raises(ValidationError, match="line 2"):
        parse_scenario(p)
    with pytest.raises(ValidationError, match="cannot read"):
        parse_scenario(tmp_path / "absent.json")


def test_builders():
    data = dict(MINIMAL, dims=[2, 3], initial={"dense": [1, 0, 0, 0, [0, 1], 0]},
                hamiltonian=[{"type": "diagonal", "subsystem": 1, "values": [0, 1, 2]},
                             {"type": "position_coupling", "subsystems": [0, 1], "x": [0, 1],
                              "b": [[0, 1, 0], [1, 0, 0], [0, 0, 0]], "g": 3.0}])
    data["pinned_bases"] = {"0": "identity"}
    scn = build_scenario(data)
    B = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    expect = np.kron(np.eye(2), np.diag([0, 1, 2])) + 3.0 * np.kron(np.diag([0, 1]), B)
    np.testing.assert_allclose(scn.H.entries, expect)
    np.testing.assert_allclose(scn.initial.amps, np.array([1, 0, 0, 0, 1j, 0]) / np.sqrt(2))
    with pytest.raises(ValidationError, match="Pauli X on subsystem 1"):
        build_scenario(dict(data, hamiltonian=[{"type": "pauli_chain", "paulis": "IX"}]))


@pytest.mark.parametrize("name", ["born.json", "two_level_env.json", "noninteracting.json"])
def test_shipped_scenarios_parse(name):
    assert parse_scenario(SCENARIOS / name).total_dim >= 4


def test_dump_json_conventions():
    text = dump_json({"b": 0.1, "a": [1 + 2j], "n": float("nan"), "arr": np.arange(2)})
    assert json.loads(text) == {"b": 0.1, "a": [[1.0, 2.0]], "n": None, "arr": [0, 1]}
    assert list(json.loads(text)) == ["b", "a", "n", "arr"]
    assert "0.1" in text and "0.10000" not in text


def test_wilson_interval():
    lo, hi = wilson_interval(30, 100)
    assert lo < 0.3 < hi
    assert wilson_interval(0, 10)[0] == 0.0


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("COLLAPSE_LAB_SEED", raising=False)
    assert resolve_seed(None, 7) == 7
    monkeypatch.setenv("COLLAPSE_LAB_SEED", "9")
    assert resolve_seed(None, 7) == 9
    assert resolve_seed(3, 7) == 3
    monkeypatch.setenv("COLLAPSE_LAB_SEED", "-4")
    with pytest.raises(ValidationError):
        resolve_seed(None, 7)


def pairs(a):
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _run(tmp_path, scn, out, *extra):
    return main(["run", "--scenario", str(scn), "--out", str(out), *extra])


def test_run_writes_artifacts(tmp_path, monkeypatch):
    monkeypatch.delenv("COLLAPSE_LAB_SEED", raising=False)
    scn = _write(tmp_path, MINIMAL)
    assert _run(tmp_path, scn, tmp_path / "a") == 0
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["trajectories"] == 6 and summary["seed"] == 5
    assert summary["checks"]["events_only_in_qualified_half_cycles"] is True
    events = [json.loads(x) for x in (tmp_path / "a" / "events.jsonl").read_text().splitlines()]
    assert len(events) == 12
    assert list(events[0]) == ["trajectory", "j", "qualified", "coherence", "triggered",
                               "subsystem", "k_tilde", "p_target"]
    assert all(not e["triggered"] for e in events if not e["qualified"])
    with open(tmp_path / "a" / "trajectory_0000.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["t", "norm", "energy", "coherence"]
    assert len(rows) == 1 + 2 * 9


def test_run_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.delenv("COLLAPSE_LAB_SEED", raising=False)
    scn = _write(tmp_path, MINIMAL)
    _run(tmp_path, scn, tmp_path / "a")
    _run(tmp_path, scn, tmp_path / "b", "--workers", "2")
    for f in ("summary.json", "events.jsonl", "trajectory_0003.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    _run(tmp_path, scn, tmp_path / "c", "--seed", "6")
    assert json.loads((tmp_path / "c" / "summary.json").read_text())["seed"] == 6


def test_exit_codes(tmp_path, monkeypatch):
    monkeypatch.delenv("COLLAPSE_LAB_SEED", raising=False)
    bad = _write(tmp_path, dict(MINIMAL, window={}), "bad.json")
    assert main(["run", "--scenario", str(bad)]) == 2
    assert main(["solve-basis", "--scenario", str(bad)]) == 2
    # an entangled draw with no exact preferred basis: exit 3
    rng = np.random.default_rng(7)
    random_system(rng, (2, 2))
    H, psi = random_system(rng, (2, 2))
    ent = dict(MINIMAL, pinned_bases={}, hamiltonian=[{"type": "matrix", "matrix": pairs(H.entries)}],
               initial={"dense": pairs(psi.amps)})
    assert main(["solve-basis", "--scenario", str(_write(tmp_path, ent, "ent.json")),
                 "--out", str(tmp_path / "sb")]) == 3
    doc = json.loads((tmp_path / "sb" / "basis.json").read_text())
    assert doc["subsystems"][0]["converged"] is False
    assert doc["subsystems"][0]["residual"] > 1e-3


def test_solve_basis_and_verify(tmp_path, capsys):
    out = tmp_path / "nb"
    assert main(["solve-basis", "--scenario", str(SCENARIOS / "noninteracting.json"),
                 "--out", str(out)]) == 0
    doc = json.loads((out / "basis.json").read_text())
    assert all(sub["converged"] for sub in doc["subsystems"])
    assert len(doc["subsystems"][0]["U"]) == 2
    assert main(["verify", "--scenario", str(SCENARIOS / "noninteracting.json"),
                 "--out", str(out)]) == 0
    assert "PASS" in capsys.readouterr().out


def test_fit_exponent_roundtrip(tmp_path, monkeypatch):
    monkeypatch.delenv("COLLAPSE_LAB_SEED", raising=False)
    data = dict(MINIMAL, grid=4000, trajectories=1,
                schedule={"n_half_cycles": 1})
    data["hamiltonian"] = [{"type": "pauli_chain", "paulis": "IZ", "strength": 0.3}]
    scn = _write(tmp_path, data)
    assert _run(tmp_path, scn, tmp_path / "r") == 0
    csv_path = tmp_path / "r" / "trajectory_0000.csv"
    assert main(["fit-exponent", str(csv_path), "--scenario", str(scn),
                 "--out", str(tmp_path / "fit")]) == 0
    fit = json.loads((tmp_path / "fit" / "fit.json").read_text())
    assert fit["beta_hat"] == pytest.approx(2.0, abs=0.05)
    assert fit["r_squared"] >= 0.999
