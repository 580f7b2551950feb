import json
import math

import numpy as np
import pytest

from moyalkin.bath import gamma_squared
from moyalkin.errors import ConfigError
from moyalkin.harness import KINDS, ExperimentConfig, execute, run_experiment
from moyalkin.harness.baths import BATH_DEFAULTS, make_bath
from moyalkin.harness.cli import main

SWEEP = {"n_grid": 128, "fock_check": False}


def cfg(kind, **sections):
    return ExperimentConfig.from_dict({"kind": kind, **sections})


# --------------------------------------------------------------- config

def test_defaults_cover_every_kind():
    for kind in KINDS:
        c = ExperimentConfig.defaults(kind)
        assert c.kind == kind and c.seed == 0


def test_merge_and_coercion():
    c = cfg("evolve-fp", physics={"lam": 1}, numerics={"n_grid": 64})
    assert c.physics["lam"] == 1.0 and isinstance(c.physics["lam"], float)
    assert c.numerics["n_grid"] == 64 and c.numerics["order"] == 4
    assert cfg("classical-limit", physics={"a": 0}).physics["a"] == [0.0]


@pytest.mark.parametrize(
    "data",
    [
        {"kind": "nope"},
        {"kind": "stability", "physics": {"gamma": 1.0}},
        {"kind": "stability", "extra": 1},
        {"kind": "stability", "physics": {"beta": -1.0}},
        {"kind": "stability", "physics": {"lam": "big"}},
        {"kind": "evolve-fp", "numerics": {"n_grid": 1.5}},
        {"kind": "evolve-fp", "physics": {"lam": [0.1, 0.2]}},
        {"kind": "classical-limit", "physics": {"hbar": [0.1, 0.2]}},
        {"kind": "classical-limit", "physics": {"hbar": [0.2, 0.0]}},
        {"kind": "stability", "bath": {"id": "mystery"}},
        {"kind": "stability", "bath": {"id": "gauss2", "lo": 1.0}},
        {"kind": "stability", "bath": {"table": "missing.txt"}},
        {"kind": "stability", "seed": -3},
        {"kind": "wigner", "bath": {"id": "gauss2"}},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_toml_round_trip(tmp_path):
    (tmp_path / "u.txt").write_text("# w u\n0 0\n0.5 0.1\n1 0.3\n1.5 0.2\n2 0\n")
    path = tmp_path / "c.toml"
    path.write_text('kind = "stability"\nseed = 4\nout = "res"\n[physics]\nlam = 0.5\n[bath]\ntable = "u.txt"\n')
    c = ExperimentConfig.from_toml(path)
    assert c.seed == 4 and c.out == tmp_path / "res"
    assert c.bath == {"id": "table", "table": "u.txt", "kind": "classical"}
    spec = make_bath(c.bath, 1.0, c.resolve)
    assert spec.domain == (-2.0, 2.0) and spec.coupling(-1.0) == pytest.approx(0.3)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml(path, kind="wigner")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml(tmp_path / "absent.toml")


def test_bath_registry():
    for bid, params in BATH_DEFAULTS.items():
        if bid != "table":
            assert make_bath({"id": bid, **params}, 1.0).beta == 1.0
    flat = make_bath({"id": "flat", "gamma_sq": 1.0, "w_max": 4.0}, 1.0)
    assert gamma_squared(flat, 1.0) == pytest.approx(1.0, rel=1e-14)


# -------------------------------------------------------------- outputs

def test_stability_at_zero_coupling_records_ok(tmp_path):
    manifest, _ = run_experiment(cfg("stability", physics={"lam": 0.0}), tmp_path)
    assert manifest["derived"]["ok"] is True and manifest["passed"] is True
    saved = json.loads((tmp_path / "manifest.json").read_text())
    assert saved == manifest
    assert saved["config"]["bath"] == {"id": "gauss2", "scale": 1.0}
    assert set(saved["versions"]) == {"moyalkin", "numpy", "scipy", "python"}


def test_strong_coupling_is_unstable():
    r = execute(cfg("stability", physics={"lam": 2.0}))
    assert not r.passed and r.checks["ok"].value < 0


def test_csv_layout_and_bit_identical_rerun(tmp_path):
    c = cfg("evolve-fp", numerics={"n_grid": 64, "t_max": 1.0, "n_records": 4})
    run_experiment(c, tmp_path / "a")
    run_experiment(c, tmp_path / "b")
    a = (tmp_path / "a" / "moments.csv").read_bytes()
    assert a == (tmp_path / "b" / "moments.csv").read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    lines = a.decode().splitlines()
    assert lines[0] == "# kind: evolve-fp" and lines[4].startswith("t,mass,mean_q")
    assert len(lines) == 5 + 5


def test_chain_oracle_reproducible_per_seed(tmp_path):
    small = {"n_modes": 64, "n_samples": 400, "relax_samples": 100, "relax_dt": 0.05, "relax_every": 20}
    for name, seed in (("a", 3), ("b", 3), ("c", 4)):
        run_experiment(cfg("chain-oracle", seed=seed, numerics=small), tmp_path / name)
    read = lambda d: (tmp_path / d / "correlation.csv").read_text().splitlines()[4:]
    assert read("a") == read("b") != read("c")


# ----------------------------------------------------------- pipelines

def test_bath_corr_classical_and_quantum():
    r = execute(cfg("bath-corr", numerics={"n_s": 11}))
    assert r.passed and r.derived["at_omega0"]["h_tilde"] == pytest.approx(2 * math.pi * math.exp(-2), rel=1e-8)
    q = execute(cfg("bath-corr", bath={"id": "ohmic"}, physics={"hbar": 0.5}))
    assert q.passed and q.checks["detailed_balance"].value < 1e-12


def test_evolve_lindblad_checks():
    r = execute(cfg("evolve-lindblad", numerics={"dim": 30, "t_max": 2.0}))
    assert r.passed and set(r.checks) == {"trace_preserved", "hermitian", "positive", "entropy_nonincreasing"}
    red = execute(cfg("evolve-lindblad", bath={"id": "ohmic"}, physics={"lam": 0.3},
                      numerics={"dim": 20, "t_max": 1.0, "generator": "redfield"}))
    assert "positive" not in red.checks and "min_eigenvalue" in red.reported


def test_evolve_fp_follows_moment_equations():
    for variant, bath in (("CLASSICAL", "gauss2"), ("GME", "gauss2"), ("QUANTUM_PS", "ohmic")):
        r = execute(cfg("evolve-fp", bath={"id": bath}, physics={"hbar": 0.3, "a": 1.0},
                        numerics={"variant": variant, "n_grid": 96, "t_max": 2.0, "n_records": 2}))
        assert r.passed, (variant, r.checks)


def test_wigner_vacuum_closed_form():
    r = execute(cfg("wigner", physics={"a": [-1.0, 0.0], "hbar": 1.0, "omega0": 1.0},
                    numerics={"dim": 16, "state": "vacuum", "q_half": 9.0, "p_half": 9.0, "n_q": 96, "n_p": 96}))
    assert r.checks["closed_form_a+0"].value < 1e-13 and r.checks["closed_form_a-1"].value < 1e-13
    assert r.checks["round_trip_a+0"].passed
    # undoing the Husimi smoothing of a pure state amplifies round-off: error ~ sqrt(machine eps)
    assert r.checks["round_trip_a-1"].value < 1e-7


def test_gme_compare_manifest():
    r = execute(cfg("gme-compare"))
    assert r.checks["gme_determinant_negative"].value < 0
    assert r.checks["residual_ratio"].value > 1e4
    assert r.passed


def test_secular_check():
    r = execute(cfg("secular-check", numerics={"dim": 12}))
    assert r.passed and r.reported["redfield_minus_oscillator"] > 1e-6


def test_classical_limit_first_order_in_hbar():
    r = execute(cfg("classical-limit", physics={"hbar": [0.4, 0.2, 0.1]}, numerics=SWEEP))
    assert r.passed, {k: v for k, v in r.checks.items() if not v.passed}
    assert r.checks["slope_a+1"].value == pytest.approx(1.0, abs=0.15)
    sup = r.tables["sweep"].column("sup")
    assert np.all(np.diff(sup) < 0)


def test_ordering_sweep_small():
    r = execute(cfg("ordering-sweep", physics={"hbar": [0.4, 0.2]}, numerics={"n_grid": 128}))
    assert r.passed, {k: v for k, v in r.checks.items() if not v.passed}
    assert r.checks["self_distance_zero"].value == 0.0
    assert len(r.tables["distances"].rows) == 6


@pytest.mark.slow
def test_fock_route_matches_pde_route():
    r = execute(cfg("classical-limit", physics={"hbar": [0.4, 0.2], "a": [0.0]},
                    numerics={"n_grid": 128, "fock_grid": 128}))
    row = r.tables["fock_route"].rows[0]
    assert row[2] < row[4] and r.passed


# ------------------------------------------------------------------ CLI

def test_cli(tmp_path, capsys):
    assert main(["--list-kinds"]) == 0
    assert capsys.readouterr().out.split() == list(KINDS)
    assert main(["stability", "--out", str(tmp_path / "s"), "--seed", "7"]) == 0
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["seed"] == 7
    bad = tmp_path / "bad.toml"
    bad.write_text("[physics]\nlam = 2.0\n")
    assert main(["stability", "--config", str(bad), "--out", str(tmp_path / "u")]) == 1
    bad.write_text("[physics]\nbeta = -1.0\n")
    assert main(["stability", "--config", str(bad), "--out", str(tmp_path / "v")]) == 2
    with pytest.raises(SystemExit):
        main([])
