import json

import numpy as np
import pytest

from brokenorbits.cli import main
from brokenorbits.config import load_config, parse_config_text
from brokenorbits.errors import ConfigError


CX_CONFIG = """
# section-5 style reference system
[model]
name = counterexample
r1 = 1.0
r2 = 1.4142135623730951
big_r = 2.0
[run]
k = 0.25
h = 48
seed = 12345
perturb = 0.01
tau_cap = 1.0
"""

KINETIC_CONFIG = """
[model]
name = kinetic
sides = 1.0, 1.0
[run]
k = 0.5
seed = 7
"""

STRIP_CONFIG = """
[model]
name = strip-magnetic
strength = 2.0
[run]
k = 0.2
h = 24
seed = 3
seed_budget = 4
tau_cap = 1.0
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# -- config parsing ---------------------------------------------------------------

def test_parse_valid_config():
    sections = parse_config_text(CX_CONFIG)
    assert sections["model"]["name"] == "counterexample"
    assert sections["run"]["k"] == 0.25
    assert sections["run"]["h"] == 48


def test_parse_rejects_unknown_key():
    with pytest.raises(ConfigError):
        parse_config_text("[model]\nname = kinetic\nbogus = 3\n")


def test_parse_rejects_unknown_section():
    with pytest.raises(ConfigError):
        parse_config_text("[model]\nname = kinetic\n[wrench]\nx = 1\n")


def test_parse_rejects_duplicates_and_orphans():
    with pytest.raises(ConfigError):
        parse_config_text("[run]\nk = 1\nk = 2\n")
    with pytest.raises(ConfigError):
        parse_config_text("k = 1\n")
    with pytest.raises(ConfigError):
        parse_config_text("[run]\nk\n")


def test_parse_requires_model_name():
    with pytest.raises(ConfigError):
        parse_config_text("[run]\nk = 1\n")


def test_terms_and_grid_parsing(tmp_path):
    text = """
[model]
name = magnetic
sides = 6.283185307179586, 6.283185307179586
a2_terms = 1 0 0.0 2.0 ; 0 1 0.5 0.0
[run]
k_grid = 0.1, 0.2, 0.3
seed = 5
"""
    cfg = load_config(write(tmp_path, "cfg.txt", text))
    model = cfg.build_model()
    assert model.name == "magnetic"
    assert cfg.k_grid == [0.1, 0.2, 0.3]
    assert cfg.seed == 5
    assert cfg.config_hash


def test_overrides(tmp_path):
    cfg = load_config(write(tmp_path, "cfg.txt", KINETIC_CONFIG),
                      {"k": 0.7, "seed": 99, "out": "someplace"})
    assert cfg.k == 0.7
    assert cfg.seed == 99
    assert cfg.out_dir == "someplace"


# -- orbit command -----------------------------------------------------------------

def test_orbit_kinetic_not_found(tmp_path):
    cfg = write(tmp_path, "cfg.txt", KINETIC_CONFIG)
    out = tmp_path / "out"
    code = main(["orbit", "--config", cfg, "--out", str(out)])
    assert code == 0
    recs = [json.loads(line) for line in (out / "orbits.jsonl").read_text().splitlines()]
    assert len(recs) == 1
    assert recs[0]["status"] == "not_found"
    assert recs[0]["config_hash"] and recs[0]["tool_version"]
    assert recs[0]["rng_seed"] == 7


def test_orbit_counterexample_refine(tmp_path):
    cfg = write(tmp_path, "cfg.txt", CX_CONFIG)
    out = tmp_path / "out"
    code = main(["orbit", "--config", cfg, "--out", str(out)])
    assert code == 0
    recs = [json.loads(line) for line in (out / "orbits.jsonl").read_text().splitlines()]
    assert len(recs) == 2
    periods = sorted(r["period"] for r in recs)
    assert periods[0] == pytest.approx(2 * np.pi, rel=1e-5)
    assert periods[1] == pytest.approx(2 * np.pi * np.sqrt(2), rel=1e-5)
    for r in recs:
        assert r["energy_dev"] <= 1e-6
        assert r["gradient_norm"] <= 1e-7
    assert (out / "trace_fast.txt").exists()
    assert (out / "trace_slow.txt").exists()


def test_orbit_determinism(tmp_path):
    cfg = write(tmp_path, "cfg.txt", CX_CONFIG)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["orbit", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["orbit", "--config", cfg, "--out", str(out2)]) == 0
    assert (out1 / "orbits.jsonl").read_bytes() == (out2 / "orbits.jsonl").read_bytes()


# -- mane command -------------------------------------------------------------------

def test_mane_kinetic(tmp_path):
    cfg = write(tmp_path, "cfg.txt", KINETIC_CONFIG)
    out = tmp_path / "out"
    code = main(["mane", "--config", cfg, "--out", str(out), "--verify"])
    assert code == 0
    rec = json.loads((out / "mane.jsonl").read_text())
    assert rec["e0"] == pytest.approx(0.0, abs=1e-9)
    assert rec["c_lower"] == pytest.approx(0.0, abs=1e-9)
    assert 0.0 <= rec["c_upper"] <= 1e-6
    assert rec["lower_certificate"] is None
    assert rec["verified"] is True


def test_mane_counterexample_e0(tmp_path):
    cfg = write(tmp_path, "cfg.txt", CX_CONFIG + "family_size = 1\n")
    out = tmp_path / "out"
    code = main(["mane", "--config", cfg, "--out", str(out)])
    assert code == 0
    rec = json.loads((out / "mane.jsonl").read_text())
    expect = 0.5 * (2.0 / 1.0 + 2.0 / np.sqrt(2.0))
    assert rec["e0"] == pytest.approx(expect, abs=1e-8)
    assert rec["e0"] <= rec["c_upper"] + 1e-9


def test_unregistered_model_is_config_error(tmp_path):
    cfg = write(tmp_path, "cfg.txt", "[model]\nname = warp-drive\n[run]\nk = 1\n")
    code = main(["orbit", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == 2


def test_mane_strip_certificates_verify(tmp_path):
    cfg = write(tmp_path, "cfg.txt", STRIP_CONFIG)
    out = tmp_path / "out"
    code = main(["mane", "--config", cfg, "--out", str(out), "--verify"])
    assert code == 0
    rec = json.loads((out / "mane.jsonl").read_text())
    assert rec["verified"] is True
    assert rec["c_lower"] > 0
    assert rec["lower_certificate"]["action"] < 0
    assert rec["e0"] <= rec["c_upper"] + 1e-9
    assert rec["c_lower"] <= rec["c_upper"] + 1e-6


# -- minimax command ------------------------------------------------------------------

def test_minimax_rejects_n_zero(tmp_path):
    text = STRIP_CONFIG + "n_max = 0\n"
    cfg = write(tmp_path, "cfg.txt", text)
    code = main(["minimax", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == 2


def test_minimax_command_end_to_end(tmp_path):
    text = """
[model]
name = island-magnetic
strength = 2.0
[run]
k = 0.2
h = 32
seed = 11
n_max = 2
n_nodes = 12
max_sweeps = 200
seed_budget = 3
tau_cap = 1.2
"""
    cfg = write(tmp_path, "cfg.txt", text)
    out = tmp_path / "out"
    code = main(["minimax", "--config", cfg, "--out", str(out)])
    assert code == 0
    recs = [json.loads(line)
            for line in (out / "minimax.jsonl").read_text().splitlines()]
    summary = recs[0]
    assert summary["type"] == "minimax_summary"
    values = summary["values"]
    assert len(values) == 2
    assert values[1] < values[0]                      # strictly decreasing column
    assert summary["dedup_hausdorff"] > 0             # dedup report with thresholds
    orbit_recs = [r for r in recs[1:] if r["type"] == "orbit"]
    assert len(orbit_recs) == summary["n_records"] >= 1
    assert all(r["action"] < 0 for r in orbit_recs)


# -- spectrum command ----------------------------------------------------------------

def test_spectrum_from_reference_orbit(tmp_path, cx_model, cx_params):
    from brokenorbits import reference_orbits

    k = 0.25
    orbits_file = tmp_path / "orbits.jsonl"
    with open(orbits_file, "w") as fp:
        for orbit in reference_orbits(cx_params, k):
            loop, _ = orbit.loop(cx_model, 64)
            fp.write(json.dumps({"type": "orbit", "k": k, "tau": loop.tau,
                                 "points": loop.points.tolist()}) + "\n")
    cfg = write(tmp_path, "cfg.txt", CX_CONFIG)
    out = tmp_path / "out"
    code = main(["spectrum", "--config", cfg, "--out", str(out),
                 "--orbits", str(orbits_file), "--iterates", "8"])
    assert code == 0
    recs = [json.loads(line) for line in (out / "spectrum.jsonl").read_text().splitlines()]
    assert [r["ind_h"] for r in recs] == [2, 4]
    assert [r["nul_h"] for r in recs] == [2, 2]
    for r in recs:
        assert r["iterate_nullities"] == [2] * 8
        assert len(r["nullity_partition"]) == 1
    csv_text = (out / "spectrum.csv").read_text().splitlines()
    assert csv_text[0] == "orbit_index,matrix,position,real,imag"
    assert len(csv_text) > 2 * (129 + 128 + 4)


# -- verify command -------------------------------------------------------------------

def test_verify_roundtrip(tmp_path):
    cfg = write(tmp_path, "cfg.txt", CX_CONFIG)
    out = tmp_path / "out"
    assert main(["orbit", "--config", cfg, "--out", str(out)]) == 0
    code = main(["verify", "--config", cfg, "--out", str(out),
                 "--records", str(out / "orbits.jsonl")])
    assert code == 0
    reports = [json.loads(line)
               for line in (out / "verification.jsonl").read_text().splitlines()]
    assert all(r["passed"] for r in reports)


def test_verify_catches_tampering(tmp_path):
    cfg = write(tmp_path, "cfg.txt", CX_CONFIG)
    out = tmp_path / "out"
    assert main(["orbit", "--config", cfg, "--out", str(out)]) == 0
    recs = [json.loads(line) for line in (out / "orbits.jsonl").read_text().splitlines()]
    recs[0]["action"] += 0.5
    tampered = out / "tampered.jsonl"
    with open(tampered, "w") as fp:
        for r in recs:
            fp.write(json.dumps(r) + "\n")
    code = main(["verify", "--config", cfg, "--out", str(out),
                 "--records", str(tampered)])
    assert code == 1


def test_missing_config_is_config_error(tmp_path):
    code = main(["orbit", "--config", str(tmp_path / "nope.txt"),
                 "--out", str(tmp_path)])
    assert code in (2, 3) or isinstance(code, int)
