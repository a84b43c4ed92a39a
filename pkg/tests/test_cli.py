"""Command-line driver: config validation, artifacts, exit codes, determinism."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrt.cli import _fmt, main, validate_config
from mrt.errors import InputError


def run_cli(*args):
    return main([str(a) for a in args])


def write_cfg(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_validate_config_defaults():
    cfg = validate_config({"problem": "incompressible"})
    assert cfg["scheme"] == "chebyshev"
    assert cfg["n"] == 96
    assert cfg["modes"] == [[1, 0]]


def test_validate_config_rejections():
    with pytest.raises(InputError):
        validate_config([])
    with pytest.raises(InputError):
        validate_config({})
    with pytest.raises(InputError):
        validate_config({"problem": "incompressible", "typo_key": 1})
    with pytest.raises(InputError):
        validate_config({"problem": "maggot"})
    with pytest.raises(InputError):
        validate_config({"problem": "incompressible", "n": 2})
    with pytest.raises(InputError):
        validate_config({"problem": "incompressible", "n": True})
    with pytest.raises(InputError):
        validate_config({"problem": "incompressible", "mu": -0.1})
    with pytest.raises(InputError):
        validate_config({"problem": "incompressible", "modes": []})
    # compressible runs have extra required keys
    with pytest.raises(InputError):
        validate_config({"problem": "compressible"})
    validate_config({"problem": "compressible", "pressure_const": 4.0, "mu0": 0.5})


@settings(max_examples=30, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_fmt_round_trips_floats(x):
    assert float(_fmt(x)) == x


def test_fmt_special_values():
    assert _fmt(float("inf")) == "inf"
    assert _fmt(float("-inf")) == "-inf"
    assert _fmt(float("nan")) == "nan"
    assert _fmt(True) == "true"
    assert math.isinf(float(_fmt(float("inf"))))


def _critical_cfg():
    return {
        "problem": "incompressible",
        "scheme": "chebyshev",
        "n": 32,
        "profile": "affine",
        "rho_mid": 2.0,
        "beta": 1.0,
        "field_dir": 3,
        "modes": [[1, 0], [2, 0], [4, 0]],
    }


def test_cmd_critical_artifacts(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", _critical_cfg())
    out = tmp_path / "out"
    assert run_cli("critical", "--config", cfg, "--out", out) == 0
    assert (out / "critical.csv").exists()
    assert (out / "critical.svg").exists()
    doc = json.loads((out / "critical.json").read_text())
    assert doc["schema"] == 1
    assert doc["kind"] == "critical_m"
    assert 0.6 < doc["aggregate"] < 0.65
    rows = (out / "critical.csv").read_text().strip().split("\n")
    assert rows[0] == "xi1,xi2,value,quotient,note"
    assert len(rows) == 4


def test_cmd_critical_horizontal_unbounded(tmp_path):
    c = _critical_cfg()
    c["field_dir"] = 1
    c["modes"] = [[0, 1], [1, 1]]
    cfg = write_cfg(tmp_path, "c.json", c)
    out = tmp_path / "out"
    assert run_cli("critical", "--config", cfg, "--out", out) == 0
    doc = json.loads((out / "critical.json").read_text())
    assert doc["unbounded"] is True
    assert doc["aggregate"] == "inf"
    body = (out / "critical.csv").read_text()
    assert "inf" in body


def test_cmd_growth_and_determinism(tmp_path):
    c = _critical_cfg()
    c["m"] = 0.2
    cfg = write_cfg(tmp_path, "g.json", c)
    outs = []
    for name in ("o1", "o2"):
        out = tmp_path / name
        assert run_cli("growth", "--config", cfg, "--out", out, "--threads", 2) == 0
        outs.append(out)
    for fname in ("dispersion.csv", "alpha.csv", "dispersion.svg"):
        a = (outs[0] / fname).read_bytes()
        b = (outs[1] / fname).read_bytes()
        assert a == b
    rows = (outs[0] / "dispersion.csv").read_text().strip().split("\n")
    assert rows[0].startswith("xi1,xi2")
    # m=0.2 sits between the k=1 and k=2 per-mode thresholds
    assert "unstable" not in rows[1]
    assert "unstable" in rows[2]


def test_cmd_evolve_growing(tmp_path):
    c = _critical_cfg()
    c.update({"m": 0.2, "xi": [2, 0], "T": 2.0, "dt": 0.02,
              "seed": "growing", "diagnostics_every": 5})
    cfg = write_cfg(tmp_path, "e.json", c)
    out = tmp_path / "out"
    assert run_cli("evolve", "--config", cfg, "--out", out) == 0
    doc = json.loads((out / "summary.json").read_text())
    assert doc["dispersion_status"] == "unstable"
    # fitted rate close to the dispersion rate even on the coarse grid
    assert abs(doc["fit"]["lambda"] - doc["dispersion_lambda"]) <= 1e-3
    assert doc["flags"]["bounded"] is True
    lines = (out / "trajectory.csv").read_text().strip().split("\n")
    assert lines[0].startswith("t,")
    assert (out / "trajectory.svg").exists()


def test_cmd_evolve_stable_mode_exits_3(tmp_path):
    c = _critical_cfg()
    c.update({"m": 2.0, "xi": [2, 0], "T": 1.0, "dt": 0.1, "seed": "growing"})
    cfg = write_cfg(tmp_path, "e.json", c)
    assert run_cli("evolve", "--config", cfg, "--out", tmp_path / "out") == 3


def test_cmd_cr(tmp_path):
    cfg = write_cfg(tmp_path, "cr.json", {
        "problem": "compressible",
        "scheme": "chebyshev",
        "n": 32,
        "profile": "affine",
        "rho_mid": 1.0,
        "beta": 0.0,
        "gamma": 2.0,
        "A": 1.0,
        "mu": 0.1,
        "mu0": 0.5,
        "pressure_const": 4.0,
        "modes": [[1, 0], [2, 0]],
    })
    out = tmp_path / "out"
    assert run_cli("cr", "--config", cfg, "--out", out) == 0
    doc = json.loads((out / "cr.json").read_text())
    assert doc["kind"] == "cr"
    assert doc["steady_residual"] <= 1e-6
    # flat density is not buoyant: every mode stable with margin
    assert doc["all_stable"] is True
    assert doc["aggregate"] < 0.0
    rows = (out / "cr.csv").read_text().strip().split("\n")
    assert rows[0] == "xi1,xi2,value,certificate,note"


def test_cr_command_requires_compressible(tmp_path):
    cfg = write_cfg(tmp_path, "x.json", _critical_cfg())
    assert run_cli("cr", "--config", cfg, "--out", tmp_path / "o") == 2


def test_critical_rejects_compressible(tmp_path):
    cfg = write_cfg(tmp_path, "x.json", {
        "problem": "compressible", "pressure_const": 4.0, "mu0": 0.5})
    assert run_cli("critical", "--config", cfg, "--out", tmp_path / "o") == 2


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli("critical", "--config", bad, "--out", tmp_path / "o") == 2
    missing = tmp_path / "missing.json"
    assert run_cli("critical", "--config", missing, "--out", tmp_path / "o") == 2
    unknown = write_cfg(tmp_path, "u.json", {"problem": "incompressible", "zzz": 1})
    assert run_cli("critical", "--config", unknown, "--out", tmp_path / "o") == 2


def test_bounded2d_critical(tmp_path):
    cfg = write_cfg(tmp_path, "b.json", {
        "problem": "bounded2d",
        "x1": [-1.0, 1.0],
        "x3": [-1.0, 1.0],
        "nx": 16,
        "nz": 16,
        "field_dir": 1,
        "profile": "affine",
        "rho_mid": 2.0,
        "beta": 1.0,
    })
    out = tmp_path / "out"
    assert run_cli("critical", "--config", cfg, "--out", out) == 0
    doc = json.loads((out / "critical.json").read_text())
    assert doc["kind"] == "critical_2d"
    assert 0.2 < doc["aggregate"] < 0.4
    rows = (out / "critical.csv").read_text().strip().split("\n")
    assert rows[0] == "nx,nz,aspect,value"


def test_verify_command(tmp_path):
    cfg = write_cfg(tmp_path, "v.json", {"problem": "incompressible"})
    out = tmp_path / "out"
    assert run_cli("verify", "--config", cfg, "--out", out) == 0
    doc = json.loads((out / "verify.json").read_text())
    assert doc["passed"] is True
    assert doc["failed"] == []
    assert len(doc["checks"]) >= 10
    assert all(c["passed"] for c in doc["checks"])


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("MRT_THREADS", "2")
    cfg = write_cfg(tmp_path, "c.json", _critical_cfg())
    assert run_cli("critical", "--config", cfg, "--out", tmp_path / "o") == 0
    monkeypatch.setenv("MRT_THREADS", "0")
    assert run_cli("critical", "--config", cfg, "--out", tmp_path / "o2") == 2
