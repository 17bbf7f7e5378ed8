from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from passive_imaging import cli
from passive_imaging.errors import ConfigError
from passive_imaging.scattering import ScatterSetup, scatter_identity_table

CONFIGS = Path(cli.__file__).parent / "configs"


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _simulate_cfg(**dyn):
    d = {"a": 0.1, "dt": 0.01, "T": 5.0, "probes": [1.0, 2.0]}
    d.update(dyn)
    return {"scenario": "simulate", "seed": 1, "model": {"kind": "interval", "n_modes": 8, "length": 4.0},
            "noise": {"kind": "white"}, "dynamics": d}


@pytest.mark.parametrize("cfg, pointer", [
    ({"seed": 1}, "/"),
    ({"scenario": "nope", "seed": 1}, "/scenario"),
    ({"scenario": "simulate", "seed": -1}, "/seed"),
    ({"scenario": "simulate", "seed": 1, "extra": 3}, "/"),
    ({"scenario": "verify-wave", "seed": 1, "dynamics": {"dt": "x"}}, "/dynamics/dt"),
    ({"scenario": "verify-wave", "seed": 1, "tolerances": {"empirical_l2": -1}}, "/tolerances/empirical_l2"),
])
def test_schema_errors_carry_pointer(cfg, pointer):
    with pytest.raises(ConfigError) as info:
        cli.validate_config(cfg)
    assert info.value.pointer == pointer


def test_semantic_validation(tmp_path):
    with pytest.raises(ConfigError, match="unknown check") as info:
        cli.validate_config({"scenario": "verify-scattering", "seed": 0, "tolerances": {"bogus": 1.0}})
    assert info.value.pointer == "/tolerances/bogus"
    with pytest.raises(ConfigError, match="does not exist") as info:
        cli.validate_config({"scenario": "verify-exact", "seed": 0, "model": {"kind": "matrix", "file": "missing.txt"}},
                            tmp_path)
    assert info.value.pointer == "/model/file"
    with pytest.raises(ConfigError, match="needs 'file'"):
        cli.validate_config({"scenario": "verify-exact", "seed": 0, "model": {"kind": "matrix"}})
    with pytest.raises(ConfigError, match="L0"):
        cli.validate_config({**_simulate_cfg(), "noise": {"kind": "twisted"}})
    with pytest.raises(ConfigError, match="needs a model"):
        cli.validate_config({"scenario": "simulate", "seed": 0})


def test_invalid_config_exit_code(tmp_path, capsys):
    p = _write(tmp_path, {"scenario": "simulate"})
    assert cli.main(["run", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_ERROR
    assert "error:" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad)]) == cli.EXIT_ERROR


def test_zero_damping_is_rejected(tmp_path, capsys):
    p = _write(tmp_path, _simulate_cfg(a=0.0))
    assert cli.main(["run", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_ERROR
    assert "stationarity requires damping" in capsys.readouterr().err


def test_simulate_outputs_and_manifest(tmp_path):
    p = _write(tmp_path, _simulate_cfg())
    out = tmp_path / "o"
    assert cli.main(["run", str(p), "--out", str(out)]) == cli.EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    produced = {f.name for f in out.iterdir()} - {"manifest.json"}
    assert {f["path"] for f in manifest["files"]} == produced
    for f in manifest["files"]:
        assert hashlib.sha256((out / f["path"]).read_bytes()).hexdigest() == f["sha256"]
    assert manifest["config_sha256"] == hashlib.sha256(p.read_bytes()).hexdigest()
    assert manifest["seeds"]["seed"] == 1 and manifest["exit_status"] == 0


def test_seed_override_recorded(tmp_path):
    p = _write(tmp_path, _simulate_cfg())
    out = tmp_path / "o"
    assert cli.main(["run", str(p), "--out", str(out), "--seed-override", "9"]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["seeds"] == {"seed": 9, "config_seed": 1, "overridden": True}


def test_tolerance_override_logged_and_failure_exit(tmp_path):
    cfg = json.loads((CONFIGS / "verify_scattering.json").read_text())
    cfg["tolerances"] = {"scatter_d3": 0.0, "scatter_d2": 1e-6}
    p = _write(tmp_path, cfg)
    out = tmp_path / "o"
    assert cli.run(p, out) == cli.EXIT_FAILED
    report = json.loads((out / "report.json").read_text())
    assert any("loosened" in w for w in report["warnings"])
    log = {e["check"]: e for e in report["tolerance_overrides"]}
    assert log["scatter_d3"]["loosened"] is False
    assert log["scatter_d2"]["loosened"] is True and log["scatter_d2"]["default"] == 1e-8
    assert not report["passed"]


def test_bundled_verify_exact(tmp_path):
    assert cli.main(["run", str(CONFIGS / "verify_exact.json"), "--out", str(tmp_path / "o")]) == cli.EXIT_OK
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["passed"] and report["checks"]


def test_configs_listing(capsys):
    assert cli.main(["configs"]) == 0
    listed = capsys.readouterr().out
    for name in ("verify_exact", "verify_wave", "verify_semiclassical", "verify_scattering", "wigner"):
        assert name in listed


def test_emit_plotdata_residual_table(tmp_path):
    t = scatter_identity_table(ScatterSetup(3, 1.0), np.linspace(0, 2, 5))
    files = cli.emit_plotdata(t, tmp_path / "scatter")
    assert files
    with open(files[0]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["d", "k", "r", "lhs", "rhs", "residual"]
    assert len(rows) == 6


def test_emit_plotdata_rejects_unknown(tmp_path):
    with pytest.raises((TypeError, ValueError)):
        cli.emit_plotdata(object(), tmp_path / "x")
