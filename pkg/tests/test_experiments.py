import json
import os

import pytest

from hardylab.errors import UsageError
from hardylab import experiments
from hardylab.experiments import (EXPERIMENTS, ExperimentConfig, RunRecord,
                                  load_config, make_config, parse_overrides,
                                  run, worker_count)


def test_experiment_names():
    assert EXPERIMENTS == ("hardy", "spectrum", "blowup", "stabilize", "weights",
                           "carleman", "control", "observability")


def test_make_config_layers_defaults():
    cfg = make_config({"experiment": "stabilize"})
    assert cfg.mu == 0.5 and cfg.T == 3.0 and cfg.mesh_n == 1000
    assert cfg.omega == (0.46, 0.54)
    # user keys win over the experiment layer
    cfg2 = make_config({"experiment": "stabilize", "T": 1.0})
    assert cfg2.T == 1.0 and cfg2.mu == 0.5
    # experiments without an override keep the global defaults
    cfg3 = make_config({"experiment": "carleman"})
    assert cfg3.mesh_n == 200 and cfg3.nt == 400 and cfg3.reg_mode == "none"


def test_make_config_rejects_unknown_keys():
    with pytest.raises(UsageError, match="unknown config keys: bogus"):
        make_config({"experiment": "spectrum", "bogus": 1})
    with pytest.raises(UsageError, match="unknown experiment"):
        make_config({"experiment": "nope"})
    with pytest.raises(UsageError):
        make_config({"experiment": "spectrum", "mesh_n": 1})
    with pytest.raises(UsageError):
        make_config({"experiment": "spectrum", "T": -1.0})
    with pytest.raises(UsageError):
        make_config("not a dict")


def test_config_is_frozen():
    cfg = make_config({"experiment": "spectrum"})
    with pytest.raises(Exception):
        cfg.mesh_n = 7


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"experiment": "blowup", "mesh_n": 50}))
    cfg = load_config(p)
    assert cfg.experiment == "blowup" and cfg.mesh_n == 50
    with pytest.raises(UsageError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(UsageError):
        load_config(bad)


def test_parse_overrides():
    ov = parse_overrides(["mesh_n=50", "mu=0.3", "reg_mode=shift",
                          "eps_values=[0.1,0.05]", "out_dir=/tmp/x"])
    assert ov == {"mesh_n": 50, "mu": 0.3, "reg_mode": "shift",
                  "eps_values": [0.1, 0.05], "out_dir": "/tmp/x"}
    with pytest.raises(UsageError):
        parse_overrides(["no_equals_sign"])


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("TOOL_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("TOOL_THREADS", "0")
    with pytest.raises(UsageError):
        worker_count()
    monkeypatch.setenv("TOOL_THREADS", "soon")
    with pytest.raises(UsageError):
        worker_count()
    monkeypatch.delenv("TOOL_THREADS")
    assert worker_count() >= 1


def small_spectrum(tmp_path, **kw):
    data = {"experiment": "spectrum", "mesh_n": 400,
            "eps_values": [0.1, 0.05], "out_dir": str(tmp_path)}
    data.update(kw)
    return make_config(data)


def test_run_writes_artifacts_and_manifest(tmp_path):
    rec = run(small_spectrum(tmp_path / "a"))
    assert rec.status == "ok" and rec.passed
    assert rec.exit_code == 0
    assert (tmp_path / "a" / "spectrum.csv").exists()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["experiment"] == "spectrum"
    assert man["status"] == "ok"
    assert "lambda0" in man["summary"]


def test_run_is_deterministic(tmp_path):
    run(small_spectrum(tmp_path / "a"))
    run(small_spectrum(tmp_path / "b"))
    fa = (tmp_path / "a" / "spectrum.csv").read_bytes()
    fb = (tmp_path / "b" / "spectrum.csv").read_bytes()
    assert fa == fb


def test_run_usage_error_still_writes_manifest(tmp_path):
    # spectrum demands h <= eps/10: a coarse mesh is a usage failure
    cfg = small_spectrum(tmp_path / "u", mesh_n=20, eps_values=[0.01])
    rec = run(cfg)
    assert rec.status == "usage"
    assert rec.exit_code == 2
    man = json.loads((tmp_path / "u" / "manifest.json").read_text())
    assert man["status"] == "usage"
    assert man["error"]


def test_run_invariant_failure_exits_one(tmp_path):
    # two identical shift strengths cannot produce 10x observability growth
    cfg = make_config({"experiment": "observability", "mesh_n": 100, "nt": 100,
                       "m_values": [10, 10], "out_dir": str(tmp_path / "i")})
    rec = run(cfg)
    assert rec.status == "invariant"
    assert rec.exit_code == 1
    assert rec.failures


def test_run_crash_writes_manifest_then_reraises(tmp_path, monkeypatch):
    def boom(cfg, out):
        raise RuntimeError("kaboom")

    monkeypatch.setitem(experiments._RUNNERS, "spectrum", boom)
    with pytest.raises(RuntimeError):
        run(small_spectrum(tmp_path / "c"))
    man = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert man["status"] == "error"
    assert "kaboom" in man["error"]


def test_exit_code_mapping():
    base = dict(experiment="spectrum", config={}, started="", finished="",
                artifacts=[], summary={}, failures=[], error=None,
                manifest_path="")
    assert RunRecord(status="ok", passed=True, **base).exit_code == 0
    assert RunRecord(status="ok", passed=False, **base).exit_code == 1
    assert RunRecord(status="invariant", passed=False, **base).exit_code == 1
    assert RunRecord(status="usage", passed=False, **base).exit_code == 2
    assert RunRecord(status="numerical", passed=False, **base).exit_code == 3
    assert RunRecord(status="error", passed=False, **base).exit_code == 3
