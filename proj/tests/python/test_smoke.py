import json
import math
import pathlib

import jsonschema
import pytest

import bsdelab

SCHEMA = json.loads((pathlib.Path(__file__).parents[2] / "schemas" / "summary.schema.json").read_text())


def test_registry_and_describe():
    listing = bsdelab.list_instances()
    assert "emery" in listing["names"]
    assert bsdelab.describe("cole-hopf-1d")
    with pytest.raises(bsdelab.ConfigError, match="did you mean: emery"):
        bsdelab.describe("emry")


def test_resolve_config_fills_defaults_and_rejects_unknown_keys():
    cfg = bsdelab.resolve_config({"kind": "oracle"})
    assert cfg["check"] == "bsde"
    with pytest.raises(ValueError, match="bogus"):
        bsdelab.resolve_config({"kind": "oracle", "bogus": 1})


def test_oracle_run_matches_schema(tmp_path):
    run = bsdelab.run({"kind": "oracle", "check": "rp", "instances": 5, "seed": 3})
    jsonschema.validate(run.summary, SCHEMA)
    assert run.checks_passed
    assert run.summary["results"]["hand_example_R2"] == 1.25
    out = run.write(tmp_path)
    assert (out / "summary.json").exists()
    assert set(run.summary["artifacts"]) <= {p.name for p in out.iterdir()}


def test_runs_are_deterministic_across_threads():
    cfg = {"kind": "counterexample", "example": "exit-time", "b": 0.5, "M": 2000, "dt": 1e-3, "seed": 5}
    bsdelab.set_thread_count(1)
    a = bsdelab.run(cfg)
    bsdelab.set_thread_count(2)
    b = bsdelab.run(cfg)
    bsdelab.set_thread_count(0)
    assert a.artifacts == b.artifacts
    assert a.summary["results"] == b.summary["results"]


def test_exit_time_identity_small():
    e = bsdelab.exit_time_exponential(0.5, paths=5000, dt=1e-3, seed=2)
    assert e["exact"] == pytest.approx(1.0 / math.cos(0.5))
    assert abs(e["estimate"] - e["exact"]) <= 4 * e["std_error"] + 0.01
