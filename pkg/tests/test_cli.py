import json

import pytest
from click.testing import CliRunner

from hilbex.cli import main
from hilbex.runner import ConfigError, load_scenario, parse_config, resolve_threads, run_scenario, scenario_from_dict

TINY = {
    "schema_version": 1,
    "name": "tiny",
    "expansion": {
        "N": 1,
        "epsilons": [0.1, 0.05, 0.025],
        "horizon": 0.05,
        "profile": {"kind": "generic"},
        "mesh": {"x_max": 4.0, "h_wall": 0.02, "h_max": 0.1},
        "velocity": {"radius": 5.0, "n_per_axis": 8},
        "eval_fractions": [0.5],
    },
}


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return p


def test_validate_only_prints_resolved_config(tmp_path):
    res = CliRunner().invoke(main, ["run", str(write(tmp_path, TINY)), "--validate-only"])
    assert res.exit_code == 0, res.output
    out = json.loads(res.output)
    assert out["valid"] and out["config"]["N"] == 1 and out["config"]["velocity"]["n_per_axis"] == 8


def test_negative_radius_names_the_field(tmp_path):
    bad = json.loads(json.dumps(TINY))
    bad["expansion"]["velocity"]["radius"] = -1.0
    res = CliRunner().invoke(main, ["run", str(write(tmp_path, bad))])
    assert res.exit_code == 2
    assert "expansion.velocity.radius" in res.output


def test_malformed_json_reports_position(tmp_path):
    res = CliRunner().invoke(main, ["run", str(write(tmp_path, '{"schema_version": 1,\n  "name": }'))])
    assert res.exit_code == 2 and "line 2" in res.output


def test_unknown_keys_and_order_three_are_config_errors():
    with pytest.raises(ConfigError, match="Additional properties"):
        parse_config(json.dumps({**TINY, "extra": 1}))
    with pytest.raises(ConfigError, match="not supported"):
        scenario_from_dict({**TINY, "expansion": {**TINY["expansion"], "N": 3}})
    with pytest.raises(ConfigError, match="descending"):
        scenario_from_dict({**TINY, "sweep": {"parameter": "epsilon", "values": [0.05, 0.1, 0.2]}})


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_scenario(tmp_path / "absent.json")


def test_thread_resolution(monkeypatch):
    monkeypatch.setenv("HILBEX_THREADS", "3")
    assert resolve_threads(None) == 3 and resolve_threads(2) == 2
    monkeypatch.setenv("HILBEX_THREADS", "many")
    with pytest.raises(ConfigError):
        resolve_threads(None)
    monkeypatch.delenv("HILBEX_THREADS")
    assert resolve_threads(None) is None


def test_tiny_run_writes_reports(tmp_path):
    out = tmp_path / "out"
    res = CliRunner().invoke(main, ["run", str(write(tmp_path, TINY)), "--out", str(out), "--threads", "1"])
    assert res.exit_code == 0, res.output
    for name in ("euler.csv", "order_1.json", "layer_order_1.csv", "defect.json", "slope_fit.json", "stages.json", "manifest.json", "composite_eps_0.1.csv"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["deviations"]
    assert set(manifest["files"]) >= {"defect.json", "stages.json"}
    assert all(v == "ok" for v in json.loads((out / "stages.json").read_text()).values())


def test_fatal_stage_exits_three_and_skips_downstream(tmp_path):
    data = json.loads(json.dumps(TINY))
    data["expansion"]["delta"] = 5.0  # 1 + delta phi turns negative
    rec = run_scenario(scenario_from_dict(data, str(tmp_path / "fatal")))
    assert rec.exit_code == 3
    assert rec.stages["euler"].startswith("failed")
    assert json.loads((tmp_path / "fatal" / "manifest.json").read_text())["exit_code"] == 3
