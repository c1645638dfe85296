import json

import pandas as pd
import pytest
from click.testing import CliRunner

from cli import cli
from tests.conftest import P_STAR


def _config(tmp_path, name="cfg.json", **changes):
    raw = {
        "name": "five_contents",
        "catalog": {"n_contents": 5, "zipf_s": 0.8},
        "target": {"cache_size": 2, "probs": P_STAR, "strategy": "max_entropy"},
        "policy": {"mixing_trials": 50},
        "workload": {"kind": "static_zipf", "n_requests": 2000},
        "simulation": {"n_runs": 3, "seed": 7, "window": 500},
    }
    for section, values in changes.items():
        if isinstance(values, dict):
            raw[section] = {**raw.get(section, {}), **values}
        else:
            raw[section] = values
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


def _invoke(*args):
    return CliRunner().invoke(cli, list(args), catch_exceptions=False)


def _pipeline(config, out):
    for step in ("placement", "policy", "simulate"):
        result = _invoke(step, "--config", config, "--out", out)
        assert result.exit_code == 0, result.output


def test_full_pipeline(tmp_path):
    out = tmp_path / "out"
    _pipeline(_config(tmp_path), str(out))

    for rel in [
        "placement/eta.json", "placement/eta_solver.json", "placement/eta_block_filling.json",
        "placement/report.json", "policy/theta_basic.json", "policy/theta_refined.json",
        "policy/tau.json", "policy/sequences.json", "policy/verification.json", "policy/mixing.json",
        "simulate/comparison.csv", "simulate/runs.csv", "simulate/hit_ratio_series.csv",
    ]:
        assert (out / rel).is_file(), rel

    verification = json.loads((out / "policy/verification.json").read_text())["verification"]
    assert verification["basic"]["passed"] and verification["refined"]["passed"]

    lines = (out / "simulate/comparison.csv").read_text().splitlines()
    assert lines[0].startswith("# config_sha256=")
    assert lines[1] == "# seed=7"
    comparison = pd.read_csv(out / "simulate/comparison.csv", comment="#")
    assert list(comparison["name"]) == ["proposed", "static", "lru", "lfu"]
    assert (comparison["n_runs"] == 3).all()

    series = pd.read_csv(out / "simulate/hit_ratio_series.csv", comment="#")
    assert len(series) == 4 * 4


def test_reruns_are_byte_identical(tmp_path):
    config = _config(tmp_path)
    _pipeline(config, str(tmp_path / "a"))
    _pipeline(config, str(tmp_path / "b"))
    for rel in ["placement/eta.json", "policy/tau.json", "policy/mixing.json", "simulate/comparison.csv"]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_seed_flag_overrides_config(tmp_path):
    out = tmp_path / "out"
    result = _invoke("placement", "--config", _config(tmp_path), "--out", str(out), "--seed", "99")
    assert result.exit_code == 0, result.output
    header = json.loads((out / "placement/eta.json").read_text())["header"]
    assert header["seed"] == 99


def test_no_refine_writes_basic_chain_only(tmp_path):
    out = tmp_path / "out"
    config = _config(tmp_path)
    assert _invoke("placement", "--config", config, "--out", str(out)).exit_code == 0
    result = _invoke("policy", "--config", config, "--out", str(out), "--no-refine")
    assert result.exit_code == 0, result.output
    assert not (out / "policy/theta_refined.json").exists()


def test_single_state_target(tmp_path):
    out = str(tmp_path / "out")
    config = _config(tmp_path, target={"probs": [1, 1, 0, 0, 0], "strategy": "min_support"})
    for step in ("placement", "policy"):
        result = _invoke(step, "--config", config, "--out", out)
        assert result.exit_code == 0, result.output
    eta = json.loads((tmp_path / "out/placement/eta.json").read_text())["eta"]
    assert eta["states"] == [[1, 2]]


def test_disconnected_support_exits_3(tmp_path):
    out = str(tmp_path / "out")
    config = _config(
        tmp_path,
        catalog={"n_contents": 4, "zipf_s": 0.8},
        target={"probs": [0.5, 0.5, 0.5, 0.5]},
        policy={"eta": "block_filling"},
    )
    assert _invoke("placement", "--config", config, "--out", out).exit_code == 0
    result = _invoke("policy", "--config", config, "--out", out)
    assert result.exit_code == 3
    assert "disconnected" in result.output


def test_config_errors_exit_1(tmp_path):
    missing = _invoke("placement", "--config", str(tmp_path / "nope.json"))
    assert missing.exit_code == 1
    assert "error:" in missing.output

    unknown = _config(tmp_path, name="unknown.json", target={"cache_sizes": 3})
    assert _invoke("placement", "--config", unknown).exit_code == 1

    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{not json")
    assert _invoke("placement", "--config", str(bad_json)).exit_code == 1

    out = str(tmp_path / "empty")
    before_placement = _invoke("simulate", "--config", _config(tmp_path), "--out", out)
    assert before_placement.exit_code == 1
    assert "placement" in before_placement.output


def test_usage_errors_exit_1(tmp_path):
    assert _invoke("policy").exit_code == 1
    assert _invoke("reproduce", "7").exit_code == 1


def test_schema_lists_sections():
    result = _invoke("schema")
    assert result.exit_code == 0
    schema = json.loads(result.output)
    assert {"catalog", "target", "policy", "workload", "simulation"} <= set(schema["properties"])


def test_reproduce_example_1(tmp_path):
    result = _invoke("reproduce", "1", "--out", str(tmp_path))
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "example1/summary.json").read_text())
    assert summary["passed"]
    names = {c["name"] for c in summary["checks"]}
    assert "refined_median_speedup" in names


@pytest.mark.slow
@pytest.mark.parametrize("example_id", ["2", "3", "4"])
def test_reproduce_large_examples(tmp_path, example_id):
    result = _invoke("reproduce", example_id, "--out", str(tmp_path))
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / f"example{example_id}/summary.json").read_text())
    assert summary["passed"]


def test_empty_trace_simulates_cleanly(tmp_path):
    out = tmp_path / "out"
    _pipeline(_config(tmp_path, workload={"n_requests": 0}), str(out))
    comparison = pd.read_csv(out / "simulate/comparison.csv", comment="#")
    assert (comparison["hit_ratio_mean"] == 0).all()
    assert (comparison["replacements_mean"] == 0).all()
