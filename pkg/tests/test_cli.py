import csv
import json
import os

import pytest

from adaptersim.cli import EXIT_CONFIG, EXIT_OK, build_preset, diff_runs, main


def write_config(tmp_path, data):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


FAST = {
    "workload": {"arrival_rate": 2.0, "duration_s": 20.0, "seed": 1},
    "scheduler": {"policy": "mlq", "refresh_us": 10_000_000},
    "hardware": {"total_token_slots": 9000},
}


def test_validate_echoes_resolved_config(tmp_path, capsys):
    cfg = write_config(tmp_path, FAST)
    assert main(["validate", "--config", cfg]) == EXIT_OK
    echoed = json.loads(capsys.readouterr().out)
    assert echoed["workload"]["arrival_rate"] == 2.0
    assert echoed["workload"]["num_adapters"] == 100  # defaults filled


def test_validate_rejects_bad_config(tmp_path, capsys):
    cfg = write_config(tmp_path, {"workload": {"rank_set": [-8]}})
    assert main(["validate", "--config", cfg]) == EXIT_CONFIG
    assert "rank must be positive" in capsys.readouterr().err


def test_flags_override_file_values(tmp_path, capsys):
    cfg = write_config(tmp_path, FAST)
    assert main(["validate", "--config", cfg, "--rps", "3.5", "--seed", "9"]) == EXIT_OK
    echoed = json.loads(capsys.readouterr().out)
    assert echoed["workload"]["arrival_rate"] == 3.5
    assert echoed["workload"]["seed"] == 9


def test_dry_run_prints_and_writes_nothing(tmp_path, capsys):
    cfg = write_config(tmp_path, FAST)
    out = tmp_path / "results"
    assert main(["run", "--config", cfg, "--out", str(out), "--dry-run"]) == EXIT_OK
    assert "workload" in capsys.readouterr().out
    assert not out.exists()


def test_run_writes_cell_artifacts(tmp_path):
    cfg = write_config(tmp_path, FAST)
    out = tmp_path / "results"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    scenario_dir = out / "run"
    cell_dir = scenario_dir / "mlq+cost-aware" / "rps-2" / "seed-1"
    assert (cell_dir / "requests.csv").exists()
    assert (cell_dir / "summary.json").exists()
    assert (scenario_dir / "comparison.csv").exists()
    assert (scenario_dir / "comparison_by_rank.csv").exists()
    summary = json.loads((cell_dir / "summary.json").read_text())
    assert summary["config"]["workload"]["arrival_rate"] == 2.0
    assert summary["seed"] == 1
    assert summary["summary"]["count"] > 0


def test_rerun_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, FAST)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(out_a)]) == EXIT_OK
    assert main(["run", "--config", cfg, "--out", str(out_b)]) == EXIT_OK
    csv_a = (out_a / "run/mlq+cost-aware/rps-2/seed-1/requests.csv").read_bytes()
    csv_b = (out_b / "run/mlq+cost-aware/rps-2/seed-1/requests.csv").read_bytes()
    assert csv_a == csv_b


def test_diff_identical_runs_is_all_zero(tmp_path):
    cfg = write_config(tmp_path, FAST)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", cfg, "--out", str(out_a)])
    main(["run", "--config", cfg, "--out", str(out_b)])
    deltas = diff_runs(str(out_a / "run"), str(out_b / "run"))
    for cell_deltas in deltas.values():
        assert all(v == 0 or v is None for v in cell_deltas.values())


def test_diff_schema_mismatch_errors(tmp_path):
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        columns = ["cell", "p99_ttft_ms"] if name == "a" else ["cell", "other"]
        with open(d / "comparison.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(columns)
            writer.writerow(["x", "1"])
    with pytest.raises(ValueError, match="schema mismatch"):
        diff_runs(str(tmp_path / "a"), str(tmp_path / "b"))
    assert main(["diff", str(tmp_path / "a"), str(tmp_path / "b")]) == EXIT_CONFIG


def test_presets_list(capsys):
    assert main(["presets"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in (
        "tail-latency",
        "scheduler-policies",
        "eviction-policies",
        "link-contention",
        "squash-rate",
        "prefetch",
    ):
        assert name in out


def test_unknown_preset_is_config_error(tmp_path, capsys):
    assert main(["run", "--preset", "nope", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_preset_cells_have_valid_configs(tmp_path):
    from adaptersim.model import config_errors

    for name in ("tail-latency", "eviction-policies", "link-contention"):
        scenario = build_preset(name, str(tmp_path))
        assert scenario.cells
        for cell in scenario.cells:
            assert config_errors(cell.config) == [], cell.label


def test_env_var_sets_default_out_root(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path, FAST)
    monkeypatch.setenv("ADAPTERSIM_OUT", str(tmp_path / "from-env"))
    assert main(["run", "--config", cfg, "--dry-run"]) == EXIT_OK
    # dry run writes nothing, but the resolution path must not crash
    assert not (tmp_path / "from-env").exists()
