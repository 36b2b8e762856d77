"""Experiment harness: config machinery, artifacts, determinism, resume, CLI."""

import csv
import json
import math

import numpy as np
import pytest

from semicoupled import cli
from semicoupled.errors import ConfigError, NumericError
from semicoupled.harness import (
    CHECKPOINT_NAME,
    METRICS_NAME,
    OUTPUT_ROOT_ENV,
    build_runner,
    config_from_dict,
    default_config,
    evaluate_checkpoint,
    load_config,
    resolve_output_dir,
    run_experiment,
)

BASE_COLS = ["step", "loss_main", "loss_spatial", "loss_temporal", "loss_overlap",
             "p_spatial", "p_temporal", "q"]


def tiny(task, out_dir, **over):
    """A seconds-scale config for harness plumbing tests."""
    raw = {
        "task": task,
        "seed": 11,
        "steps": 4,
        "eval_every": 2,
        "output_dir": str(out_dir),
        "model": {"depth": 1, "channels": 3, "stem": None, "residual": False},
        "optimizer": {"batch_size": 2},
    }
    if task in ("geometry_shape", "geometry_direction"):
        raw["data"] = {"t_steps": 4, "frame_size": 16, "train_size": 10,
                       "test_size": 6, "sizes": [3, 4]}
        raw["ltsc"] = {"enabled": True, "chunk_len": 3, "eta": 0.34}
    elif task == "star_rhombus":
        raw["data"] = {"t_steps": 12, "frame_size": 16, "train_size": 8,
                       "test_size": 5, "prepool": 2, "star_max_back": 8,
                       "star_size": 3, "star_jitter": 1}
        raw["ltsc"] = {"enabled": True, "chunk_len": 4, "eta": 0.3}
    else:
        raw["data"] = {"t_in": 3, "t_out": 2, "frame_size": 16,
                       "train_size": 6, "test_size": 4}
        raw["ltsc"] = {"enabled": False}
        raw["schedule"] = {"thresh": 0.002}
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key].update(value)
        else:
            raw[key] = value
    return raw


def read_metrics(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# config machinery
# ---------------------------------------------------------------------------

def test_defaults_build_for_every_task():
    for task in ("geometry_shape", "geometry_direction", "star_rhombus", "blob_forecast"):
        cfg = config_from_dict(default_config(task))
        assert cfg.task == task
        json.dumps(cfg.to_dict())  # artifact echo must be serialisable


def test_geometry_default_runs_a_four_layer_stack():
    cfg = config_from_dict(default_config("geometry_direction"))
    assert cfg.model.depth == 4


def test_user_fields_override_defaults_deeply():
    cfg = config_from_dict({"task": "geometry_shape", "seed": 3,
                            "model": {"channels": 5}, "steps": 7})
    assert cfg.model.channels == 5
    assert cfg.model.depth == 4  # untouched default survives
    assert cfg.steps == 7 and cfg.seed == 3


def test_required_keys_and_unknown_keys():
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"task": "geometry_shape"})
    with pytest.raises(ConfigError):
        config_from_dict({"task": "geometry_shape", "seed": 1, "optimiser": {}})
    with pytest.raises(ConfigError, match="model"):
        config_from_dict({"task": "geometry_shape", "seed": 1, "model": {"width": 8}})
    with pytest.raises(ConfigError):
        config_from_dict({"task": "weather", "seed": 1})


def test_section_field_validation_messages():
    bad = [
        ({"model": {"kernel": 4}}, "kernel"),
        ({"model": {"depth": 0}}, "depth"),
        ({"ltsc": {"eta": 1.5}}, "eta"),
        ({"optimizer": {"lr": -1.0}}, "lr"),
        ({"optimizer": {"clip": [2, -2]}}, "clip"),
        ({"schedule": {"mode": "sgd"}}, "mode"),
        ({"data": {"prepool": 3}}, "prepool"),
        ({"subgoals": {"spatial": -1.0}}, "weights"),
        ({"steps": -1}, "steps"),
        ({"eval_every": 0}, "eval_every"),
    ]
    for override, needle in bad:
        raw = {"task": "geometry_shape", "seed": 1, **override}
        with pytest.raises(ConfigError, match=needle):
            config_from_dict(raw)


def test_temporal_subgoal_ablation_alias():
    cfg = config_from_dict({"task": "geometry_shape", "seed": 1,
                            "ablation": {"no_t2_only": True}})
    assert cfg.ablation.no_temporal_subgoal is True
    direct = config_from_dict({"task": "geometry_shape", "seed": 1,
                               "ablation": {"no_temporal_subgoal": True}})
    assert direct.ablation.no_temporal_subgoal is True


def test_load_config_error_paths(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(tiny("blob_forecast", tmp_path / "out")))
    assert load_config(good).task == "blob_forecast"


def test_output_root_env_rebases_relative_dirs(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert resolve_output_dir("runs/x") == tmp_path / "root" / "runs" / "x"
    absolute = tmp_path / "abs"
    assert resolve_output_dir(str(absolute)) == absolute
    monkeypatch.delenv(OUTPUT_ROOT_ENV)
    from pathlib import Path
    assert resolve_output_dir("runs/x") == Path("runs/x")


def test_holdout_validation_happens_at_runner_build():
    cfg = config_from_dict(tiny("geometry_shape", "unused",
                                data={"holdout_shape": "star"}))
    with pytest.raises(ConfigError):
        build_runner(cfg)
    cfg2 = config_from_dict(tiny("geometry_direction", "unused",
                                 data={"holdout_shape": "star", "disordered": True}))
    with pytest.raises(ConfigError):
        build_runner(cfg2)


# ---------------------------------------------------------------------------
# run artifacts
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("task", ["geometry_shape", "star_rhombus", "blob_forecast"])
def test_run_writes_complete_artifact_set(tmp_path, task):
    cfg = config_from_dict(tiny(task, tmp_path / "run"))
    result = run_experiment(cfg)
    out = result.output_dir
    assert (out / "config.json").exists()
    assert (out / METRICS_NAME).exists()
    assert (out / CHECKPOINT_NAME).exists()
    if cfg.ltsc.enabled or task == "star_rhombus":
        spans = json.loads((out / "partition.json").read_text())["chunks"]
        assert spans[0][0] == 0
    maps = sorted(p.name for p in (out / "featuremaps").glob("*.pgm"))
    assert maps, "featuremap dumps missing"
    tags = {name.split("_")[0] for name in maps}
    assert tags == {"combined", "spatial", "temporal"}

    echoed = json.loads((out / "config.json").read_text())
    assert echoed == cfg.to_dict()

    rows = read_metrics(result.metrics_path)
    assert [int(r["step"]) for r in rows] == list(range(cfg.steps))
    header = list(rows[0].keys())
    assert header[: len(BASE_COLS)] == BASE_COLS
    for r in rows:
        assert r["loss_main"]
        float(r["loss_main"])  # parsable
    # eval columns filled exactly on the cadence
    eval_col = header[len(BASE_COLS)]
    filled = [int(r["step"]) for r in rows if r[eval_col]]
    assert filled == [1, 3]
    assert result.final_eval and all(math.isfinite(v) for v in result.final_eval.values())


def test_zero_step_budget_writes_initial_loss_row(tmp_path):
    cfg = config_from_dict(tiny("geometry_shape", tmp_path / "z", steps=0))
    result = run_experiment(cfg)
    rows = read_metrics(result.metrics_path)
    assert len(rows) == 1 and rows[0]["step"] == "0"
    # untrained classifier over 5 shapes sits at the uniform cross entropy
    assert abs(float(rows[0]["loss_main"]) - math.log(5)) < 0.1
    assert (result.output_dir / CHECKPOINT_NAME).exists()


def test_identical_seeds_reproduce_bitwise(tmp_path):
    a = run_experiment(config_from_dict(tiny("geometry_shape", tmp_path / "a")))
    b = run_experiment(config_from_dict(tiny("geometry_shape", tmp_path / "b")))
    assert a.metrics_path.read_text() == b.metrics_path.read_text()
    assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()


def test_different_seed_changes_training(tmp_path):
    a = run_experiment(config_from_dict(tiny("geometry_shape", tmp_path / "a")))
    c = run_experiment(config_from_dict(tiny("geometry_shape", tmp_path / "c", seed=12)))
    assert a.metrics_path.read_text() != c.metrics_path.read_text()


def test_resume_continues_without_gaps(tmp_path):
    whole = run_experiment(config_from_dict(tiny("star_rhombus", tmp_path / "whole")))

    part_dir = tmp_path / "parts"
    run_experiment(config_from_dict(tiny("star_rhombus", part_dir, steps=2)))
    resumed = run_experiment(config_from_dict(tiny("star_rhombus", part_dir)), resume=True)
    assert resumed.steps_run == 2

    rows_whole = read_metrics(whole.metrics_path)
    rows_parts = read_metrics(resumed.metrics_path)
    assert [r["step"] for r in rows_parts] == [r["step"] for r in rows_whole]
    for rw, rp in zip(rows_whole, rows_parts):
        for col in BASE_COLS:
            assert rw[col] == rp[col], col
    # training state carries over exactly
    assert whole.checkpoint_path.read_bytes() == resumed.checkpoint_path.read_bytes()


def test_resume_needs_a_checkpoint(tmp_path):
    cfg = config_from_dict(tiny("blob_forecast", tmp_path / "fresh"))
    with pytest.raises(ConfigError, match="resume"):
        run_experiment(cfg, resume=True)


def test_numeric_failure_names_the_step(tmp_path):
    cfg = config_from_dict(tiny("geometry_shape", tmp_path / "explode",
                                optimizer={"lr": 1e150}, steps=6))
    with pytest.raises(NumericError, match=r"training step \d+"):
        with np.errstate(over="ignore", invalid="ignore"):
            run_experiment(cfg)


def test_evaluate_checkpoint_matches_final_eval(tmp_path):
    cfg = config_from_dict(tiny("geometry_shape", tmp_path / "train"))
    result = run_experiment(cfg)
    eval_cfg = config_from_dict(tiny("geometry_shape", tmp_path / "eval_out"))
    scores = evaluate_checkpoint(result.checkpoint_path, eval_cfg)
    assert scores["eval_accuracy"] == result.final_eval["eval_accuracy"]
    path = resolve_output_dir(eval_cfg.output_dir) / "eval_metrics.csv"
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(scores.keys())
    assert [float(x) for x in rows[1]] == list(scores.values())


def test_evaluate_checkpoint_rejects_task_mismatch(tmp_path):
    result = run_experiment(config_from_dict(tiny("geometry_shape", tmp_path / "g")))
    blob_cfg = config_from_dict(tiny("blob_forecast", tmp_path / "b"))
    with pytest.raises(ConfigError):
        evaluate_checkpoint(result.checkpoint_path, blob_cfg)


def test_output_root_env_applies_to_runs(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    cfg = config_from_dict(tiny("blob_forecast", "nested/run", steps=1))
    result = run_experiment(cfg)
    assert result.output_dir == tmp_path / "nested" / "run"
    assert (tmp_path / "nested" / "run" / METRICS_NAME).exists()


def test_spatial_featuremaps_invariant_to_temporal_banks(tmp_path):
    cfg = config_from_dict(tiny("geometry_shape", tmp_path / "fm"))
    runner = build_runner(cfg)
    d1, d2 = tmp_path / "fm1", tmp_path / "fm2"
    runner.write_featuremaps(d1)
    for tensor in runner.net.temporal_params():
        tensor.data += np.random.default_rng(0).normal(size=tensor.shape)
    runner.write_featuremaps(d2)
    names = sorted(p.name for p in d1.glob("*.pgm"))
    assert names == sorted(p.name for p in d2.glob("*.pgm"))
    for name in names:
        same = (d1 / name).read_bytes() == (d2 / name).read_bytes()
        if name.startswith("spatial"):
            assert same, f"{name} must ignore temporal banks"
        if name.startswith(("combined", "temporal")):
            assert not same, f"{name} must track temporal banks"


# ---------------------------------------------------------------------------
# ablation switches
# ---------------------------------------------------------------------------

def test_no_astsgd_ablation_disables_gating(tmp_path):
    cfg = config_from_dict(tiny("geometry_shape", tmp_path / "abl",
                                ablation={"no_astsgd": True}))
    result = run_experiment(cfg)
    rows = read_metrics(result.metrics_path)
    assert all(float(r["p_spatial"]) == 0.0 and float(r["p_temporal"]) == 0.0 for r in rows)


def test_no_ltsc_ablation_drops_partition_and_overlap(tmp_path):
    cfg = config_from_dict(tiny("geometry_shape", tmp_path / "nl",
                                ablation={"no_ltsc": True}))
    result = run_experiment(cfg)
    assert not (result.output_dir / "partition.json").exists()
    rows = read_metrics(result.metrics_path)
    assert all(r["loss_overlap"] == "" for r in rows)


def test_no_subgoals_ablation_keeps_training_alive(tmp_path):
    cfg = config_from_dict(tiny("geometry_shape", tmp_path / "ns",
                                ablation={"no_subgoals": True}))
    result = run_experiment(cfg)
    rows = read_metrics(result.metrics_path)
    assert all(r["loss_temporal"] == "" for r in rows)
    # the spatial loss is still measured to drive the adaptive schedule
    assert all(r["loss_spatial"] for r in rows)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def write_config(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


def test_cli_run_and_eval_roundtrip(tmp_path, capsys):
    cfg_path = write_config(tmp_path, tiny("blob_forecast", tmp_path / "cli_run"))
    assert cli.main(["run", cfg_path]) == 0
    out = capsys.readouterr().out
    assert "eval_csi" in out
    ckpt = tmp_path / "cli_run" / CHECKPOINT_NAME
    assert ckpt.exists()
    assert cli.main(["eval", str(ckpt), cfg_path]) == 0


def test_cli_resume_flag(tmp_path):
    cfg_path = write_config(tmp_path, tiny("blob_forecast", tmp_path / "r", steps=2))
    assert cli.main(["run", cfg_path]) == 0
    cfg_path4 = write_config(tmp_path, tiny("blob_forecast", tmp_path / "r", steps=4),
                             name="cfg4.json")
    assert cli.main(["run", cfg_path4, "--resume"]) == 0
    rows = read_metrics(tmp_path / "r" / METRICS_NAME)
    assert [r["step"] for r in rows] == ["0", "1", "2", "3"]


def test_cli_config_errors_exit_2(tmp_path):
    assert cli.main(["run", str(tmp_path / "absent.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert cli.main(["run", str(bad)]) == 2
    invalid = write_config(tmp_path, {"task": "geometry_shape"}, name="invalid.json")
    assert cli.main(["run", invalid]) == 2


def test_cli_numeric_failure_exits_3(tmp_path):
    cfg_path = write_config(tmp_path, tiny("geometry_shape", tmp_path / "boom",
                                           optimizer={"lr": 1e150}, steps=6))
    with np.errstate(over="ignore", invalid="ignore"):
        assert cli.main(["run", cfg_path]) == 3


def test_cli_analyze_chains(tmp_path, capsys):
    code = cli.main(["analyze-chains", "--depth", "2", "--length", "2",
                     "--p", "0.0", "0.5", "--out", str(tmp_path / "chains")])
    assert code == 0
    out = capsys.readouterr().out
    assert "3" in out  # total chains of the 2x2 grid
    csvs = {p.name: p for p in (tmp_path / "chains").glob("*.csv")}
    assert len(csvs) == 2
    with csvs["chains_depth2_len2_p0.5.csv"].open() as fh:
        rows = list(csv.reader(fh))
    got = {int(k): float(v) for k, v in rows[1:]}
    assert got == {2: 0.25, 3: 0.25}  # 1 * 0.5^2 and 2 * 0.5^3


def test_cli_export_dataset(tmp_path):
    out = tmp_path / "ds"
    assert cli.main(["export-dataset", "star_rhombus", str(out),
                     "--count", "2", "--seed", "3", "--t-steps", "6"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["count"] == 2
    assert len(list((out / "seq_00000").glob("*.pgm"))) == 6


def test_cli_rejects_unknown_verb():
    with pytest.raises(SystemExit):
        cli.main(["train", "x.json"])
