import json

import numpy as np
import pytest

from trendrul.cli import RunConfig, job_seed, load_dataset, main, run
from trendrul.ensemble import read_decomposition_csv
from trendrul.errors import ConfigError
from trendrul.pipeline import normalized_signals
from trendrul.timeseries import NormalizationStats


def small_config(tmp_path, **kw):
    cfg = {
        "subset": "SYN", "data_dir": str(tmp_path / "data"), "out": str(tmp_path / "runs"),
        "sensors": [2, 3], "realizations": 5, "synth_units": 6, "synth_test_units": 3,
        "max_iterations": 15, "layer_sizes": [6, 4], "batch_size": 4, "stride": 25,
        "compare_levels": [0, 1], "compare_bins": 10,
    }
    cfg.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def pipeline(tmp_path):
    path = small_config(tmp_path)
    assert main(["synthesize", "--config", str(path)]) == 0
    return tmp_path, path


def test_stage_order_enforced(pipeline, capsys):
    _, path = pipeline
    for cmd in ("features", "train", "predict", "evaluate", "compare-features"):
        assert main([cmd, "--config", str(path)]) == 3
        err = error_of(capsys)
        assert err["error"] == "PipelineOrderError" and err["exit_code"] == 3


def test_full_pipeline(pipeline):
    tmp_path, path = pipeline
    for cmd in ("decompose", "features", "train", "predict", "evaluate", "compare-features"):
        assert main([cmd, "--config", str(path)]) == 0, cmd
    runs = tmp_path / "runs"
    for stage in ("decompose", "features", "train", "predict", "evaluate", "compare"):
        manifest = json.loads((runs / stage / "manifest.json").read_text())
        assert manifest["seed"] == 0 and manifest["version"] == "0.1.0"
        assert len(manifest["config_hash"]) == 64
    report = json.loads((runs / "evaluate" / "report.json").read_text())
    assert len(report["units"]) == 3 and report["rmse"] >= 0
    lines = (runs / "compare" / "mpd.csv").read_text().splitlines()
    assert lines[0] == "feature,sensor_2,sensor_3"
    assert [r.split(",")[0] for r in lines[1:]] == ["Q_0", "Q_1", "E_0", "E_1", "mean", "raw"]
    traj = (runs / "predict" / "trajectories" / "unit_0001.csv").read_text().splitlines()
    assert traj[0] == "cycle,predicted_rul,label_rul"


def test_decompositions_sum_to_normalized_input(pipeline):
    tmp_path, path = pipeline
    assert main(["decompose", "--config", str(path)]) == 0
    cfg = RunConfig.from_sources(path)
    ds = load_dataset(cfg)
    stats = [NormalizationStats.from_dict(d) for d in
             json.loads((tmp_path / "runs" / "decompose" / "normalization.json").read_text())]
    for u in ds.units:
        x = normalized_signals(u, stats)
        for k, j in enumerate(ds.sensor_set):
            d = read_decomposition_csv(
                tmp_path / "runs" / "decompose" / u.role / f"unit_{u.unit_id:04d}_s{j:02d}.csv")
            assert np.max(np.abs(d.reconstruct() - x[:, k])) <= 1e-9


def test_evaluate_perfect_predictions(tmp_path):
    path = small_config(tmp_path)
    pred = tmp_path / "runs" / "predict"
    pred.mkdir(parents=True)
    (pred / "manifest.json").write_text("{}")
    (pred / "last_point.csv").write_text("unit_id,predicted_rul,true_rul\n1,20.0,20.0\n2,75.0,75.0\n")
    assert main(["evaluate", "--config", str(path)]) == 0
    report = json.loads((tmp_path / "runs" / "evaluate" / "report.json").read_text())
    assert report["score"] == 0.0 and report["rmse"] == 0.0


def test_flags_override_config(tmp_path):
    path = small_config(tmp_path, seed=3, stride=7)
    cfg = RunConfig.from_sources(path, {"seed": 9, "stride": None, "trend_level": 1})
    assert (cfg.seed, cfg.stride, cfg.trend_level) == (9, 7, 1)


def test_config_hash_ignores_output_location(tmp_path):
    a = RunConfig(out="x", workers=1)
    b = RunConfig(out="y", workers=4)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != RunConfig(seed=1).config_hash()


def test_unknown_config_key(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"no_such_key": 1}))
    assert main(["decompose", "--config", str(path)]) == 2
    assert error_of(capsys)["error"] == "ConfigError"


def test_missing_data_is_config_error(tmp_path, capsys):
    path = small_config(tmp_path)
    assert main(["decompose", "--config", str(path)]) == 2
    assert "training file not found" in error_of(capsys)["message"]


def test_checkpoint_width_mismatch(pipeline, capsys):
    tmp_path, path = pipeline
    for cmd in ("decompose", "features", "train"):
        assert main([cmd, "--config", str(path)]) == 0
    wide = small_config(tmp_path, sensors=[2, 3, 4])
    assert main(["decompose", "--config", str(wide)]) == 0
    assert main(["features", "--config", str(wide)]) == 0
    assert main(["predict", "--config", str(wide)]) == 2
    assert error_of(capsys)["error"] == "ShapeError"


def test_job_seed_is_stable_and_distinct():
    assert job_seed(0, "train", 3, 2) == job_seed(0, "train", 3, 2)
    seeds = {job_seed(0, r, u, s) for r in ("train", "test") for u in (1, 2) for s in (2, 3)}
    assert len(seeds) == 8


def test_parallel_decompose_matches_serial(pipeline):
    tmp_path, path = pipeline
    assert main(["decompose", "--config", str(path)]) == 0
    serial = (tmp_path / "runs" / "decompose" / "manifest.json").read_bytes()
    assert main(["decompose", "--config", str(path), "--workers", "2"]) == 0
    assert (tmp_path / "runs" / "decompose" / "manifest.json").read_bytes() == serial


def test_run_rejects_unknown_command():
    with pytest.raises(ConfigError):
        run("bogus", RunConfig())
