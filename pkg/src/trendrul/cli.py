"""``trendrul`` command line: staged, file-based, seeded pipeline runs.

Every stage writes into ``<out>/<stage>/`` and leaves a ``manifest.json``
holding the tool version, run seed, a hash of the configuration and the
sha256 of every artifact. Downstream stages refuse to start until the
manifests they depend on exist.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .cmapss import DEFAULT_SENSORS, Dataset, label_rul, parse_cmapss, select_sensors
from .emd import SiftConfig
from .ensemble import (
    NOISE_GENERATOR,
    EnsembleConfig,
    ceemd,
    eemd,
    read_decomposition_csv,
    trend_feature,
    write_decomposition_csv,
)
from .errors import ConfigError, PipelineOrderError, ShapeError, TrendRulError
from .metrics import (
    BASELINE_ESTIMATOR,
    EvaluationReport,
    ScoreConfig,
    baseline_distribution,
    mare,
    mpd,
)
from .neural import NetworkConfig, load_checkpoint, predict, save_checkpoint, train, write_loss_log
from .pipeline import fit_fleet_normalization, normalized_signals, training_sequences
from .synthetic import degradation_fleet, truncate_for_test, write_cmapss
from .timeseries import NormalizationStats, sliding_mean

log = logging.getLogger("trendrul")

COMMANDS = ("decompose", "features", "train", "predict", "evaluate", "compare-features", "synthesize")

# FD001 training units used for feature comparison
COMPARE_UNITS = (1, 6, 7, 8, 12, 19, 26, 29, 38, 39, 42, 49, 50, 58, 60, 62, 63, 68, 73, 78,
                 81, 86, 91, 94, 98)


@dataclass
class RunConfig:
    subset: str = "FD001"
    data_dir: str = "data"
    train_path: str | None = None
    test_path: str | None = None
    rul_path: str | None = None
    sensors: list = field(default_factory=lambda: list(DEFAULT_SENSORS))
    trend_level: int = 0
    feature_method: str = "ceemd"
    # ensemble
    realizations: int = 100
    noise_std: float = 0.02
    noise_schedule: str = "constant"
    max_total_sift_iterations: int = 5000
    sd_threshold: float = 0.2
    max_sift_iterations: int = 1000
    boundary_mirror_count: int = 2
    # network
    layer_sizes: list = field(default_factory=lambda: [128, 100])
    dropout: float = 0.5
    label_cap: int = 130
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_iterations: int = 5000
    batch_size: int = 32
    init_scale: float | None = None
    clip_norm: float | None = None
    dtype: str = "float64"
    stride: int = 1
    max_crop: int = 100
    # scoring and feature comparison
    a_early: float = 13.0
    a_late: float = 15.0
    compare_units: list = field(default_factory=lambda: list(COMPARE_UNITS))
    compare_bins: int = 50
    compare_levels: list = field(default_factory=lambda: [0, 1, 2])
    # run
    seed: int = 0
    out: str = "runs"
    workers: int = 1
    synth_units: int = 100
    synth_test_units: int = 100
    synth_noise: float = 0.02

    # keys that change where or how fast things run but not what they compute
    _NON_SEMANTIC = ("out", "workers", "data_dir", "train_path", "test_path", "rul_path")

    @classmethod
    def from_sources(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        values = {}
        if path is not None:
            try:
                values = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            if not isinstance(values, dict):
                raise ConfigError("config file must hold a JSON object")
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**values)

    def semantic(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in self._NON_SEMANTIC}

    def config_hash(self) -> str:
        return _sha256(json.dumps(self.semantic(), sort_keys=True).encode())

    def ensemble(self, base_seed: int = 0) -> EnsembleConfig:
        return EnsembleConfig(self.realizations, self.noise_std, self.noise_schedule,
                              self.max_total_sift_iterations, base_seed)

    def sift(self) -> SiftConfig:
        return SiftConfig(self.sd_threshold, self.max_sift_iterations, self.boundary_mirror_count,
                          self.max_total_sift_iterations)

    def network(self, input_size: int) -> NetworkConfig:
        return NetworkConfig(
            input_size=input_size, layer_sizes=tuple(self.layer_sizes), dropout=self.dropout,
            label_cap=self.label_cap, learning_rate=self.learning_rate, beta1=self.beta1,
            beta2=self.beta2, adam_eps=self.adam_eps, max_iterations=self.max_iterations,
            batch_size=self.batch_size, init_scale=self.init_scale, clip_norm=self.clip_norm,
            dtype=self.dtype,
        )

    def score(self) -> ScoreConfig:
        return ScoreConfig(self.a_early, self.a_late)

    def paths(self):
        base = Path(self.data_dir)
        train_p = Path(self.train_path) if self.train_path else base / f"train_{self.subset}.txt"
        test_p = Path(self.test_path) if self.test_path else base / f"test_{self.subset}.txt"
        rul_p = Path(self.rul_path) if self.rul_path else base / f"RUL_{self.subset}.txt"
        if not train_p.is_file():
            raise ConfigError(f"training file not found: {train_p}")
        if test_p.is_file() != rul_p.is_file():
            raise ConfigError(f"need both or neither of {test_p} and {rul_p}")
        if not test_p.is_file():
            return train_p, None, None
        return train_p, test_p, rul_p

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _file_hash(path: Path) -> str:
    return _sha256(path.read_bytes())


def _loss_log_hash(path: Path) -> str:
    # wall-clock times differ between reruns; hash the step and loss columns only
    with open(path, newline="") as fh:
        rows = [r[:2] for r in csv.reader(fh)]
    return _sha256(json.dumps(rows).encode())


def _write_manifest(stage_dir: Path, stage: str, cfg: RunConfig, artifacts: dict,
                    inputs: dict | None = None, extra: dict | None = None) -> dict:
    manifest = {
        "stage": stage,
        "tool": "trendrul",
        "version": __version__,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "config": cfg.semantic(),
        "inputs": inputs or {},
        "artifacts": dict(sorted(artifacts.items())),
    }
    if extra:
        manifest.update(extra)
    (stage_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _require(cfg: RunConfig, stage: str, needed_by: str) -> dict:
    path = cfg.out_dir / stage / "manifest.json"
    if not path.is_file():
        raise PipelineOrderError(f"'{needed_by}' needs the '{stage}' stage; run it first ({path} missing)")
    return json.loads(path.read_text())


def _manifest_digest(cfg: RunConfig, stage: str) -> str:
    return _file_hash(cfg.out_dir / stage / "manifest.json")


def _stage_dir(cfg: RunConfig, stage: str) -> Path:
    d = cfg.out_dir / stage
    d.mkdir(parents=True, exist_ok=True)
    return d


def load_dataset(cfg: RunConfig) -> Dataset:
    train_p, test_p, rul_p = cfg.paths()
    return select_sensors(parse_cmapss(train_p, test_p, rul_p, cfg.subset), cfg.sensors)


def job_seed(seed: int, role: str, unit_id: int, sensor: int, stage: int = 0) -> int:
    """Noise seed of one (unit, sensor) decomposition, independent of job order."""
    ss = np.random.SeedSequence([seed, stage, 0 if role == "train" else 1, unit_id, sensor])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _unit_stem(unit_id: int) -> str:
    return f"unit_{unit_id:04d}"


def _write_matrix_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, np.integer)) else repr(float(v)) for v in row])


def _read_matrix_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))


# ---------------------------------------------------------------- decompose

def _decompose_unit(args):
    signals, role, unit_id, sensors, ens_args, sift_cfg, seed = args
    out = []
    for j, sensor in enumerate(sensors):
        ens = EnsembleConfig(*ens_args, base_seed=job_seed(seed, role, unit_id, sensor))
        out.append(ceemd(signals[:, j], ens, sift_cfg))
    return out


def cmd_decompose(cfg: RunConfig) -> dict:
    ds = load_dataset(cfg)
    train_units = ds.by_role("train")
    stats = fit_fleet_normalization(train_units, ds.sensor_set)
    stage = _stage_dir(cfg, "decompose")
    (stage / "normalization.json").write_text(
        json.dumps([s.to_dict() for s in stats], indent=2) + "\n")
    ens_args = (cfg.realizations, cfg.noise_std, cfg.noise_schedule, cfg.max_total_sift_iterations)
    jobs = [(normalized_signals(u, stats), u.role, u.unit_id, ds.sensor_set, ens_args, cfg.sift(),
             cfg.seed) for u in ds.units]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_decompose_unit, jobs))
    else:
        results = [_decompose_unit(job) for job in jobs]
    artifacts = {"normalization.json": _file_hash(stage / "normalization.json")}
    for u, decomps in zip(ds.units, results):
        (stage / u.role).mkdir(exist_ok=True)
        for sensor, d in zip(ds.sensor_set, decomps):
            rel = f"{u.role}/{_unit_stem(u.unit_id)}_s{sensor:02d}.csv"
            d.start_cycle = int(u.cycles[0])
            write_decomposition_csv(stage / rel, d)
            artifacts[rel] = _file_hash(stage / rel)
        log.info("decomposed %s unit %d", u.role, u.unit_id)
    return _write_manifest(stage, "decompose", cfg, artifacts,
                           extra={"noise_generator": NOISE_GENERATOR})


def _load_stats(cfg: RunConfig) -> list:
    doc = json.loads((cfg.out_dir / "decompose" / "normalization.json").read_text())
    return [NormalizationStats.from_dict(d) for d in doc]


def _decomposition(cfg: RunConfig, role: str, unit_id: int, sensor: int):
    path = cfg.out_dir / "decompose" / role / f"{_unit_stem(unit_id)}_s{sensor:02d}.csv"
    if not path.is_file():
        raise PipelineOrderError(f"missing decomposition {path}; rerun 'decompose'")
    return read_decomposition_csv(path)


# ----------------------------------------------------------------- features

def _feature_column(cfg: RunConfig, role: str, unit_id: int, sensor: int, signal) -> np.ndarray:
    method = cfg.feature_method
    if method == "ceemd":
        d = _decomposition(cfg, role, unit_id, sensor)
        return trend_feature(d, min(cfg.trend_level, d.n_imfs)).values
    if method == "eemd":
        ens = cfg.ensemble(job_seed(cfg.seed, role, unit_id, sensor, stage=1))
        d = eemd(signal, ens, cfg.sift())
        return trend_feature(d, min(cfg.trend_level, d.n_imfs), "EEMD").values
    if method == "mean":
        return sliding_mean(signal)
    if method == "raw":
        return np.asarray(signal, dtype=float)
    raise ConfigError(f"unknown feature_method {method!r}")


def cmd_features(cfg: RunConfig) -> dict:
    _require(cfg, "decompose", "features")
    ds = load_dataset(cfg)
    stats = _load_stats(cfg)
    if [s.sensor for s in stats] != list(ds.sensor_set):
        raise ConfigError("sensor set differs from the one used by 'decompose'")
    stage = _stage_dir(cfg, "features")
    header = ["cycle"] + [f"s{j}" for j in ds.sensor_set]
    artifacts = {}
    for u in ds.units:
        signals = normalized_signals(u, stats)
        cols = [_feature_column(cfg, u.role, u.unit_id, j, signals[:, k])
                for k, j in enumerate(ds.sensor_set)]
        (stage / u.role).mkdir(exist_ok=True)
        rel = f"{u.role}/{_unit_stem(u.unit_id)}.csv"
        _write_matrix_csv(stage / rel, header,
                          ([int(c)] + [col[t] for col in cols] for t, c in enumerate(u.cycles)))
        artifacts[rel] = _file_hash(stage / rel)
    return _write_manifest(stage, "features", cfg, artifacts,
                           inputs={"decompose": _manifest_digest(cfg, "decompose")})


def _load_features(cfg: RunConfig, units) -> dict:
    out = {}
    for u in units:
        path = cfg.out_dir / "features" / u.role / f"{_unit_stem(u.unit_id)}.csv"
        if not path.is_file():
            raise PipelineOrderError(f"missing feature file {path}; rerun 'features'")
        _, data = _read_matrix_csv(path)
        out[u.unit_id] = data[:, 1:]
    return out


# -------------------------------------------------------------------- train

def cmd_train(cfg: RunConfig) -> dict:
    _require(cfg, "features", "train")
    ds = load_dataset(cfg)
    train_units = ds.by_role("train")
    feats = _load_features(cfg, train_units)
    seqs = training_sequences(train_units, feats, cfg.label_cap, cfg.stride, cfg.max_crop)
    net_cfg = cfg.network(len(ds.sensor_set))
    log.info("training on %d sequences for %d steps", len(seqs), net_cfg.max_iterations)
    state = train(net_cfg, seqs, seed=cfg.seed, log_every=100, logger=log)
    stage = _stage_dir(cfg, "train")
    extra = {
        "normalization": [s.to_dict() for s in _load_stats(cfg)],
        "sensors": list(ds.sensor_set),
        "feature_method": cfg.feature_method,
        "trend_level": cfg.trend_level,
    }
    save_checkpoint(stage / "checkpoint.json", state, extra)
    write_loss_log(stage / "loss_log.csv", state)
    artifacts = {
        "checkpoint.json": _file_hash(stage / "checkpoint.json"),
        "loss_log.csv[step,loss]": _loss_log_hash(stage / "loss_log.csv"),
    }
    return _write_manifest(stage, "train", cfg, artifacts,
                           inputs={"features": _manifest_digest(cfg, "features")},
                           extra={"final_loss": state.loss_history[-1] if state.loss_history else None})


# ------------------------------------------------------------------ predict

def _evaluation_units(ds: Dataset) -> list:
    units = ds.by_role("test")
    if not units:
        raise ConfigError("dataset has no test units to predict")
    return units


def cmd_predict(cfg: RunConfig) -> dict:
    _require(cfg, "features", "predict")
    _require(cfg, "train", "predict")
    state, extra = load_checkpoint(cfg.out_dir / "train" / "checkpoint.json")
    ds = load_dataset(cfg)
    units = _evaluation_units(ds)
    feats = _load_features(cfg, units)
    width = state.net.config.input_size
    stage = _stage_dir(cfg, "predict")
    (stage / "trajectories").mkdir(exist_ok=True)
    artifacts = {}
    last_rows = []
    for u in units:
        F = feats[u.unit_id]
        if F.shape[1] != width:
            raise ShapeError(f"checkpoint expects {width} features, unit {u.unit_id} has {F.shape[1]}")
        traj, last = predict(state.net, F)
        labels = label_rul(u, state.net.config.label_cap)
        rel = f"trajectories/{_unit_stem(u.unit_id)}.csv"
        _write_matrix_csv(stage / rel, ["cycle", "predicted_rul", "label_rul"],
                          ([int(c), p, y] for c, p, y in zip(u.cycles, traj, labels)))
        artifacts[rel] = _file_hash(stage / rel)
        last_rows.append([int(u.unit_id), last, float(u.final_rul)])
    _write_matrix_csv(stage / "last_point.csv", ["unit_id", "predicted_rul", "true_rul"], last_rows)
    artifacts["last_point.csv"] = _file_hash(stage / "last_point.csv")
    return _write_manifest(stage, "predict", cfg, artifacts, inputs={
        "features": _manifest_digest(cfg, "features"), "train": _manifest_digest(cfg, "train")})


# ----------------------------------------------------------------- evaluate

def cmd_evaluate(cfg: RunConfig) -> dict:
    _require(cfg, "predict", "evaluate")
    _, data = _read_matrix_csv(cfg.out_dir / "predict" / "last_point.csv")
    report = EvaluationReport.build(data[:, 0].astype(int), data[:, 1], data[:, 2], cfg.score())
    stage = _stage_dir(cfg, "evaluate")
    report.write(stage / "report.json")
    log.info("score %.3f rmse %.3f over %d units", report.score, report.rmse, len(report.unit_ids))
    return _write_manifest(stage, "evaluate", cfg,
                           {"report.json": _file_hash(stage / "report.json")},
                           inputs={"predict": _manifest_digest(cfg, "predict")})


# --------------------------------------------------------- compare-features

def compare_feature_tables(cfg: RunConfig, ds: Dataset, stats: list, decomposition=None):
    """MPD and MARE of each candidate feature per sensor, as ``{feature: {sensor: value}}``.

    ``decomposition(unit, sensor)`` supplies CEEMD results; by default they
    are recomputed with the per-job seeds ``decompose`` would use.
    """
    train_units = ds.by_role("train")
    wanted = [u for u in train_units if u.unit_id in set(cfg.compare_units)]
    if len(wanted) < 2:
        wanted = train_units
    signals = {u.unit_id: normalized_signals(u, stats) for u in train_units}
    if decomposition is None:
        def decomposition(u, sensor):
            return ceemd(signals[u.unit_id][:, ds.sensor_set.index(sensor)],
                         cfg.ensemble(job_seed(cfg.seed, u.role, u.unit_id, sensor)), cfg.sift())
    levels = list(cfg.compare_levels)
    names = [f"Q_{v}" for v in levels] + [f"E_{v}" for v in levels] + ["mean", "raw"]
    mpd_table = {n: {} for n in names}
    mare_table = {n: {} for n in names}
    for k, sensor in enumerate(ds.sensor_set):
        raw = {u.unit_id: signals[u.unit_id][:, k] for u in wanted}
        track = baseline_distribution({u.unit_id: signals[u.unit_id][:, k] for u in train_units},
                                      cfg.compare_bins, targets=raw)
        cands = {n: {} for n in names}
        for u in wanted:
            x = raw[u.unit_id]
            d = decomposition(u, sensor)
            e = eemd(x, cfg.ensemble(job_seed(cfg.seed, u.role, u.unit_id, sensor, stage=1)), cfg.sift())
            for v in levels:
                cands[f"Q_{v}"][u.unit_id] = trend_feature(d, min(v, d.n_imfs)).values
                cands[f"E_{v}"][u.unit_id] = trend_feature(e, min(v, e.n_imfs), "EEMD").values
            cands["mean"][u.unit_id] = sliding_mean(x)
            cands["raw"][u.unit_id] = x
        for n in names:
            mpd_table[n][sensor] = mpd(cands[n], track)
            mare_table[n][sensor] = mare(cands[n], track)
    return mpd_table, mare_table


def _write_table(path: Path, table: dict, sensors) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature"] + [f"sensor_{j}" for j in sensors])
        for name, row in table.items():
            w.writerow([name] + [f"{row[j]:.6f}" for j in sensors])


def cmd_compare_features(cfg: RunConfig) -> dict:
    _require(cfg, "decompose", "compare-features")
    ds = load_dataset(cfg)
    stats = _load_stats(cfg)
    mpd_table, mare_table = compare_feature_tables(
        cfg, ds, stats, lambda u, sensor: _decomposition(cfg, u.role, u.unit_id, sensor))
    stage = _stage_dir(cfg, "compare")
    _write_table(stage / "mpd.csv", mpd_table, ds.sensor_set)
    _write_table(stage / "mare.csv", mare_table, ds.sensor_set)
    artifacts = {n: _file_hash(stage / n) for n in ("mpd.csv", "mare.csv")}
    return _write_manifest(stage, "compare", cfg, artifacts,
                           inputs={"decompose": _manifest_digest(cfg, "decompose")},
                           extra={"estimator": BASELINE_ESTIMATOR})


# --------------------------------------------------------------- synthesize

def cmd_synthesize(cfg: RunConfig) -> dict:
    """Write a synthetic fleet in C-MAPSS text format into ``data_dir``."""
    train_units = degradation_fleet(cfg.synth_units, seed=cfg.seed, noise_std=cfg.synth_noise)
    held = degradation_fleet(cfg.synth_test_units, seed=cfg.seed + 1, noise_std=cfg.synth_noise)
    test_units, ruls = truncate_for_test(held, seed=cfg.seed + 2)
    paths = write_cmapss(cfg.data_dir, cfg.subset, train_units, test_units, ruls)
    return {"stage": "synthesize", "files": {k: str(v) for k, v in paths.items()}}


HANDLERS = {
    "decompose": cmd_decompose,
    "features": cmd_features,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "compare-features": cmd_compare_features,
    "synthesize": cmd_synthesize,
}


def run(command: str, cfg: RunConfig) -> dict:
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    return HANDLERS[command](cfg)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trendrul", description="Trend-feature RUL pipeline")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with flat RunConfig keys")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--subset")
    p.add_argument("--trend-level", type=int, dest="trend_level")
    p.add_argument("--stride", type=int)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    overrides = {k: getattr(args, k) for k in
                 ("seed", "out", "subset", "trend_level", "stride", "data_dir", "workers")}
    try:
        cfg = RunConfig.from_sources(args.config, overrides)
        result = run(args.command, cfg)
    except TrendRulError as exc:
        _report_error(exc, exc.exit_code)
        return exc.exit_code
    except (ValueError, KeyError, TypeError) as exc:
        _report_error(exc, ConfigError.exit_code)
        return ConfigError.exit_code
    print(json.dumps({"status": "ok", "stage": result.get("stage"),
                      "config_hash": result.get("config_hash")}))
    return 0


def _report_error(exc: Exception, code: int) -> None:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("path", "line"):
        if hasattr(exc, attr):
            err[attr] = getattr(exc, attr)
    print(json.dumps(err), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
