"""End-to-end steps behind the command-line subcommands.

Every step reads and writes plain files under ``config.out_dir`` so the
steps can be run separately or chained by ``run_all``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adapt, detect, gan, metrics, spectral, synth
from .config import ConfigError, ExperimentConfig
from .signals import DataError, load_records, split_chronologically, window_matrix

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
CHECKPOINT_NAME = "source_model.ckpt"
TRAINING_LOG_NAME = "training_log.jsonl"
MAPPING_NAME = "mapping.json"
THRESHOLD_NAME = "threshold.json"
REPORT_NAME = "report.json"


@dataclass(frozen=True)
class DataPaths:
    source_healthy: Path
    source_damage: list[Path]
    target_healthy: Path
    target_damage: list[Path]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out(config: ExperimentConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def resolve_data(config: ExperimentConfig) -> DataPaths:
    """Explicit CSV paths win; otherwise read the dataset manifest."""
    if config.source_healthy or config.target_healthy:
        if not (config.source_healthy and config.target_healthy):
            raise ConfigError("both source_healthy and target_healthy must be given")
        return DataPaths(
            Path(config.source_healthy),
            [Path(p) for p in config.source_damage],
            Path(config.target_healthy),
            [Path(p) for p in config.target_damage],
        )
    root = Path(config.dataset) if config.dataset else Path(config.out_dir) / "data"
    manifest = root / "manifest.json"
    if not manifest.is_file():
        raise DataError(f"no dataset: {manifest} not found (run the synth step or set CSV paths)")
    cases = json.loads(manifest.read_text())["cases"]

    def pick(domain, healthy):
        return [root / c["path"] for c in cases if c["domain"] == domain and (c["damage"] is None) == healthy]

    sh, th = pick("source", True), pick("target", True)
    if len(sh) != 1 or len(th) != 1:
        raise DataError(f"{manifest}: expected one healthy case per domain")
    return DataPaths(sh[0], pick("source", False), th[0], pick("target", False))


def case_label(path: Path) -> str:
    return Path(path).stem


def load_features(path, channels, config: ExperimentConfig) -> np.ndarray:
    """(windows, N, W/2) features of one CSV."""
    records = load_records(path, channels)
    return spectral.feature_matrix(window_matrix(records, config.w), config.clip_cap)


def architecture(config: ExperimentConfig) -> gan.Architecture:
    return gan.Architecture(
        n_channels=config.n,
        n_lines=config.w // 2,
        lstm_hidden=config.lstm_hidden,
        head_hidden=config.head_hidden,
        steps=config.lstm_steps,
        generator_hidden=tuple(config.generator_hidden),
        clip_cap=config.clip_cap,
    )


def train_config(config: ExperimentConfig) -> gan.TrainConfig:
    return gan.TrainConfig(
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        max_iterations=config.max_iterations,
        eval_interval=config.eval_interval,
        patience=config.patience,
        validation_fraction=config.validation_fraction,
        score_cap=config.score_cap,
        seed=config.seed,
    )


# ---------------------------------------------------------------- steps


def cmd_synth(config: ExperimentConfig) -> Path:
    """Write the synthetic transfer fixture; returns the dataset directory."""
    config.validate()
    root = Path(config.dataset) if config.dataset else Path(config.out_dir) / "data"
    fixture = synth.make_tl_fixture(
        seed=config.seed,
        damage_factors=tuple(config.synth_damage_factors),
        damage_story=config.synth_damage_story,
        source_healthy_s=config.synth_source_healthy_s,
        source_damage_s=config.synth_source_damage_s,
        target_healthy_s=config.synth_target_healthy_s,
        target_damage_s=config.synth_target_damage_s,
    )
    n_sensors = len(fixture.source_spec.sensor_dofs)
    if max(config.source_channels + config.target_channels) >= n_sensors:
        raise ConfigError(f"synthetic fixture has {n_sensors} channels per structure")
    synth.write_fixture(fixture, root)
    return root


def cmd_train_source(config: ExperimentConfig, resume=None) -> Path:
    """Train the source discriminator; writes checkpoint and JSON-lines log."""
    paths = resolve_data(config)
    if not paths.source_damage:
        raise DataError("no source damage CSVs configured; source labels are required for selection")
    healthy = load_features(paths.source_healthy, config.source_channels, config)
    damage = np.concatenate([load_features(p, config.source_channels, config) for p in paths.source_damage])
    if resume is not None:
        state = gan.load_training_state(resume, max_iterations=config.max_iterations)
        if (state.arch.n_channels, state.arch.n_lines) != (config.n, config.w // 2):
            raise ConfigError("resume checkpoint was trained with a different N or W")
        state = gan.train(healthy, damage, state=state)
    else:
        state = gan.train(healthy, damage, train_config(config), architecture(config))
    out = _out(config)
    ckpt = out / CHECKPOINT_NAME
    extra = {
        "w": config.w,
        "n": config.n,
        "channel_order": list(config.source_channels),
        "source_spectrum": adapt.estimate_spectra(healthy).tolist(),
        "source_calibration_windows": int(healthy.shape[0]),
    }
    gan.save_checkpoint(ckpt, state, extra)
    gan.write_training_log(out / TRAINING_LOG_NAME, state.log)
    log.info("selected iteration %d with source AUC %.4f", state.selected.iteration, state.selected.source_auc)
    return ckpt


def _check_model(header: dict, config: ExperimentConfig) -> None:
    if header["n"] != config.n:
        raise ConfigError(f"checkpoint expects N={header['n']}, target config has N={config.n}")
    if header["w"] != config.w:
        raise ConfigError(f"checkpoint expects W={header['w']}, config has W={config.w}")


def target_segments(config: ExperimentConfig, paths: DataPaths):
    feats = load_features(paths.target_healthy, config.target_channels, config)
    return split_chronologically(feats, config.split)


def cmd_adapt(config: ExperimentConfig, checkpoint=None, target_healthy=None) -> Path:
    """Build the spectral mapping from the DA segment of the target healthy record."""
    checkpoint = Path(checkpoint or Path(config.out_dir) / CHECKPOINT_NAME)
    header = gan.read_checkpoint_header(checkpoint)
    _check_model(header, config)
    paths = resolve_data(config)
    if target_healthy is not None:
        paths = DataPaths(paths.source_healthy, paths.source_damage, Path(target_healthy), paths.target_damage)
    da, _, _ = target_segments(config, paths)
    mapping = adapt.build_mapping(
        np.asarray(header["source_spectrum"]),
        adapt.estimate_spectra(da),
        epsilon=config.epsilon,
        source_channels=header["channel_order"],
        target_channels=config.target_channels,
        calibration_windows=int(da.shape[0]),
        w=config.w,
    )
    path = _out(config) / MAPPING_NAME
    mapping.save(path)
    return path


def _adapted(mapping: adapt.SpectralMapping, feats: np.ndarray, config: ExperimentConfig) -> np.ndarray:
    out = adapt.transform(mapping, feats)
    return np.minimum(out, config.clip_cap) if config.clip_transformed else out


def cmd_tune_threshold(config: ExperimentConfig, checkpoint=None, mapping=None) -> Path:
    checkpoint = Path(checkpoint or Path(config.out_dir) / CHECKPOINT_NAME)
    mapping = adapt.SpectralMapping.load(mapping or Path(config.out_dir) / MAPPING_NAME)
    D, header = gan.load_discriminator(checkpoint)
    _check_model(header, config)
    _, tune, _ = target_segments(config, resolve_data(config))
    values, capped = detect.score_batch(D, _adapted(mapping, tune, config), config.score_cap)
    model = detect.tune_threshold([detect.DetectionScore(float(v), bool(c)) for v, c in zip(values, capped)])
    path = _out(config) / THRESHOLD_NAME
    model.save(path)
    return path


def cmd_detect(config: ExperimentConfig, csv_path, checkpoint=None, mapping=None, threshold=None, out=None) -> Path:
    """Score one CSV with adaptation and write the per-window score table."""
    checkpoint = Path(checkpoint or Path(config.out_dir) / CHECKPOINT_NAME)
    mapping = adapt.SpectralMapping.load(mapping or Path(config.out_dir) / MAPPING_NAME)
    tmodel = detect.ThresholdModel.load(threshold or Path(config.out_dir) / THRESHOLD_NAME)
    D, header = gan.load_discriminator(checkpoint)
    _check_model(header, config)
    feats = load_features(csv_path, config.target_channels, config)
    values, capped = detect.score_batch(D, _adapted(mapping, feats, config), config.score_cap)
    alarms = detect.classify(values, tmodel)
    label = case_label(csv_path)
    path = Path(out) if out else _out(config) / f"scores_{label}.csv"
    detect.write_scores_csv(path, zip(range(len(values)), [label] * len(values), values, capped, alarms))
    return path


def _evaluate_case(D, mapping, config, healthy_test, healthy_raw, path, tmodel, out_dir):
    label = case_label(path)
    feats = load_features(path, config.target_channels, config)
    if feats.shape[0] == 0:
        raise DataError(f"{path}: no windows")
    s_dmg, c_dmg = detect.score_batch(D, _adapted(mapping, feats, config), config.score_cap)
    s_h, c_h = healthy_test
    curve = metrics.roc(s_h, s_dmg)
    auc_mw = metrics.auc_mann_whitney(s_h, s_dmg)
    raw_h, _ = healthy_raw
    raw_dmg, _ = detect.score_batch(D, feats, config.score_cap)
    no_da = metrics.roc(raw_h, raw_dmg)
    alarms_h = detect.classify(s_h, tmodel)
    alarms_d = detect.classify(s_dmg, tmodel)
    report = metrics.prf(alarms_h, alarms_d)
    metrics.write_roc_csv(out_dir / f"roc_{label}.csv", curve)
    metrics.write_roc_csv(out_dir / f"roc_{label}_no_da.csv", no_da)
    rows = [(i, "healthy_test", v, c, a) for i, (v, c, a) in enumerate(zip(s_h, c_h, alarms_h))]
    rows += [(i, label, v, c, a) for i, (v, c, a) in enumerate(zip(s_dmg, c_dmg, alarms_d))]
    detect.write_scores_csv(out_dir / f"scores_{label}.csv", rows)
    return {
        "label": label,
        "n_healthy_test": int(len(s_h)),
        "n_damage": int(len(s_dmg)),
        "auc": curve.auc,
        "auc_pairwise": auc_mw,
        "auc_no_da": no_da.auc,
        "capped_damage_scores": int(c_dmg.sum()),
        "mean_score_damage": float(np.mean(s_dmg)),
        **report.as_dict(),
    }


def cmd_evaluate(config: ExperimentConfig, checkpoint=None, mapping=None, threshold=None) -> Path:
    """Per-damage-case AUC (with and without adaptation) and P/R/F1 at the tuned threshold."""
    out = _out(config)
    checkpoint = Path(checkpoint or out / CHECKPOINT_NAME)
    mapping_path = Path(mapping or out / MAPPING_NAME)
    threshold_path = Path(threshold or out / THRESHOLD_NAME)
    mapping = adapt.SpectralMapping.load(mapping_path)
    tmodel = detect.ThresholdModel.load(threshold_path)
    D, header = gan.load_discriminator(checkpoint)
    _check_model(header, config)
    paths = resolve_data(config)
    if not paths.target_damage:
        raise DataError("no target damage CSVs to evaluate")
    _, _, test = target_segments(config, paths)
    healthy_test = detect.score_batch(D, _adapted(mapping, test, config), config.score_cap)
    healthy_raw = detect.score_batch(D, test, config.score_cap)
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [
            pool.submit(_evaluate_case, D, mapping, config, healthy_test, healthy_raw, p, tmodel, out)
            for p in paths.target_damage
        ]
        cases = [f.result() for f in futures]
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config_hash": config.digest(),
        "checkpoint_hash": file_digest(checkpoint),
        "mapping_hash": file_digest(mapping_path),
        "w": config.w,
        "n": config.n,
        "source_auc": header["source_auc"],
        "selected_iteration": header["selected_iteration"],
        "calibration_windows": mapping.calibration_windows,
        "threshold": tmodel.to_json(),
        "healthy_test_false_alarm_rate": float(np.mean(detect.classify(healthy_test[0], tmodel))),
        "cases": cases,
    }
    path = out / REPORT_NAME
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


def has_explicit_data(config: ExperimentConfig) -> bool:
    return bool(config.dataset or config.source_healthy or config.target_healthy)


def run_all(config: ExperimentConfig) -> Path:
    """synth (when no data is configured) -> train -> adapt -> tune -> evaluate."""
    config.validate()
    if not has_explicit_data(config):
        cmd_synth(config)
    cmd_train_source(config)
    cmd_adapt(config)
    cmd_tune_threshold(config)
    return cmd_evaluate(config)
