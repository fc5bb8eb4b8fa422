"""Anomaly scores, Gaussian threshold tuning and damage alarms."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .gan import Discriminator, scores_from_logits
from .spectral import FeatureVector

SCORE_CAP = 40.0
UNCERTAIN_SCORE = -math.log10(0.5)  # score of D(x) = 0.5, about 0.30103


@dataclass(frozen=True)
class DetectionScore:
    value: float
    capped: bool


@dataclass(frozen=True)
class ThresholdModel:
    mu: float
    std: float
    threshold: float
    n_scores: int = 0
    n_excluded_capped: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ThresholdModel":
        return cls(**json.loads(Path(path).read_text()))


def score_from_probability(p: float, cap: float = SCORE_CAP) -> DetectionScore:
    """-log10(p) with p floored at 10**-cap."""
    p = max(float(p), 10.0 ** (-cap))
    value = min(-math.log10(p), cap)
    return DetectionScore(value, value >= cap)


def cap_scores(raw, cap: float = SCORE_CAP) -> tuple[np.ndarray, np.ndarray]:
    """(values, capped flags) from uncapped scores."""
    raw = np.asarray(raw, dtype=float)
    values = np.minimum(raw, cap)
    return values, values >= cap


def score_batch(model: Discriminator, features, cap: float = SCORE_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized scores for features shaped (windows, N, W/2)."""
    return cap_scores(scores_from_logits(model.raw_logits(features)), cap)


def score(model: Discriminator, f, cap: float = SCORE_CAP) -> DetectionScore:
    x = np.asarray(f.flat if isinstance(f, FeatureVector) else f, dtype=float)
    expected = model.arch.n_channels * model.arch.n_lines
    if x.size != expected:
        raise ValueError(f"feature has {x.size} values, model expects {expected}")
    values, capped = score_batch(model, x.reshape(1, -1), cap)
    return DetectionScore(float(values[0]), bool(capped[0]))


def _values(scores) -> tuple[np.ndarray, np.ndarray]:
    if len(scores) and isinstance(scores[0], DetectionScore):
        return np.array([s.value for s in scores]), np.array([s.capped for s in scores])
    v = np.asarray(scores, dtype=float)
    return v, v >= SCORE_CAP


def tune_threshold(tune_scores, floor: float = UNCERTAIN_SCORE) -> ThresholdModel:
    """Fit a normal to the tuning scores; threshold = max(mu + 3 std, floor).

    Capped scores carry no magnitude information and are left out of the
    fit, with a warning.
    """
    values, capped = _values(tune_scores)
    if capped.any():
        warnings.warn(f"{int(capped.sum())} capped scores excluded from the threshold fit", RuntimeWarning)
    kept = values[~capped]
    if kept.size < 2:
        raise ValueError(f"need at least 2 uncapped tuning scores, got {kept.size}")
    mu = float(np.mean(kept))
    std = float(np.std(kept, ddof=1))
    return ThresholdModel(mu, std, max(mu + 3.0 * std, floor), int(kept.size), int(capped.sum()))


def classify(scores, threshold) -> np.ndarray:
    """Alarm where score > threshold (strict)."""
    t = threshold.threshold if isinstance(threshold, ThresholdModel) else float(threshold)
    values, _ = _values(scores)
    return values > t


def write_scores_csv(path, rows) -> None:
    """rows: iterable of (window_index, case_label, score, capped, alarm)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_index", "case_label", "score", "capped", "alarm"])
        for idx, label, s, capped, alarm in rows:
            w.writerow([int(idx), label, repr(float(s)), int(bool(capped)), int(bool(alarm))])
