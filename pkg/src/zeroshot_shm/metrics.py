"""ROC / AUC and precision-recall-F1 with damage as the positive class."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class RocCurve:
    false_alarm_rate: np.ndarray
    true_alarm_rate: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.false_alarm_rate.tolist(), self.true_alarm_rate.tolist()))


@dataclass(frozen=True)
class PrfReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision_undefined: bool = False

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision_undefined": self.precision_undefined,
        }


def _check_sets(healthy, damage):
    h = np.asarray(healthy, dtype=float).ravel()
    d = np.asarray(damage, dtype=float).ravel()
    if h.size == 0 or d.size == 0:
        raise ValueError("both healthy and damage score sets must be non-empty")
    if np.isnan(h).any() or np.isnan(d).any():
        raise ValueError("scores contain NaN")
    return h, d


def roc(healthy_scores, damage_scores) -> RocCurve:
    """Sweep every distinct score as an alarm threshold (alarm if score >= t).

    Points run from (0, 0) at t=+inf to (1, 1) at t=-inf; the area is the
    trapezoid sum, which credits ties with one half.
    """
    h, d = _check_sets(healthy_scores, damage_scores)
    values = np.unique(np.concatenate([h, d]))[::-1]
    hs = np.sort(h)
    ds = np.sort(d)
    # count of scores >= each threshold
    fp = h.size - np.searchsorted(hs, values, side="left")
    tp = d.size - np.searchsorted(ds, values, side="left")
    # the lowest distinct value already reaches (1, 1); the -inf sentinel repeats it
    far = np.concatenate([[0.0], fp / h.size, [1.0]])
    tar = np.concatenate([[0.0], tp / d.size, [1.0]])
    thresholds = np.concatenate([[np.inf], values, [-np.inf]])
    auc = float(np.sum(np.diff(far) * (tar[1:] + tar[:-1]) / 2.0))
    return RocCurve(far, tar, thresholds, auc)


def auc_mann_whitney(healthy_scores, damage_scores) -> float:
    """P(damage > healthy) + P(tie)/2 from average ranks."""
    h, d = _check_sets(healthy_scores, damage_scores)
    ranks = rankdata(np.concatenate([h, d]))
    u = ranks[h.size:].sum() - d.size * (d.size + 1) / 2.0
    return float(u / (h.size * d.size))


def prf(alarms_on_healthy, alarms_on_damage) -> PrfReport:
    ah = np.asarray(alarms_on_healthy, dtype=bool).ravel()
    ad = np.asarray(alarms_on_damage, dtype=bool).ravel()
    if ad.size == 0:
        raise ValueError("damage alarm list must be non-empty")
    tp = int(ad.sum())
    fn = int(ad.size - tp)
    fp = int(ah.sum())
    tn = int(ah.size - fp)
    undefined = tp + fp == 0
    precision = 0.0 if undefined else tp / (tp + fp)
    recall = tp / ad.size
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return PrfReport(precision, recall, f1, tp, fp, tn, fn, undefined)


def write_roc_csv(path, curve: RocCurve) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "false_alarm_rate", "true_alarm_rate"])
        for t, x, y in zip(curve.thresholds, curve.false_alarm_rate, curve.true_alarm_rate):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])
