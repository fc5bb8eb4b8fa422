"""Normalized FFT-amplitude features.

Per channel: rectangular W-point FFT, keep the first W/2 magnitudes, divide
by their mean, clip at the cap (10 by default). Channel features are
concatenated in configured order into one flat vector per window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signals import AnalysisWindow

DEFAULT_CLIP_CAP = 10.0


class DegenerateChannelError(ValueError):
    """A channel window with zero mean amplitude cannot be normalized."""


@dataclass(frozen=True)
class ChannelFeature:
    channel_id: int
    lines: np.ndarray


@dataclass(frozen=True)
class FeatureVector:
    channels: tuple[ChannelFeature, ...]
    flat: np.ndarray = field(repr=False)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_lines(self) -> int:
        return self.channels[0].lines.size


def fft_amplitudes(window) -> np.ndarray:
    values = window.values if isinstance(window, AnalysisWindow) else np.asarray(window, dtype=float)
    w = values.shape[-1]
    if w < 2 or w % 2:
        raise ValueError(f"window length must be even, got {w}")
    return np.abs(np.fft.fft(values, axis=-1)[..., : w // 2])


def normalize_and_clip(amplitudes, cap: float = DEFAULT_CLIP_CAP, channel_id: int = 0) -> ChannelFeature:
    a = np.asarray(amplitudes, dtype=float)
    if a.size == 0:
        raise ValueError("empty amplitude sequence")
    mean = a.mean()
    if not mean > 0:
        raise DegenerateChannelError(f"channel {channel_id}: mean amplitude is zero")
    return ChannelFeature(channel_id, np.minimum(a / mean, cap))


def assemble_feature(channel_features) -> FeatureVector:
    chans = tuple(channel_features)
    if not chans:
        raise ValueError("need at least one channel")
    lengths = {c.lines.size for c in chans}
    if len(lengths) != 1:
        raise ValueError(f"channel features have mixed lengths {sorted(lengths)}")
    return FeatureVector(chans, np.concatenate([c.lines for c in chans]))


def feature_matrix(windows: np.ndarray, cap: float = DEFAULT_CLIP_CAP) -> np.ndarray:
    """Vectorized features for windows shaped (n_windows, n_channels, W).

    Returns (n_windows, n_channels, W/2); reshape to (n_windows, -1) for flat F.
    """
    amps = fft_amplitudes(np.asarray(windows, dtype=float))
    mean = amps.mean(axis=-1, keepdims=True)
    if np.any(mean <= 0):
        bad = np.argwhere(mean[..., 0] <= 0)[0]
        raise DegenerateChannelError(f"window {bad[0]}, channel {bad[1]}: mean amplitude is zero")
    return np.minimum(amps / mean, cap)


def save_features(path, features: np.ndarray, w: int, channel_order, cap: float) -> None:
    """Binary matrix (row = flat feature vector) plus a JSON sidecar."""
    path = Path(path)
    flat = np.ascontiguousarray(features.reshape(features.shape[0], -1), dtype="<f8")
    n = len(channel_order)
    if flat.shape[1] != n * (w // 2):
        raise ValueError("feature width does not match N*W/2")
    path.write_bytes(flat.tobytes())
    meta = {"n": n, "w": w, "rows": flat.shape[0], "channel_order": list(channel_order), "clip_cap": cap, "dtype": "<f8"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_features(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    flat = np.frombuffer(path.read_bytes(), dtype=meta["dtype"]).reshape(meta["rows"], meta["n"], meta["w"] // 2)
    return flat.copy(), meta
