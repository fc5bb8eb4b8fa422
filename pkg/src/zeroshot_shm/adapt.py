"""Spectral-line mapping between a target and a source structure.

The power spectrum of a domain is the mean square of its normalized
features over healthy calibration windows. Lines of both spectra are
ranked (ascending, ties by lower index), and the target line holding rank
k is moved to the source line holding rank k and rescaled so that its
mean power matches the source's.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import FeatureVector

DEFAULT_EPSILON = 1e-12


@dataclass(frozen=True)
class ChannelSpectrum:
    channel_id: int
    power: np.ndarray
    n_windows: int = 1


@dataclass
class ChannelMapping:
    arg_s: np.ndarray
    arg_t: np.ndarray
    c_st: np.ndarray
    floored_lines: list[int] = field(default_factory=list)

    def __post_init__(self):
        n = self.arg_s.size
        if self.arg_t.size != n or self.c_st.size != n:
            raise ValueError("mapping arrays differ in length")

    @property
    def n_lines(self) -> int:
        return self.arg_s.size

    def apply(self, lines: np.ndarray) -> np.ndarray:
        """Transform the last axis: out[..., arg_s[k]] = lines[..., arg_t[k]] * c_st[k]."""
        lines = np.asarray(lines, dtype=float)
        if lines.shape[-1] != self.n_lines:
            raise ValueError(f"expected {self.n_lines} lines, got {lines.shape[-1]}")
        out = np.empty_like(lines)
        out[..., self.arg_s] = lines[..., self.arg_t] * self.c_st
        return out

    def invert(self, lines: np.ndarray) -> np.ndarray:
        lines = np.asarray(lines, dtype=float)
        out = np.empty_like(lines)
        out[..., self.arg_t] = lines[..., self.arg_s] / self.c_st
        return out


@dataclass
class SpectralMapping:
    channels: list[ChannelMapping]
    source_channels: list = field(default_factory=list)
    target_channels: list = field(default_factory=list)
    epsilon: float = DEFAULT_EPSILON
    calibration_windows: int = 0
    w: int | None = None

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_lines(self) -> int:
        return self.channels[0].n_lines

    def to_json(self) -> dict:
        return {
            "w": self.w,
            "n": self.n_channels,
            "epsilon": self.epsilon,
            "calibration_windows": self.calibration_windows,
            "channel_correspondence": [
                {"source": s, "target": t} for s, t in zip(self.source_channels, self.target_channels)
            ],
            "channels": [
                {
                    "arg_s": m.arg_s.tolist(),
                    "arg_t": m.arg_t.tolist(),
                    "c_st": m.c_st.tolist(),
                    "floored_lines": list(m.floored_lines),
                }
                for m in self.channels
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "SpectralMapping":
        chans = [
            ChannelMapping(
                np.asarray(c["arg_s"], dtype=np.int64),
                np.asarray(c["arg_t"], dtype=np.int64),
                np.asarray(c["c_st"], dtype=float),
                list(c.get("floored_lines", [])),
            )
            for c in d["channels"]
        ]
        corr = d.get("channel_correspondence", [])
        return cls(
            chans,
            [c["source"] for c in corr],
            [c["target"] for c in corr],
            d.get("epsilon", DEFAULT_EPSILON),
            d.get("calibration_windows", 0),
            d.get("w"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SpectralMapping":
        return cls.from_json(json.loads(Path(path).read_text()))


def estimate_spectrum(features, channel_id: int = 0) -> ChannelSpectrum:
    """Mean over calibration windows of squared feature lines.

    ``features`` is a list of ChannelFeature / line arrays, or a 2-D array
    (windows, lines).
    """
    rows = [getattr(f, "lines", f) for f in features] if not isinstance(features, np.ndarray) else features
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("need at least one calibration window")
    return ChannelSpectrum(channel_id, np.mean(arr * arr, axis=0), arr.shape[0])


def estimate_spectra(features: np.ndarray) -> np.ndarray:
    """Per-channel power spectra for features shaped (windows, N, lines) -> (N, lines)."""
    f = np.asarray(features, dtype=float)
    if f.ndim != 3 or f.shape[0] == 0:
        raise ValueError("need at least one calibration window shaped (N, lines)")
    return np.mean(f * f, axis=0)


def stable_argsort(values: np.ndarray) -> np.ndarray:
    """Ascending ranks; equal values keep index order."""
    return np.argsort(np.asarray(values, dtype=float), kind="stable")


def build_channel_mapping(ss, ts, epsilon: float = DEFAULT_EPSILON) -> ChannelMapping:
    ss = np.asarray(getattr(ss, "power", ss), dtype=float)
    ts = np.asarray(getattr(ts, "power", ts), dtype=float)
    if ss.shape != ts.shape or ss.ndim != 1:
        raise ValueError(f"spectrum lengths differ: {ss.shape} vs {ts.shape}")
    arg_s = stable_argsort(ss)
    arg_t = stable_argsort(ts)
    denom = ts[arg_t]
    floored = np.flatnonzero(denom < epsilon)
    c_st = np.sqrt(ss[arg_s] / np.maximum(denom, epsilon))
    # zero source power would give a zero multiplier; keep the map invertible
    c_st = np.maximum(c_st, np.sqrt(epsilon))
    return ChannelMapping(arg_s, arg_t, c_st, sorted(int(arg_t[k]) for k in floored))


def build_mapping(
    source_spectra,
    target_spectra,
    epsilon: float = DEFAULT_EPSILON,
    source_channels=None,
    target_channels=None,
    calibration_windows: int = 0,
    w: int | None = None,
) -> SpectralMapping:
    """Channel-wise mapping; channels are paired by position."""
    ss = np.atleast_2d(np.asarray(source_spectra, dtype=float))
    ts = np.atleast_2d(np.asarray(target_spectra, dtype=float))
    if ss.shape != ts.shape:
        raise ValueError(f"source spectra {ss.shape} and target spectra {ts.shape} differ")
    chans = [build_channel_mapping(ss[i], ts[i], epsilon) for i in range(ss.shape[0])]
    n = ss.shape[0]
    return SpectralMapping(
        chans,
        list(source_channels) if source_channels is not None else list(range(n)),
        list(target_channels) if target_channels is not None else list(range(n)),
        epsilon,
        calibration_windows,
        w,
    )


def transform(mapping: SpectralMapping, features) -> np.ndarray:
    """Apply the mapping to features shaped (N, lines) or (windows, N, lines).

    No re-clipping: transformed values may exceed the feature cap.
    """
    f = np.asarray(features.flat if isinstance(features, FeatureVector) else features, dtype=float)
    N, L = mapping.n_channels, mapping.n_lines
    if f.ndim == 1:
        if f.size != N * L:
            raise ValueError(f"feature length {f.size} does not match mapping {N}x{L}")
        f = f.reshape(N, L)
        return np.stack([m.apply(f[i]) for i, m in enumerate(mapping.channels)]).reshape(-1)
    if f.shape[-2:] != (N, L):
        raise ValueError(f"feature shape {f.shape[-2:]} does not match mapping {(N, L)}")
    out = np.empty_like(f)
    for i, m in enumerate(mapping.channels):
        out[..., i, :] = m.apply(f[..., i, :])
    return out


def inverse_transform(mapping: SpectralMapping, features) -> np.ndarray:
    f = np.asarray(features, dtype=float)
    out = np.empty_like(f)
    for i, m in enumerate(mapping.channels):
        out[..., i, :] = m.invert(f[..., i, :])
    return out
