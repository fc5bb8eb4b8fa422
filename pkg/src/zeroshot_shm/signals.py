"""Channel records, CSV ingestion and analysis-window segmentation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class ChannelRecord:
    channel_id: int
    samples: np.ndarray
    sampling_rate_hz: float = 1.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise DataError(f"channel {self.channel_id}: samples must be a non-empty 1-D sequence")
        if not self.sampling_rate_hz > 0:
            raise DataError(f"channel {self.channel_id}: sampling rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class AnalysisWindow:
    channel_id: int
    start_index: int
    values: np.ndarray

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class DatasetSplit:
    da_fraction: float = 0.1
    tune_fraction: float = 0.4
    test_fraction: float = 0.5

    def __post_init__(self):
        fr = (self.da_fraction, self.tune_fraction, self.test_fraction)
        if any(not 0 < f < 1 for f in fr):
            raise ValueError(f"split fractions must lie in (0, 1), got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_csv_table(path) -> tuple[list[str] | None, np.ndarray]:
    """Parse a channel table. A non-numeric first row is taken as the header."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(header) if header is not None else len(rows[0])
    data = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i + 1} has {len(row)} columns, expected {width} (ragged columns)")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at row {i + 1}, column {j}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: non-numeric cell {cell!r} at row {i + 1}, column {j}")
            data[i, j] = v
    return header, data


def load_records(path, channel_ids, sampling_rate_hz: float = 1.0) -> list[ChannelRecord]:
    """One record per requested column index, in the requested order."""
    _, data = read_csv_table(path)
    records = []
    for cid in channel_ids:
        if not 0 <= cid < data.shape[1]:
            raise DataError(f"{path}: column {cid} missing (file has {data.shape[1]} columns)")
        records.append(ChannelRecord(int(cid), data[:, cid].copy(), sampling_rate_hz))
    return records


def load_channel_names(path) -> dict[int, str]:
    """Optional JSON mapping from column index to channel name."""
    raw = json.loads(Path(path).read_text())
    return {int(k): str(v) for k, v in raw.items()}


def write_records_csv(path, records: list[ChannelRecord], header: bool = True) -> None:
    lengths = {len(r) for r in records}
    if len(lengths) != 1:
        raise DataError("records must share one length")
    table = np.column_stack([r.samples for r in records])
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow([f"ch{r.channel_id}" for r in records])
        for row in table:
            writer.writerow([repr(float(v)) for v in row])


def window_record(record: ChannelRecord, w: int) -> list[AnalysisWindow]:
    """Cut a record into contiguous, non-overlapping windows of w samples."""
    if w < 2 or w % 2:
        raise ValueError(f"window length must be even and >= 2, got {w}")
    count = len(record) // w
    if count == 0:
        raise DataError(f"channel {record.channel_id}: {len(record)} samples is shorter than window {w}")
    return [
        AnalysisWindow(record.channel_id, k * w, record.samples[k * w:(k + 1) * w].copy())
        for k in range(count)
    ]


def window_matrix(records: list[ChannelRecord], w: int) -> np.ndarray:
    """Windows of all channels as an array (n_windows, n_channels, w)."""
    per_channel = [window_record(r, w) for r in records]
    counts = {len(ws) for ws in per_channel}
    if len(counts) != 1:
        raise DataError("channels yield different window counts")
    return np.stack([[win.values for win in ws] for ws in per_channel], axis=1)


def split_counts(total: int, split: DatasetSplit) -> tuple[int, int, int]:
    n_da = int(math.floor(split.da_fraction * total + 1e-9))
    n_tune = int(math.floor(split.tune_fraction * total + 1e-9))
    return n_da, n_tune, total - n_da - n_tune


def split_chronologically(windows, split: DatasetSplit):
    """Chronological DA / tune / test segments; rounding remainder goes to test."""
    total = len(windows)
    if total < 3:
        raise DataError(f"need at least 3 windows to split, got {total}")
    n_da, n_tune, n_test = split_counts(total, split)
    for name, n in (("DA", n_da), ("tune", n_tune), ("test", n_test)):
        if n == 0:
            raise DataError(f"{name} segment is empty for {total} windows with split {split}")
    return windows[:n_da], windows[n_da:n_da + n_tune], windows[n_da + n_tune:]
