"""Time-to-first-spike encoding of feature vectors.

Each channel carries at most one unit-amplitude spike whose latency encodes
feature magnitude: t = T * (1 - x) over a fixed window of T milliseconds, so
stronger features fire earlier.  Zero-valued channels stay silent by default
(padded descriptor slots must not fire); set silent_zero=False to place them
on the final step instead.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncodingConfig:
    window_ms: float = 100.0
    n_steps: int = 100
    silent_zero: bool = True

    def __post_init__(self) -> None:
        if not self.window_ms > 0:
            raise ValueError(f"window_ms must be positive, got {self.window_ms}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt_ms(self) -> float:
        return self.window_ms / self.n_steps


@dataclass
class SpikeTrain:
    """Per-channel spike times in ms; NaN marks a silent channel."""

    times_ms: np.ndarray
    window_ms: float

    @property
    def n_channels(self) -> int:
        return self.times_ms.shape[0]

    def fired(self) -> np.ndarray:
        return ~np.isnan(self.times_ms)


@dataclass
class SpikeRaster:
    """Binary channels x steps event matrix; each row holds at most one spike."""

    matrix: np.ndarray  # (channels, n_steps) bool

    @property
    def n_channels(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_steps(self) -> int:
        return self.matrix.shape[1]

    def density(self) -> float:
        return spike_density(self)

    def events(self) -> tuple[np.ndarray, np.ndarray]:
        """(channel, step) index arrays of all spikes, channel-major order."""
        return np.nonzero(self.matrix)


def normalize_feature_vector(flat: np.ndarray) -> np.ndarray:
    """L2-normalize then rescale so the maximum element is exactly 1.

    The all-zero vector maps to itself.  Inputs must be finite and
    non-negative (descriptor values are).
    """
    arr = np.asarray(flat, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("expected a 1-D feature vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature vector contains NaN or infinity")
    if arr.size and float(arr.min()) < 0:
        raise ValueError("feature vector must be non-negative")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        return np.zeros_like(arr)
    v = arr / norm
    return v / v.max()


def encode_latency(x: np.ndarray, cfg: EncodingConfig) -> SpikeTrain:
    """Apply t = T * (1 - x) channel-wise; x must lie in [0, 1]."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("encoder input contains NaN or infinity")
    if arr.size and (float(arr.min()) < 0.0 or float(arr.max()) > 1.0):
        raise ValueError("encoder input must lie in [0, 1]")
    times = cfg.window_ms * (1.0 - arr)
    if cfg.silent_zero:
        times = np.where(arr == 0.0, np.nan, times)
    return SpikeTrain(times_ms=times, window_ms=cfg.window_ms)


def spike_steps(train: SpikeTrain, cfg: EncodingConfig) -> np.ndarray:
    """Discrete step index per channel (floor(t / dt), clamped); -1 if silent."""
    fired = train.fired()
    steps = np.full(train.n_channels, -1, dtype=np.int32)
    if fired.any():
        idx = np.floor(train.times_ms[fired] / cfg.dt_ms).astype(np.int32)
        steps[fired] = np.clip(idx, 0, cfg.n_steps - 1)
    return steps


def rasterize(train: SpikeTrain, cfg: EncodingConfig) -> SpikeRaster:
    steps = spike_steps(train, cfg)
    matrix = np.zeros((train.n_channels, cfg.n_steps), dtype=bool)
    fired = steps >= 0
    matrix[np.nonzero(fired)[0], steps[fired]] = True
    return SpikeRaster(matrix=matrix)


def spike_density(raster: SpikeRaster) -> float:
    """Fraction of (channel, step) cells carrying a spike."""
    return float(raster.matrix.sum()) / raster.matrix.size


def write_events_csv(raster: SpikeRaster, path: str | os.PathLike) -> None:
    """Compact (channel, step) event list, one spike per row."""
    chans, steps = raster.events()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "step"])
        writer.writerows(zip(chans.tolist(), steps.tolist()))
