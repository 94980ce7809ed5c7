"""Single-threaded per-frame latency benchmark with per-stage breakdown.

Timing uses the monotonic perf counter; an explicit warmup pass amortizes
caches and allocator behavior before anything is recorded.  Stage chains are
pluggable so the harness can benchmark any pipeline composition.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

TIMER_WARN_THRESHOLD_S = 1e-4  # 0.1 ms


@dataclass(frozen=True)
class StageStats:
    median_ms: float
    mean_ms: float
    p95_ms: float

    @classmethod
    def from_samples(cls, samples_ms: np.ndarray) -> "StageStats":
        return cls(
            median_ms=float(np.median(samples_ms)),
            mean_ms=float(np.mean(samples_ms)),
            p95_ms=float(np.percentile(samples_ms, 95)),
        )

    def as_dict(self) -> dict:
        return {"median_ms": self.median_ms, "mean_ms": self.mean_ms, "p95_ms": self.p95_ms}


@dataclass
class LatencyReport:
    stages: dict[str, StageStats]
    total: StageStats
    warmup: int
    n_measured: int
    hardware: str
    timer_resolution_ms: float
    timer_warning: bool
    samples_ms: dict[str, list[float]] = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict:
        return {
            "stages": {k: v.as_dict() for k, v in self.stages.items()},
            "total": self.total.as_dict(),
            "warmup": self.warmup,
            "n_measured": self.n_measured,
            "hardware": self.hardware,
            "timer_resolution_ms": self.timer_resolution_ms,
            "timer_warning": self.timer_warning,
        }

    def write_json(self, path: str | os.PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path: str | os.PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage", "median_ms", "mean_ms", "p95_ms"])
            for name, stats in self.stages.items():
                writer.writerow(
                    [name, f"{stats.median_ms:.4f}", f"{stats.mean_ms:.4f}", f"{stats.p95_ms:.4f}"]
                )
            writer.writerow(
                ["total", f"{self.total.median_ms:.4f}", f"{self.total.mean_ms:.4f}",
                 f"{self.total.p95_ms:.4f}"]
            )


def hardware_descriptor() -> str:
    return (
        f"{platform.platform()}; {platform.processor() or platform.machine()}; "
        f"python {platform.python_version()}"
    )


def bench_latency(
    stages: Sequence[tuple[str, Callable]],
    frames: Sequence,
    warmup: int = 20,
    reps: int = 1,
) -> LatencyReport:
    """Run the stage chain over frames `reps` times, timing each stage per frame.

    Requires at least 50 measured frames after warmup.  Strictly sequential:
    per-frame numbers are honest single-thread latencies.
    """
    if not stages:
        raise ValueError("need at least one stage")
    if not frames:
        raise ValueError("need at least one frame")
    measured = len(frames) * reps
    if measured < 50:
        raise ValueError(
            f"need >= 50 measured frames after warmup, got {measured}"
        )

    resolution_s = time.get_clock_info("perf_counter").resolution
    timer_warning = resolution_s > TIMER_WARN_THRESHOLD_S

    for i in range(warmup):
        x = frames[i % len(frames)]
        for _, fn in stages:
            x = fn(x)

    names = [name for name, _ in stages]
    samples: dict[str, list[float]] = {name: [] for name in names}
    totals: list[float] = []
    for _ in range(reps):
        for frame in frames:
            x = frame
            t_frame0 = time.perf_counter_ns()
            for name, fn in stages:
                t0 = time.perf_counter_ns()
                x = fn(x)
                samples[name].append((time.perf_counter_ns() - t0) / 1e6)
            totals.append((time.perf_counter_ns() - t_frame0) / 1e6)

    stage_stats = {
        name: StageStats.from_samples(np.asarray(samples[name])) for name in names
    }
    return LatencyReport(
        stages=stage_stats,
        total=StageStats.from_samples(np.asarray(totals)),
        warmup=warmup,
        n_measured=measured,
        hardware=hardware_descriptor(),
        timer_resolution_ms=resolution_s * 1e3,
        timer_warning=timer_warning,
        samples_ms={**samples, "total": totals},
    )
