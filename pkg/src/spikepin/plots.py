"""Figure rendering to PNG files: PR curve, latency bars, raster heat map,
keypoint overlay.  Uses matplotlib Figure objects directly so no interactive
backend is ever touched."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Circle

from .bench import LatencyReport
from .encoding import SpikeRaster
from .metrics import PrCurvePoint
from .sift import Keypoint


def _save(fig: Figure, path: str | os.PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")


def save_pr_curve(
    points: list[PrCurvePoint], ap: float, path: str | os.PathLike
) -> None:
    fig = Figure(figsize=(5, 4))
    ax = fig.add_subplot(111)
    recall = [p.recall for p in points]
    precision = [p.precision for p in points]
    ax.step(recall, precision, where="post", color="tab:blue")
    ax.set_xlabel("recall (pin_out)")
    ax.set_ylabel("precision (pin_out)")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.set_title(f"precision-recall, AP = {ap:.3f}")
    _save(fig, path)


def save_latency_bars(report: LatencyReport, path: str | os.PathLike) -> None:
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(111)
    names = list(report.stages) + ["total"]
    medians = [report.stages[n].median_ms for n in report.stages] + [
        report.total.median_ms
    ]
    p95s = [report.stages[n].p95_ms for n in report.stages] + [report.total.p95_ms]
    x = np.arange(len(names))
    ax.bar(x - 0.2, medians, width=0.4, label="median", color="tab:blue")
    ax.bar(x + 0.2, p95s, width=0.4, label="p95", color="tab:orange")
    ax.set_xticks(x, names)
    ax.set_ylabel("per-frame time (ms)")
    ax.set_title(f"latency breakdown ({report.n_measured} frames)")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    _save(fig, path)


def save_raster_heatmap(raster: SpikeRaster, path: str | os.PathLike, max_channels: int = 12800) -> None:
    """Spike-time heat map: channels on y, simulation steps on x."""
    m = raster.matrix[:max_channels]
    fig = Figure(figsize=(6, 5))
    ax = fig.add_subplot(111)
    chans, steps = np.nonzero(m)
    ax.scatter(steps, chans, s=0.5, c=steps, cmap="plasma", marker=".")
    ax.set_xlim(0, m.shape[1])
    ax.set_ylim(m.shape[0], 0)
    ax.set_xlabel("step")
    ax.set_ylabel("channel")
    ax.set_title(f"spike raster, density {raster.density():.4%}")
    _save(fig, path)


def save_keypoint_overlay(
    img: np.ndarray, keypoints: list[Keypoint], path: str | os.PathLike
) -> None:
    """Grayscale frame with circles scaled by keypoint scale."""
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot(111)
    ax.imshow(img, cmap="gray", interpolation="nearest")
    for kp in keypoints:
        ax.add_patch(
            Circle(
                (kp.x, kp.y),
                radius=max(kp.scale * 2.0, 1.0),
                fill=False,
                color="yellow",
                linewidth=0.8,
            )
        )
        ax.plot(
            [kp.x, kp.x + np.cos(kp.orientation) * kp.scale * 2.0],
            [kp.y, kp.y + np.sin(kp.orientation) * kp.scale * 2.0],
            color="red",
            linewidth=0.6,
        )
    ax.set_axis_off()
    _save(fig, path)
