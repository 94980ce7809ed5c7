"""Evaluation harness: full-pipeline test runs, spike accounting, run reports.

Metric aggregation runs twice through independent code paths (vectorized
boolean algebra vs a per-frame if/elif recount) and the two must agree
exactly before a report is produced.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bench import LatencyReport
from .lif import LifNetwork, classify, count_spike_activity, forward
from .metrics import ClassMetrics, ConfusionMatrix, PrCurvePoint, class_metrics, pr_curve
from .pipeline import PipelineConfig, encode_manifest, steps_to_raster
from .synth import Manifest


@dataclass
class SpikeDensityReport:
    input_raster: float
    lif_layers: list[float]
    lif_aggregate: float
    overall: float

    def as_dict(self) -> dict:
        return {
            "input_raster": self.input_raster,
            "lif_layers": self.lif_layers,
            "lif_aggregate": self.lif_aggregate,
            "overall": self.overall,
        }


@dataclass
class EvalResult:
    confusion: ConfusionMatrix
    metrics: ClassMetrics
    average_precision: float | None
    pr_points: list[PrCurvePoint]
    densities: SpikeDensityReport
    scores: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    split: str
    n_frames: int


def _recount_by_hand(y_true, y_pred) -> ConfusionMatrix:
    """Independent per-frame tally; deliberately not the vectorized path."""
    tp = fp = tn = fn = 0
    for truth, pred in zip(y_true.tolist(), y_pred.tolist()):
        if truth and pred:
            tp += 1
        elif not truth and pred:
            fp += 1
        elif not truth and not pred:
            tn += 1
        else:
            fn += 1
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


def evaluate(
    net: LifNetwork,
    manifest: Manifest,
    cfg: PipelineConfig,
    split: str = "test",
    jobs: int = 1,
) -> EvalResult:
    """Run the full pipeline over one split and aggregate metrics and densities."""
    dataset = encode_manifest(manifest, cfg, split=split, jobs=jobs)
    if dataset.n_channels != net.input_size:
        raise ValueError(
            f"feature channels ({dataset.n_channels}) do not match the "
            f"network input size ({net.input_size})"
        )

    n = len(dataset)
    y_pred = np.zeros(n, dtype=bool)
    scores = np.zeros(n)
    input_density = np.zeros(n)
    lif_layers = None
    lif_aggregate = np.zeros(n)
    overall = np.zeros(n)
    for i in range(n):
        raster = steps_to_raster(dataset.steps[i], cfg.encoding)
        trace = forward(raster, net)
        pred = classify(trace)
        y_pred[i] = pred.label.value == "pin_out"
        scores[i] = pred.score
        act = count_spike_activity(trace)
        input_density[i] = act.input_density
        if lif_layers is None:
            lif_layers = np.zeros((n, len(act.layer_densities)))
        lif_layers[i] = act.layer_densities
        lif_aggregate[i] = act.lif_aggregate
        overall[i] = act.overall

    y_true = dataset.labels.astype(bool)
    confusion = ConfusionMatrix.from_labels(y_true, y_pred)
    recount = _recount_by_hand(y_true, y_pred)
    if confusion != recount:
        raise AssertionError(
            f"metric cross-check failed: {confusion.as_dict()} vs {recount.as_dict()}"
        )
    metrics = class_metrics(confusion)

    ap = None
    pr_points: list[PrCurvePoint] = []
    if 0 < y_true.sum() < n:
        pr_points, ap = pr_curve(scores, y_true)

    densities = SpikeDensityReport(
        input_raster=float(input_density.mean()),
        lif_layers=[float(v) for v in lif_layers.mean(axis=0)],
        lif_aggregate=float(lif_aggregate.mean()),
        overall=float(overall.mean()),
    )
    return EvalResult(
        confusion=confusion,
        metrics=metrics,
        average_precision=ap,
        pr_points=pr_points,
        densities=densities,
        scores=scores,
        y_true=y_true,
        y_pred=y_pred,
        split=split,
        n_frames=n,
    )


@dataclass
class RunReport:
    """Machine-readable record of an evaluation run.

    Deterministic by construction: no wall-clock content, so identical runs
    hash identically.  The latency report is attached only by the benchmark
    path, which is inherently non-deterministic.
    """

    config_echo: dict
    seed: int
    manifest_hash: str
    model_hash: str
    split: str
    n_frames: int
    confusion: dict
    metrics: dict
    average_precision: float | None
    pr_points: list[dict]
    spike_densities: dict
    latency: dict | None = None

    @classmethod
    def from_eval(
        cls,
        result: EvalResult,
        net: LifNetwork,
        manifest: Manifest,
        config_echo: dict,
        seed: int,
        latency: LatencyReport | None = None,
    ) -> "RunReport":
        return cls(
            config_echo=config_echo,
            seed=seed,
            manifest_hash=manifest.sha256(),
            model_hash=net.content_hash(),
            split=result.split,
            n_frames=result.n_frames,
            confusion=result.confusion.as_dict(),
            metrics=result.metrics.as_dict(),
            average_precision=result.average_precision,
            pr_points=[vars(p) for p in result.pr_points],
            spike_densities=result.densities.as_dict(),
            latency=latency.as_dict() if latency is not None else None,
        )

    def as_dict(self) -> dict:
        return {
            "config": self.config_echo,
            "seed": self.seed,
            "manifest_hash": self.manifest_hash,
            "model_hash": self.model_hash,
            "split": self.split,
            "n_frames": self.n_frames,
            "confusion_matrix": self.confusion,
            "metrics": self.metrics,
            "average_precision": self.average_precision,
            "pr_points": self.pr_points,
            "spike_densities": self.spike_densities,
            "latency": self.latency,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def write(self, path: str | os.PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    def write_metrics_csv(self, path: str | os.PathLike) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerow(["accuracy", self.metrics["accuracy"]])
            for cls_name in ("pin_out", "pin_ok"):
                for m in ("precision", "recall", "f1"):
                    writer.writerow([f"{m}_{cls_name}", self.metrics[cls_name][m]])
            for k, v in self.confusion.items():
                writer.writerow([f"confusion_{k}", v])
            if self.average_precision is not None:
                writer.writerow(["average_precision", self.average_precision])

    def write_pr_csv(self, path: str | os.PathLike) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "precision", "recall"])
            for p in self.pr_points:
                writer.writerow([p["threshold"], p["precision"], p["recall"]])
