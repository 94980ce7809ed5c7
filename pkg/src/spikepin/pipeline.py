"""Frame-to-prediction pipeline glue shared by training, evaluation and the CLI.

Canonical stage order: grayscale -> histogram equalization -> optional ROI
crop -> zero-mean/unit-variance -> keypoint features -> latency encoding ->
LIF inference.  Feature extraction is by far the dominant cost, so dataset
precomputation can fan out over processes; results are collected in input
order, keeping everything bit-reproducible regardless of worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import imgio
from .encoding import (
    EncodingConfig,
    SpikeRaster,
    encode_latency,
    normalize_feature_vector,
    spike_steps,
)
from .lif import ForwardTrace, LifNetwork, Prediction, classify, forward
from .preproc import Roi, crop_roi, histogram_equalize, normalize_zmuv, to_grayscale
from .sift import FrameFeatures, SiftConfig, extract_features
from .synth import Manifest
from .training import EncodedDataset


@dataclass(frozen=True)
class PipelineConfig:
    sift: SiftConfig = SiftConfig()
    encoding: EncodingConfig = EncodingConfig()
    roi: Roi | None = None


def preprocess_frame(img: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """u8 grayscale or RGB frame -> normalized float32 ROI."""
    if img.ndim == 3:
        img = to_grayscale(img)
    img = histogram_equalize(img)
    if cfg.roi is not None:
        img = crop_roi(img, cfg.roi)
    return normalize_zmuv(img)


def encode_features(features: FrameFeatures, cfg: PipelineConfig) -> SpikeRaster:
    from .encoding import rasterize

    x = normalize_feature_vector(features.flat)
    return rasterize(encode_latency(x, cfg.encoding), cfg.encoding)


def encode_frame_steps(img: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """Compact per-channel spike steps (int16, -1 silent) for one frame."""
    normalized = preprocess_frame(img, cfg)
    features = extract_features(normalized, cfg.sift)
    x = normalize_feature_vector(features.flat)
    train = encode_latency(x, cfg.encoding)
    return spike_steps(train, cfg.encoding).astype(np.int16)


def steps_to_raster(steps: np.ndarray, cfg: EncodingConfig) -> SpikeRaster:
    matrix = np.zeros((len(steps), cfg.n_steps), dtype=bool)
    fired = steps >= 0
    matrix[np.nonzero(fired)[0], steps[fired].astype(int)] = True
    return SpikeRaster(matrix=matrix)


@dataclass
class PipelineResult:
    prediction: Prediction
    trace: ForwardTrace
    raster_density: float
    n_keypoints: int


class FramePipeline:
    """Bundles a trained network with the preprocessing/encoding configs."""

    def __init__(self, net: LifNetwork, cfg: PipelineConfig):
        self.net = net
        self.cfg = cfg

    def run(self, img: np.ndarray) -> PipelineResult:
        normalized = preprocess_frame(img, self.cfg)
        features = extract_features(normalized, self.cfg.sift)
        raster = encode_features(features, self.cfg)
        trace = forward(raster, self.net)
        return PipelineResult(
            prediction=classify(trace),
            trace=trace,
            raster_density=raster.density(),
            n_keypoints=features.n_real,
        )

    def stages(self) -> list[tuple[str, callable]]:
        """Chained per-frame stages for the latency benchmark."""
        return [
            ("preproc", lambda img: preprocess_frame(img, self.cfg)),
            ("sift", lambda norm: extract_features(norm, self.cfg.sift)),
            ("encode", lambda feats: encode_features(feats, self.cfg)),
            ("snn", lambda raster: classify(forward(raster, self.net))),
        ]


def _encode_path(args: tuple[str, PipelineConfig]) -> np.ndarray:
    path, cfg = args
    return encode_frame_steps(imgio.read_image(path), cfg)


def encode_manifest(
    manifest: Manifest,
    cfg: PipelineConfig,
    split: str | None = None,
    jobs: int = 1,
) -> EncodedDataset:
    """Precompute latency encodings for manifest frames (optionally one split)."""
    entries = manifest.entries if split is None else manifest.split_entries(split)
    if not entries:
        raise ValueError(f"no entries for split {split!r}")
    paths = [str(manifest.resolve(e)) for e in entries]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_encode_path, [(p, cfg) for p in paths], chunksize=8))
    else:
        rows = [_encode_path((p, cfg)) for p in paths]
    steps = np.stack(rows)
    labels = np.array([1 if e.label == "pin_out" else 0 for e in entries], dtype=np.uint8)
    return EncodedDataset(
        steps=steps,
        labels=labels,
        ids=[e.path for e in entries],
        n_steps=cfg.encoding.n_steps,
    )
