"""spikepin: keypoint-to-spike anomaly classification for barrier pin inspection.

Library + CLI covering the full pipeline: frame preprocessing, scale-space
keypoint features, time-to-first-spike encoding, a leaky integrate-and-fire
classifier, surrogate-gradient training, a procedural dataset generator, and
an evaluation / latency-benchmark harness.
"""

__version__ = "0.1.0"
