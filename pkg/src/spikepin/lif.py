"""Discrete-time feedforward leaky integrate-and-fire network.

Membrane dynamics per step: u[n] = beta * u[n-1] + W @ s[n]; a neuron fires
when its pre-reset potential reaches the threshold, then resets (to zero by
default, or by threshold subtraction).  The first LIF layer integrates the
input raster column of the current step; each deeper layer integrates the
spikes its predecessor emitted on the previous step, so activity crosses one
layer boundary per step.

Classification compares cumulative output spike counts over the window;
ties resolve to the unsafe class so the detector fails safe.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .encoding import SpikeRaster
from .preproc import Label

CHECKPOINT_FORMAT = "spikepin-checkpoint"
CHECKPOINT_VERSION = 1

RESET_MODES = ("zero", "subtract")


class DivergenceError(RuntimeError):
    """Raised when membrane state or gradients go non-finite."""


@dataclass
class LifLayerParams:
    weights: np.ndarray  # (out, in) float32
    beta: float = 0.9
    threshold: float = 1.0
    reset: str = "zero"

    def __post_init__(self) -> None:
        w = np.asarray(self.weights)
        # float64 preserved so finite-difference verification stays exact
        self.weights = w if w.dtype == np.float64 else w.astype(np.float32)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a 2-D (out, in) matrix")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.threshold > 0.0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.reset not in RESET_MODES:
            raise ValueError(f"reset must be one of {RESET_MODES}, got {self.reset!r}")

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class NetworkConfig:
    """Deployment profile; first size is the input channel count, last the 2 classes."""

    layer_sizes: tuple[int, ...] = (12800, 512, 2)
    beta: float = 0.9
    threshold: float = 1.0
    reset: str = "zero"
    n_steps: int = 100

    def __post_init__(self) -> None:
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if self.layer_sizes[0] != 12800:
            raise ValueError(f"input size must be 12800, got {self.layer_sizes[0]}")
        if self.layer_sizes[-1] != 2:
            raise ValueError(f"output size must be 2, got {self.layer_sizes[-1]}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")


class LifNetwork:
    """Stack of LIF layers plus the simulation step count."""

    def __init__(self, layers: list[LifLayerParams], n_steps: int):
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.n_in != prev.n_out:
                raise ValueError(
                    f"layer size mismatch: {prev.n_out} -> {nxt.n_in}"
                )
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        self.layers = layers
        self.n_steps = n_steps

    @property
    def input_size(self) -> int:
        return self.layers[0].n_in

    @property
    def output_size(self) -> int:
        return self.layers[-1].n_out

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_size,) + tuple(layer.n_out for layer in self.layers)

    @classmethod
    def initialize(
        cls,
        layer_sizes: tuple[int, ...] | list[int],
        rng: np.random.Generator,
        beta: float = 0.9,
        threshold: float = 1.0,
        reset: str = "zero",
        n_steps: int = 100,
    ) -> "LifNetwork":
        """Glorot-uniform weights scaled by 1/threshold so early firing is nonzero."""
        layers = []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out)) / threshold
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(np.float32)
            layers.append(LifLayerParams(w, beta=beta, threshold=threshold, reset=reset))
        return cls(layers, n_steps)

    @classmethod
    def from_config(cls, cfg: NetworkConfig, rng: np.random.Generator) -> "LifNetwork":
        return cls.initialize(
            cfg.layer_sizes,
            rng,
            beta=cfg.beta,
            threshold=cfg.threshold,
            reset=cfg.reset,
            n_steps=cfg.n_steps,
        )

    def copy_weights(self) -> list[np.ndarray]:
        return [layer.weights.copy() for layer in self.layers]

    def set_weights(self, weights: list[np.ndarray]) -> None:
        for layer, w in zip(self.layers, weights, strict=True):
            if w.shape != layer.weights.shape:
                raise ValueError("weight shape mismatch")
            layer.weights = np.asarray(w, dtype=layer.weights.dtype)

    def content_hash(self) -> str:
        """sha256 over the canonical parameter bytes; stable across save/load."""
        h = hashlib.sha256()
        h.update(f"n_steps={self.n_steps}".encode())
        for layer in self.layers:
            h.update(
                f"|{layer.n_out}x{layer.n_in};beta={layer.beta!r};"
                f"theta={layer.threshold!r};reset={layer.reset}".encode()
            )
            h.update(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
        return h.hexdigest()

    def save(self, path: str | os.PathLike, meta: dict | None = None) -> None:
        """Write a versioned JSON checkpoint with bit-exact weight round-trip."""
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "n_steps": self.n_steps,
            "layers": [
                {
                    "shape": list(layer.weights.shape),
                    "beta": layer.beta,
                    "threshold": layer.threshold,
                    "reset": layer.reset,
                    "dtype": "<f4",
                    "weights_b64": base64.b64encode(
                        np.ascontiguousarray(layer.weights, dtype="<f4").tobytes()
                    ).decode("ascii"),
                }
                for layer in self.layers
            ],
            "meta": meta or {},
            "content_hash": self.content_hash(),
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> tuple["LifNetwork", dict]:
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
        layers = []
        for spec in doc["layers"]:
            raw = base64.b64decode(spec["weights_b64"])
            w = np.frombuffer(raw, dtype=spec["dtype"]).reshape(spec["shape"]).copy()
            layers.append(
                LifLayerParams(
                    w, beta=spec["beta"], threshold=spec["threshold"], reset=spec["reset"]
                )
            )
        net = cls(layers, n_steps=doc["n_steps"])
        if net.content_hash() != doc["content_hash"]:
            raise ValueError(f"checkpoint content hash mismatch: {path}")
        return net, doc.get("meta", {})


@dataclass
class ForwardTrace:
    """Per-layer pre-reset potentials and spikes over the simulation window."""

    input_channels: int
    input_events: tuple[np.ndarray, np.ndarray]  # (channel, step) of input spikes
    potentials: list[np.ndarray] = field(default_factory=list)  # (n_steps, size) f32
    spikes: list[np.ndarray] = field(default_factory=list)  # (n_steps, size) bool
    n_steps: int = 0

    @property
    def counts(self) -> np.ndarray:
        """Output spike counts as (c_ok, c_out)."""
        return self.spikes[-1].sum(axis=0).astype(np.int64)


@dataclass
class Prediction:
    label: Label
    counts: tuple[int, int]
    score: float  # (c_out - c_ok) / n_steps


@dataclass
class SpikeActivity:
    input_density: float
    layer_densities: list[float]  # LIF layers, in order
    lif_aggregate: float
    overall: float  # input channels + all LIF neurons


def membrane_update(u: np.ndarray, current: np.ndarray, params: LifLayerParams):
    """One integrate/fire/reset step given an already-weighted input current."""
    u_pre = params.beta * u + current
    if not np.all(np.isfinite(u_pre)):
        raise DivergenceError("non-finite membrane potential")
    fired = u_pre >= params.threshold
    if params.reset == "zero":
        u_post = np.where(fired, 0.0, u_pre)
    else:
        u_post = u_pre - fired * params.threshold
    return u_post.astype(u_pre.dtype, copy=False), u_pre, fired


def lif_step(u: np.ndarray, in_spikes: np.ndarray, params: LifLayerParams):
    """Integrate presynaptic spikes for one step; returns (u', out_spikes)."""
    s = np.asarray(in_spikes)
    if s.shape[-1] != params.n_in:
        raise ValueError(f"expected {params.n_in} input channels, got {s.shape[-1]}")
    current = params.weights @ s.astype(np.float32)
    u_post, _, fired = membrane_update(np.asarray(u, dtype=np.float32), current, params)
    return u_post, fired


def input_currents(raster: SpikeRaster, weights: np.ndarray) -> np.ndarray:
    """(n_steps, out) currents of the first layer via a sparse one-hot product."""
    chans, steps = raster.events()
    onehot = sp.csr_matrix(
        (np.ones(len(chans), dtype=np.float32), (steps, chans)),
        shape=(raster.n_steps, raster.n_channels),
    )
    return onehot @ weights.T


def forward(raster: SpikeRaster, net: LifNetwork) -> ForwardTrace:
    """Run exactly n_steps from zeroed membranes; deterministic."""
    if raster.n_channels != net.input_size:
        raise ValueError(
            f"raster has {raster.n_channels} channels, network expects {net.input_size}"
        )
    if raster.n_steps != net.n_steps:
        raise ValueError(
            f"raster has {raster.n_steps} steps, network expects {net.n_steps}"
        )
    n_steps = net.n_steps
    first = net.layers[0]
    currents0 = input_currents(raster, first.weights)

    trace = ForwardTrace(
        input_channels=raster.n_channels,
        input_events=raster.events(),
        n_steps=n_steps,
    )
    for layer in net.layers:
        trace.potentials.append(np.zeros((n_steps, layer.n_out), dtype=np.float32))
        trace.spikes.append(np.zeros((n_steps, layer.n_out), dtype=bool))

    u = [np.zeros(layer.n_out, dtype=np.float32) for layer in net.layers]
    for n in range(n_steps):
        for li, layer in enumerate(net.layers):
            if li == 0:
                current = currents0[n]
            elif n == 0:
                current = np.zeros(layer.n_out, dtype=np.float32)
            else:
                # one-step synaptic delay between LIF layers
                current = layer.weights @ trace.spikes[li - 1][n - 1].astype(np.float32)
            u[li], u_pre, fired = membrane_update(u[li], current, layer)
            trace.potentials[li][n] = u_pre
            trace.spikes[li][n] = fired
    return trace


def classify(trace: ForwardTrace) -> Prediction:
    """argmax over cumulative output counts; a tie fails safe to PIN_OUT."""
    counts = trace.counts
    c_ok, c_out = int(counts[0]), int(counts[1])
    label = Label.PIN_OK if c_ok > c_out else Label.PIN_OUT
    return Prediction(
        label=label, counts=(c_ok, c_out), score=(c_out - c_ok) / trace.n_steps
    )


def count_spike_activity(trace: ForwardTrace) -> SpikeActivity:
    """Spike densities per layer plus LIF-only and input-inclusive aggregates."""
    n_input_spikes = len(trace.input_events[0])
    input_cells = trace.input_channels * trace.n_steps
    input_density = n_input_spikes / input_cells if input_cells else 0.0

    layer_densities = []
    lif_spikes = 0
    lif_cells = 0
    for s in trace.spikes:
        spikes = int(s.sum())
        cells = s.size
        layer_densities.append(spikes / cells)
        lif_spikes += spikes
        lif_cells += cells
    lif_aggregate = lif_spikes / lif_cells if lif_cells else 0.0
    total = (n_input_spikes + lif_spikes) / (input_cells + lif_cells)
    return SpikeActivity(
        input_density=input_density,
        layer_densities=layer_densities,
        lif_aggregate=lif_aggregate,
        overall=total,
    )
