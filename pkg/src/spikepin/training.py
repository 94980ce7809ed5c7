"""Surrogate-gradient training: BPTT unrolling, Adam, and the epoch loop.

Forward passes use hard thresholds; the backward pass swaps the Heaviside
derivative for the fast-sigmoid surrogate 1 / (1 + k|u - theta|)^2 and
detaches the reset term (straight-through), the usual cure for reset
instability.  A smooth mode replaces the hard spike with
f(x) = x / (1 + k|x|) -- whose exact derivative is the surrogate -- and
differentiates the reset fully, making backprop checkable against central
finite differences.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .lif import DivergenceError, ForwardTrace, LifNetwork

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    lr_decay: float = 0.95
    batch_size: int = 64
    epochs: int = 50
    surrogate_slope: float = 25.0
    seed: int = 0
    class_weighted: bool = False

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.surrogate_slope > 0:
            raise ValueError("surrogate_slope must be positive")


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    lr: float
    wall_seconds: float


@dataclass
class EncodedDataset:
    """Latency-encoded frames: per-channel spike step (-1 = silent) plus labels."""

    steps: np.ndarray  # (N, channels) int16
    labels: np.ndarray  # (N,) uint8, 1 = pin_out
    ids: list[str]
    n_steps: int

    def __post_init__(self) -> None:
        if self.steps.ndim != 2 or len(self.labels) != len(self.steps):
            raise ValueError("steps and labels must align")
        if len(self.ids) != len(self.steps):
            raise ValueError("ids and steps must align")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def n_channels(self) -> int:
        return self.steps.shape[1]

    def subset(self, indices: np.ndarray) -> "EncodedDataset":
        return EncodedDataset(
            steps=self.steps[indices],
            labels=self.labels[indices],
            ids=[self.ids[i] for i in indices],
            n_steps=self.n_steps,
        )


def surrogate_spike_grad(u_minus_theta, k: float = 25.0):
    """Fast-sigmoid derivative surrogate for the Heaviside spike."""
    return 1.0 / (1.0 + k * np.abs(u_minus_theta)) ** 2


def smooth_spike(u_minus_theta, k: float = 25.0):
    """f(x) = x / (1 + k|x|); its exact derivative is surrogate_spike_grad."""
    return u_minus_theta / (1.0 + k * np.abs(u_minus_theta))


def loss_bce(counts, label: int, n_steps: int) -> float:
    """Binary cross-entropy on the softmax-over-rates PIN_OUT probability.

    label is 1 for pin_out, 0 for pin_ok; counts are (c_ok, c_out).
    """
    c = np.asarray(counts, dtype=np.float64)
    rates = c / n_steps
    p_out = 1.0 / (1.0 + np.exp(-(rates[1] - rates[0])))
    p_out = min(max(p_out, BCE_CLAMP), 1.0 - BCE_CLAMP)
    y = float(label)
    return float(-(y * np.log(p_out) + (1.0 - y) * np.log(1.0 - p_out)))


@dataclass
class BatchTrace:
    """Unrolled batched forward pass retained for BPTT."""

    input_matrix: sp.csr_matrix  # (B*T, channels) one-hot input spikes
    potentials: list[np.ndarray]  # per layer (T, B, size) pre-reset, float
    spikes: list[np.ndarray]  # per layer (T, B, size) float
    counts: np.ndarray  # (B, 2) float
    n_steps: int
    batch_size: int
    smooth: bool


def _input_spike_matrix(steps: np.ndarray, n_steps: int, n_channels: int) -> sp.csr_matrix:
    batch, chans = np.nonzero(steps >= 0)
    rows = batch.astype(np.int64) * n_steps + steps[batch, chans]
    return sp.csr_matrix(
        (np.ones(len(rows), dtype=np.float32), (rows, chans)),
        shape=(len(steps) * n_steps, n_channels),
    )


def forward_batch(
    steps: np.ndarray,
    net: LifNetwork,
    slope: float = 25.0,
    smooth: bool = False,
    record: bool = True,
) -> BatchTrace:
    """Vectorized forward over a batch of encoded frames.

    Uses the same timing convention as ``lif.forward``: the first layer
    integrates the current input step, each deeper layer the previous step's
    presynaptic spikes.
    """
    steps = np.asarray(steps)
    if steps.ndim != 2 or steps.shape[1] != net.input_size:
        raise ValueError(
            f"expected (B, {net.input_size}) spike steps, got {steps.shape}"
        )
    n_steps = net.n_steps
    batch = len(steps)
    dtype = np.float64 if smooth else np.float32

    s_input = _input_spike_matrix(steps, n_steps, net.input_size)
    first = net.layers[0]
    weights_t = [np.ascontiguousarray(l.weights.T, dtype=dtype) for l in net.layers]
    currents0 = (s_input @ weights_t[0]).reshape(batch, n_steps, first.n_out)
    currents0 = np.ascontiguousarray(currents0.transpose(1, 0, 2))

    potentials: list[np.ndarray] = []
    spikes: list[np.ndarray] = []
    if record:
        for layer in net.layers:
            potentials.append(np.zeros((n_steps, batch, layer.n_out), dtype=dtype))
            spikes.append(np.zeros((n_steps, batch, layer.n_out), dtype=dtype))

    u = [np.zeros((batch, layer.n_out), dtype=dtype) for layer in net.layers]
    prev = [np.zeros((batch, layer.n_out), dtype=dtype) for layer in net.layers]
    counts = np.zeros((batch, net.output_size), dtype=dtype)
    for n in range(n_steps):
        step_spikes: list[np.ndarray] = []
        for li, layer in enumerate(net.layers):
            if li == 0:
                current = currents0[n]
            else:
                current = prev[li - 1] @ weights_t[li]
            u_pre = layer.beta * u[li] + current
            if not np.all(np.isfinite(u_pre)):
                raise DivergenceError("non-finite membrane potential in batch forward")
            if smooth:
                s = smooth_spike(u_pre - layer.threshold, slope)
            else:
                s = (u_pre >= layer.threshold).astype(dtype)
            if layer.reset == "zero":
                u[li] = u_pre * (1.0 - s)
            else:
                u[li] = u_pre - s * layer.threshold
            if record:
                potentials[li][n] = u_pre
                spikes[li][n] = s
            step_spikes.append(s)
        prev = step_spikes
        counts += step_spikes[-1]

    return BatchTrace(
        input_matrix=s_input,
        potentials=potentials,
        spikes=spikes,
        counts=counts,
        n_steps=n_steps,
        batch_size=batch,
        smooth=smooth,
    )


def batch_loss_and_count_grad(
    counts: np.ndarray,
    labels: np.ndarray,
    n_steps: int,
    sample_weights: np.ndarray | None = None,
):
    """Mean BCE over the batch plus dL/dcounts (B, 2)."""
    rates = counts / n_steps
    z = rates[:, 1] - rates[:, 0]
    p_out = 1.0 / (1.0 + np.exp(-z))
    y = labels.astype(np.float64)
    p_clamped = np.clip(p_out, BCE_CLAMP, 1.0 - BCE_CLAMP)
    per_sample = -(y * np.log(p_clamped) + (1.0 - y) * np.log(1.0 - p_clamped))
    w = np.ones(len(counts)) if sample_weights is None else sample_weights
    loss = float(np.mean(w * per_sample))
    dz = w * (p_out - y) / len(counts)
    dcounts = np.stack([-dz, dz], axis=1) / n_steps
    return loss, dcounts


def backward_from_counts(
    trace: BatchTrace, dcounts: np.ndarray, net: LifNetwork, slope: float = 25.0
) -> list[np.ndarray]:
    """BPTT through the recorded batch trace given dL/dcounts.

    Hard traces use the surrogate derivative and a detached reset; smooth
    traces differentiate the reset exactly, so the result matches finite
    differences of the smooth forward.
    """
    if not trace.potentials:
        raise ValueError("trace was recorded with record=False")
    n_steps, batch = trace.n_steps, trace.batch_size
    smooth = trace.smooth
    dtype = trace.potentials[0].dtype

    grads = [np.zeros_like(layer.weights, dtype=dtype) for layer in net.layers]
    n_layers = len(net.layers)

    # dL/d(spikes of layer li) for every step; start with the output layer.
    dspikes = np.broadcast_to(dcounts.astype(dtype), (n_steps, batch, net.output_size)).copy()

    for li in range(n_layers - 1, -1, -1):
        layer = net.layers[li]
        u_pre = trace.potentials[li]
        s = trace.spikes[li]
        g = surrogate_spike_grad(u_pre - layer.threshold, slope)

        du = np.zeros((n_steps, batch, layer.n_out), dtype=dtype)
        carry = np.zeros((batch, layer.n_out), dtype=dtype)
        for n in range(n_steps - 1, -1, -1):
            if layer.reset == "zero":
                reset_factor = 1.0 - s[n]
                if smooth:
                    du[n] = (dspikes[n] - carry * u_pre[n]) * g[n] + carry * reset_factor
                else:
                    du[n] = dspikes[n] * g[n] + carry * reset_factor
            else:
                if smooth:
                    du[n] = dspikes[n] * g[n] + carry * (1.0 - layer.threshold * g[n])
                else:
                    du[n] = dspikes[n] * g[n] + carry
            carry = layer.beta * du[n]
        if not np.all(np.isfinite(du)):
            raise DivergenceError("non-finite gradient in BPTT")

        if li == 0:
            du_flat = np.ascontiguousarray(du.transpose(1, 0, 2)).reshape(
                batch * n_steps, layer.n_out
            )
            grads[0] = np.asarray((trace.input_matrix.T @ du_flat).T, dtype=dtype)
        else:
            # presynaptic spikes arrive with a one-step delay
            grads[li] = (
                du[1:].reshape(-1, layer.n_out).T
                @ trace.spikes[li - 1][: n_steps - 1].reshape(-1, layer.n_in)
            )
            dspikes = np.zeros((n_steps, batch, layer.n_in), dtype=dtype)
            dspikes[: n_steps - 1] = du[1:] @ layer.weights.astype(dtype)
    return grads


def backward_bptt(
    trace: ForwardTrace, label: int, net: LifNetwork, cfg: TrainConfig
) -> list[np.ndarray]:
    """Single-frame gradients of the BCE loss w.r.t. every weight matrix."""
    batch_trace = BatchTrace(
        input_matrix=sp.csr_matrix(
            (
                np.ones(len(trace.input_events[0]), dtype=np.float32),
                (trace.input_events[1], trace.input_events[0]),
            ),
            shape=(trace.n_steps, trace.input_channels),
        ),
        potentials=[p[:, None, :].astype(np.float32) for p in trace.potentials],
        spikes=[s[:, None, :].astype(np.float32) for s in trace.spikes],
        counts=trace.counts[None, :].astype(np.float64),
        n_steps=trace.n_steps,
        batch_size=1,
        smooth=False,
    )
    _, dcounts = batch_loss_and_count_grad(
        batch_trace.counts, np.array([label]), trace.n_steps
    )
    return backward_from_counts(batch_trace, dcounts, net, cfg.surrogate_slope)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: LifNetwork) -> "AdamState":
        return cls(
            m=[np.zeros_like(layer.weights) for layer in net.layers],
            v=[np.zeros_like(layer.weights) for layer in net.layers],
        )


def adam_step(
    weights: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
) -> list[np.ndarray]:
    """Standard bias-corrected Adam update; mutates and returns the weights."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for w, g, m, v in zip(weights, grads, state.m, state.v, strict=True):
        g32 = np.asarray(g, dtype=w.dtype)
        m *= state.beta1
        m += (1.0 - state.beta1) * g32
        v *= state.beta2
        v += (1.0 - state.beta2) * (g32 * g32)
        w -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
    return weights


def evaluate_encoded(
    dataset: EncodedDataset, net: LifNetwork, batch_size: int = 256
) -> tuple[float, float, np.ndarray]:
    """(mean BCE, accuracy, counts) of hard-spike inference over a dataset."""
    all_counts = np.zeros((len(dataset), 2))
    for start in range(0, len(dataset), batch_size):
        idx = slice(start, min(start + batch_size, len(dataset)))
        trace = forward_batch(dataset.steps[idx], net, record=False)
        all_counts[idx] = trace.counts
    loss, _ = batch_loss_and_count_grad(all_counts, dataset.labels, net.n_steps)
    # tie counts classify as pin_out, matching lif.classify
    preds = (all_counts[:, 1] >= all_counts[:, 0]).astype(np.uint8)
    accuracy = float(np.mean(preds == dataset.labels))
    return loss, accuracy, all_counts


def train(
    train_set: EncodedDataset,
    val_set: EncodedDataset,
    net: LifNetwork,
    cfg: TrainConfig,
    checkpoint_path: str | os.PathLike | None = None,
    checkpoint_meta: dict | None = None,
    progress: Callable[[EpochReport], None] | None = None,
) -> tuple[LifNetwork, list[EpochReport]]:
    """Fixed-epoch loop with per-epoch lr decay; keeps the best-validation weights.

    lr at epoch e is lr * decay^(e-1).  Shuffling is driven by the config
    seed, so identical seeds and datasets reproduce identical checkpoints.
    On divergence a DivergenceError carrying the partial reports is raised.
    """
    if train_set.n_channels != net.input_size:
        raise ValueError("dataset channel count does not match the network")
    reports: list[EpochReport] = []
    if cfg.epochs == 0:
        if checkpoint_path is not None:
            net.save(checkpoint_path, meta=checkpoint_meta)
        return net, reports

    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_network(net)
    weights = [layer.weights for layer in net.layers]

    sample_weights = None
    if cfg.class_weighted:
        n = len(train_set)
        n_out = int(train_set.labels.sum())
        n_ok = n - n_out
        per_class = {0: n / (2.0 * max(n_ok, 1)), 1: n / (2.0 * max(n_out, 1))}
        sample_weights = np.array([per_class[int(y)] for y in train_set.labels])

    best_val = np.inf
    best_weights = net.copy_weights()
    best_epoch = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            lr = cfg.lr * cfg.lr_decay ** (epoch - 1)
            perm = rng.permutation(len(train_set))
            total = 0.0
            for start in range(0, len(perm), cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                trace = forward_batch(
                    train_set.steps[idx], net, slope=cfg.surrogate_slope
                )
                sw = sample_weights[idx] if sample_weights is not None else None
                loss, dcounts = batch_loss_and_count_grad(
                    trace.counts, train_set.labels[idx], net.n_steps, sw
                )
                grads = backward_from_counts(trace, dcounts, net, cfg.surrogate_slope)
                adam_step(weights, grads, state, lr)
                total += loss * len(idx)
            train_loss = total / len(train_set)
            val_loss, val_acc, _ = evaluate_encoded(val_set, net)
            if not np.isfinite(train_loss) or not np.isfinite(val_loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            report = EpochReport(
                epoch=epoch,
                train_loss=train_loss,
                val_loss=val_loss,
                val_accuracy=val_acc,
                lr=lr,
                wall_seconds=time.perf_counter() - t0,
            )
            reports.append(report)
            if progress is not None:
                progress(report)
            if val_loss < best_val:
                best_val = val_loss
                best_weights = net.copy_weights()
                best_epoch = epoch
    except DivergenceError as err:
        err.reports = reports  # type: ignore[attr-defined]
        raise

    net.set_weights(best_weights)
    if checkpoint_path is not None:
        meta = dict(checkpoint_meta or {})
        meta.setdefault("best_epoch", best_epoch)
        meta.setdefault("best_val_loss", best_val)
        net.save(checkpoint_path, meta=meta)
    return net, reports


def write_epoch_csv(reports: list[EpochReport], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "train_loss", "val_loss", "val_accuracy", "lr", "wall_seconds"]
        )
        for r in reports:
            writer.writerow(
                [r.epoch, f"{r.train_loss:.8f}", f"{r.val_loss:.8f}",
                 f"{r.val_accuracy:.6f}", f"{r.lr:.10f}", f"{r.wall_seconds:.3f}"]
            )
