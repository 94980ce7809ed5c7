"""Scale-space keypoint detection and 128-D gradient descriptors.

A from-scratch, vectorized implementation: Gaussian pyramid, difference-of-
Gaussian extrema with batched quadratic subpixel refinement, contrast and
edge-ratio rejection, 36-bin orientation assignment, and 4x4x8 trilinearly
binned descriptors finished with normalize / clamp-at-0.2 / renormalize.

Input images are affinely rescaled to [0, 1] before pyramid construction so
the contrast threshold keeps a fixed meaning regardless of the caller's
normalization (the pipeline feeds zero-mean/unit-variance frames).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
from scipy.ndimage import gaussian_filter

TAU = 2.0 * np.pi

DESCRIPTOR_SIZE = 128


@dataclass(frozen=True)
class SiftConfig:
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    assumed_blur: float = 0.5
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    n_orientation_bins: int = 36
    peak_ratio: float = 0.8
    border: int = 5
    max_refine_steps: int = 5
    max_keypoints: int = 100
    # doubling the input buys small-scale keypoints at ~4x the cost; off to
    # protect the latency budget
    upsample_first_octave: bool = False
    descriptor_width: int = 4
    descriptor_bins: int = 8
    descriptor_scale_factor: float = 3.0
    descriptor_clamp: float = 0.2

    def __post_init__(self) -> None:
        if self.scales_per_octave < 1:
            raise ValueError("scales_per_octave must be >= 1")
        if self.max_keypoints < 1:
            raise ValueError("max_keypoints must be >= 1")


@dataclass
class Keypoint:
    x: float  # subpixel, original-image pixels
    y: float
    octave: int
    layer: float  # refined level position within the octave
    scale: float  # absolute blur, original-image pixels
    orientation: float = 0.0  # radians in [0, 2*pi)
    response: float = 0.0  # |refined DoG contrast|


@dataclass
class ScaleSpace:
    config: SiftConfig
    octaves: list[np.ndarray]  # each (s+3, h, w) float32
    dog: list[np.ndarray]  # each (s+2, h, w) float32
    first_octave_scale: float = 1.0  # 0.5 when the input was doubled
    _grad_cache: dict = field(default_factory=dict, repr=False)

    def coord_factor(self, octave: int) -> float:
        """Grid-to-original-image coordinate multiplier for an octave."""
        return (2.0**octave) * self.first_octave_scale

    def level_sigma(self, octave: int, layer: float) -> float:
        cfg = self.config
        return (
            cfg.base_sigma
            * 2.0 ** (octave + layer / cfg.scales_per_octave)
            * self.first_octave_scale
        )

    def gradients(self, octave: int, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Cached (magnitude, orientation) of a Gaussian level."""
        key = (octave, level)
        if key not in self._grad_cache:
            img = self.octaves[octave][level]
            dy, dx = np.gradient(img.astype(np.float64))
            mag = np.hypot(dx, dy)
            ori = np.mod(np.arctan2(dy, dx), TAU)
            self._grad_cache[key] = (mag, ori)
        return self._grad_cache[key]


@dataclass
class FrameFeatures:
    """Fixed-size descriptor block in spatial scan order, zero-padded at the tail."""

    descriptors: np.ndarray  # (n_max, 128) float32
    pad_mask: np.ndarray  # (n_max,) bool, True = real keypoint
    keypoints: list[Keypoint]

    @property
    def flat(self) -> np.ndarray:
        return self.descriptors.reshape(-1)

    @property
    def n_real(self) -> int:
        return int(self.pad_mask.sum())


def _bilinear_double(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    ys = np.arange(2 * h) * 0.5
    xs = np.arange(2 * w) * 0.5
    y0 = np.minimum(ys.astype(int), h - 1)
    x0 = np.minimum(xs.astype(int), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def build_scale_space(img: np.ndarray, cfg: SiftConfig | None = None) -> ScaleSpace:
    """Gaussian pyramid and DoG stacks; octaves halve until below 8x8.

    Per-octave level i carries absolute blur base_sigma * 2^(o + i/s); DoG
    level i is G(i+1) - G(i).
    """
    cfg = cfg or SiftConfig()
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D image")
    if min(arr.shape) < 32:
        raise ValueError(f"image too small for scale space: {arr.shape}")

    lo, hi = float(arr.min()), float(arr.max())
    arr = np.zeros_like(arr) if hi - lo < 1e-12 else (arr - lo) / (hi - lo)

    first_scale = 1.0
    init_blur = cfg.assumed_blur
    if cfg.upsample_first_octave:
        arr = _bilinear_double(arr).astype(np.float32)
        init_blur = 2.0 * cfg.assumed_blur
        first_scale = 0.5

    s = cfg.scales_per_octave
    n_levels = s + 3
    sigmas_rel = cfg.base_sigma * 2.0 ** (np.arange(n_levels) / s)
    increments = np.sqrt(np.maximum(sigmas_rel[1:] ** 2 - sigmas_rel[:-1] ** 2, 0.0))

    seed_blur = np.sqrt(max(cfg.base_sigma**2 - init_blur**2, 0.01))
    seed = gaussian_filter(arr, seed_blur, mode="nearest")

    octaves: list[np.ndarray] = []
    dogs: list[np.ndarray] = []
    while min(seed.shape) >= 8:
        levels = np.empty((n_levels,) + seed.shape, dtype=np.float32)
        levels[0] = seed
        for i, inc in enumerate(increments, start=1):
            levels[i] = gaussian_filter(levels[i - 1], inc, mode="nearest")
        octaves.append(levels)
        dogs.append(levels[1:] - levels[:-1])
        base = levels[s]
        h, w = base.shape
        seed = base[: 2 * (h // 2) : 2, : 2 * (w // 2) : 2]
    return ScaleSpace(config=cfg, octaves=octaves, dog=dogs, first_octave_scale=first_scale)


def _grad_hess(d: np.ndarray, l: np.ndarray, y: np.ndarray, x: np.ndarray):
    """Batched 3-D gradient and Hessian of the DoG stack at voxel centers."""
    c = d[l, y, x]
    gx = 0.5 * (d[l, y, x + 1] - d[l, y, x - 1])
    gy = 0.5 * (d[l, y + 1, x] - d[l, y - 1, x])
    gl = 0.5 * (d[l + 1, y, x] - d[l - 1, y, x])
    dxx = d[l, y, x + 1] - 2 * c + d[l, y, x - 1]
    dyy = d[l, y + 1, x] - 2 * c + d[l, y - 1, x]
    dll = d[l + 1, y, x] - 2 * c + d[l - 1, y, x]
    dxy = 0.25 * (
        d[l, y + 1, x + 1] - d[l, y + 1, x - 1] - d[l, y - 1, x + 1] + d[l, y - 1, x - 1]
    )
    dxl = 0.25 * (
        d[l + 1, y, x + 1] - d[l + 1, y, x - 1] - d[l - 1, y, x + 1] + d[l - 1, y, x - 1]
    )
    dyl = 0.25 * (
        d[l + 1, y + 1, x] - d[l + 1, y - 1, x] - d[l - 1, y + 1, x] + d[l - 1, y - 1, x]
    )
    grad = np.stack([gx, gy, gl], axis=1)
    hess = np.empty((len(c), 3, 3))
    hess[:, 0, 0] = dxx
    hess[:, 1, 1] = dyy
    hess[:, 2, 2] = dll
    hess[:, 0, 1] = hess[:, 1, 0] = dxy
    hess[:, 0, 2] = hess[:, 2, 0] = dxl
    hess[:, 1, 2] = hess[:, 2, 1] = dyl
    return grad, hess


def detect_and_refine(space: ScaleSpace, cfg: SiftConfig | None = None) -> list[Keypoint]:
    """3x3x3 DoG extrema, quadratically refined and filtered.

    Candidates are rejected when the refined |DoG| falls below the contrast
    threshold or the 2x2 spatial Hessian fails trace^2/det < (r+1)^2/r.
    """
    cfg = cfg or space.config
    s = cfg.scales_per_octave
    b = cfg.border
    pre_thresh = 0.5 * cfg.contrast_threshold
    edge_limit = (cfg.edge_ratio + 1.0) ** 2 / cfg.edge_ratio
    keypoints: list[Keypoint] = []

    for o, dog64 in enumerate(space.dog):
        n_lvl, h, w = dog64.shape
        if h <= 2 * b + 2 or w <= 2 * b + 2:
            continue
        d = dog64.astype(np.float64)
        core = d[1 : s + 1, b : h - b, b : w - b]
        cand = np.abs(core) > pre_thresh
        if not cand.any():
            continue
        lvl, yy, xx = np.nonzero(cand)
        lvl += 1
        yy += b
        xx += b
        center = d[lvl, yy, xx]
        is_max = np.ones(len(lvl), dtype=bool)
        is_min = np.ones(len(lvl), dtype=bool)
        for dl, dy, dx in product((-1, 0, 1), repeat=3):
            if dl == dy == dx == 0:
                continue
            v = d[lvl + dl, yy + dy, xx + dx]
            is_max &= center >= v
            is_min &= center <= v
        keep = (is_max & (center > 0)) | (is_min & (center < 0))
        if not keep.any():
            continue

        l = lvl[keep].astype(np.int64)
        y = yy[keep].astype(np.int64)
        x = xx[keep].astype(np.int64)
        n = len(l)
        active = np.ones(n, dtype=bool)
        done = np.zeros(n, dtype=bool)
        final_off = np.zeros((n, 3))
        final_val = np.zeros(n)

        for _ in range(cfg.max_refine_steps):
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            grad, hess = _grad_hess(d, l[idx], y[idx], x[idx])
            det = np.linalg.det(hess)
            solvable = np.abs(det) > 1e-30
            off = np.zeros_like(grad)
            if solvable.any():
                off[solvable] = -np.linalg.solve(
                    hess[solvable], grad[solvable][..., None]
                )[..., 0]
            converged = solvable & np.all(np.abs(off) < 0.5, axis=1)

            fin = idx[converged]
            final_off[fin] = off[converged]
            final_val[fin] = d[l[fin], y[fin], x[fin]] + 0.5 * np.einsum(
                "ki,ki->k", grad[converged], off[converged]
            )
            done[fin] = True
            active[fin] = False
            active[idx[~solvable]] = False

            moving = idx[solvable & ~converged]
            if len(moving):
                step = np.clip(np.rint(off[solvable & ~converged]), -3, 3).astype(int)
                x[moving] += step[:, 0]
                y[moving] += step[:, 1]
                l[moving] += step[:, 2]
                oob = (
                    (x[moving] < b)
                    | (x[moving] >= w - b)
                    | (y[moving] < b)
                    | (y[moving] >= h - b)
                    | (l[moving] < 1)
                    | (l[moving] > s)
                )
                active[moving[oob]] = False
        # unconverged candidates are dropped with the actives

        ok = done & (np.abs(final_val) >= cfg.contrast_threshold)
        if not ok.any():
            continue
        sel = np.nonzero(ok)[0]
        _, hess2 = _grad_hess(d, l[sel], y[sel], x[sel])
        tr = hess2[:, 0, 0] + hess2[:, 1, 1]
        det2 = hess2[:, 0, 0] * hess2[:, 1, 1] - hess2[:, 0, 1] ** 2
        edge_ok = (det2 > 0) & (tr**2 / det2 < edge_limit)
        sel = sel[edge_ok]

        factor = space.coord_factor(o)
        for i in sel:
            layer = float(l[i] + final_off[i, 2])
            keypoints.append(
                Keypoint(
                    x=float((x[i] + final_off[i, 0]) * factor),
                    y=float((y[i] + final_off[i, 1]) * factor),
                    octave=o,
                    layer=layer,
                    scale=space.level_sigma(o, layer),
                    response=float(abs(final_val[i])),
                )
            )
    return keypoints


def assign_orientation(kp: Keypoint, space: ScaleSpace) -> list[Keypoint]:
    """Gaussian-weighted 36-bin orientation histogram around the keypoint.

    Emits one keypoint per smoothed-histogram peak at or above 0.8x the
    maximum, with parabolic peak interpolation.
    """
    cfg = space.config
    factor = space.coord_factor(kp.octave)
    gx = kp.x / factor
    gy = kp.y / factor
    level = int(np.clip(round(kp.layer), 0, cfg.scales_per_octave + 2))
    mag, ori = space.gradients(kp.octave, level)
    h, w = mag.shape

    sigma_rel = kp.scale / factor
    sig_w = 1.5 * sigma_rel
    radius = max(1, int(round(3.0 * sig_w)))
    cx, cy = int(round(gx)), int(round(gy))
    x0, x1 = max(cx - radius, 1), min(cx + radius, w - 2)
    y0, y1 = max(cy - radius, 1), min(cy + radius, h - 2)
    if x0 > x1 or y0 > y1:
        return []

    win_m = mag[y0 : y1 + 1, x0 : x1 + 1]
    win_o = ori[y0 : y1 + 1, x0 : x1 + 1]
    ys = np.arange(y0, y1 + 1)[:, None] - gy
    xs = np.arange(x0, x1 + 1)[None, :] - gx
    weights = np.exp(-(ys**2 + xs**2) / (2.0 * sig_w**2)) * win_m

    nbins = cfg.n_orientation_bins
    bins = np.rint(win_o * (nbins / TAU)).astype(int) % nbins
    hist = np.bincount(bins.ravel(), weights=weights.ravel(), minlength=nbins)
    kernel_sm = (
        6 * hist
        + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
        + np.roll(hist, 2)
        + np.roll(hist, -2)
    ) / 16.0

    peak_max = kernel_sm.max()
    if peak_max <= 0.0:
        return []
    left = np.roll(kernel_sm, 1)
    right = np.roll(kernel_sm, -1)
    peaks = np.nonzero((kernel_sm > left) & (kernel_sm > right))[0]

    out = []
    for k in peaks:
        if kernel_sm[k] < cfg.peak_ratio * peak_max:
            continue
        denom = left[k] - 2.0 * kernel_sm[k] + right[k]
        interp = k if denom == 0 else k + 0.5 * (left[k] - right[k]) / denom
        theta = float((interp % nbins) * (TAU / nbins))
        out.append(replace(kp, orientation=theta % TAU))
    return out


def finish_descriptor(raw: np.ndarray, clamp: float = 0.2) -> np.ndarray:
    """Normalize, clamp at `clamp`, renormalize; degenerate input stays zero."""
    norm = float(np.linalg.norm(raw))
    if norm < 1e-12:
        return np.zeros_like(raw, dtype=np.float32)
    v = np.minimum(raw / norm, clamp)
    return (v / np.linalg.norm(v)).astype(np.float32)


def compute_descriptor(kp: Keypoint, space: ScaleSpace) -> np.ndarray:
    """4x4 spatial cells x 8 orientation bins of rotation-normalized gradients."""
    cfg = space.config
    width = cfg.descriptor_width
    nbins = cfg.descriptor_bins
    factor = space.coord_factor(kp.octave)
    gx = kp.x / factor
    gy = kp.y / factor
    level = int(np.clip(round(kp.layer), 0, cfg.scales_per_octave + 2))
    mag, ori = space.gradients(kp.octave, level)
    h, w = mag.shape

    sigma_rel = kp.scale / factor
    hist_width = cfg.descriptor_scale_factor * sigma_rel
    half = int(round(hist_width * np.sqrt(2.0) * (width + 1) * 0.5))
    half = min(half, int(np.hypot(h, w)))
    cx, cy = int(round(gx)), int(round(gy))
    x0, x1 = max(cx - half, 1), min(cx + half, w - 2)
    y0, y1 = max(cy - half, 1), min(cy + half, h - 2)
    out_len = width * width * nbins
    if x0 > x1 or y0 > y1:
        return np.zeros(out_len, dtype=np.float32)

    win_m = mag[y0 : y1 + 1, x0 : x1 + 1].ravel()
    win_o = ori[y0 : y1 + 1, x0 : x1 + 1].ravel()
    fy = (np.arange(y0, y1 + 1)[:, None] - gy) + np.zeros((1, x1 - x0 + 1))
    fx = (np.arange(x0, x1 + 1)[None, :] - gx) + np.zeros((y1 - y0 + 1, 1))
    fy = fy.ravel()
    fx = fx.ravel()

    cos_a = np.cos(kp.orientation)
    sin_a = np.sin(kp.orientation)
    rx = (cos_a * fx + sin_a * fy) / hist_width
    ry = (-sin_a * fx + cos_a * fy) / hist_width
    rbin = ry + 0.5 * width - 0.5
    cbin = rx + 0.5 * width - 0.5
    valid = (rbin > -1) & (rbin < width) & (cbin > -1) & (cbin < width)
    if not valid.any():
        return np.zeros(out_len, dtype=np.float32)

    rbin = rbin[valid]
    cbin = cbin[valid]
    weight = np.exp(-(rx[valid] ** 2 + ry[valid] ** 2) / (2.0 * (0.5 * width) ** 2))
    weight = weight * win_m[valid]
    obin = np.mod(win_o[valid] - kp.orientation, TAU) * (nbins / TAU)

    r0 = np.floor(rbin).astype(int)
    c0 = np.floor(cbin).astype(int)
    o0 = np.floor(obin).astype(int)
    fr = rbin - r0
    fc = cbin - c0
    fo = obin - o0

    side = width + 2
    hist = np.zeros(side * side * nbins)
    for dr, dc, do in product((0, 1), repeat=3):
        contrib = (
            weight
            * (fr if dr else 1.0 - fr)
            * (fc if dc else 1.0 - fc)
            * (fo if do else 1.0 - fo)
        )
        flat_idx = ((r0 + 1 + dr) * side + (c0 + 1 + dc)) * nbins + (o0 + do) % nbins
        hist += np.bincount(flat_idx, weights=contrib, minlength=hist.size)

    inner = hist.reshape(side, side, nbins)[1:-1, 1:-1, :].ravel()
    return finish_descriptor(inner, cfg.descriptor_clamp)


def _selection_key(kp: Keypoint):
    """Largest |response| first; ties resolve to smaller (y, x), then angle."""
    return (-kp.response, round(kp.y), round(kp.x), kp.orientation)


def _spatial_key(kp: Keypoint):
    """Row-major scan order on rounded coordinates; ties to larger response."""
    return (round(kp.y), round(kp.x), -kp.response, kp.orientation)


def select_top_n(
    keypoints: list[Keypoint],
    descriptors: list[np.ndarray] | np.ndarray,
    n: int = 100,
) -> FrameFeatures:
    """Retain the n strongest keypoints, reordered spatially, zero-padded to n."""
    if len(descriptors) != len(keypoints):
        raise ValueError("descriptors must align 1:1 with keypoints")
    order = sorted(range(len(keypoints)), key=lambda i: _selection_key(keypoints[i]))
    chosen = sorted(order[:n], key=lambda i: _spatial_key(keypoints[i]))
    block = np.zeros((n, DESCRIPTOR_SIZE), dtype=np.float32)
    pad_mask = np.zeros(n, dtype=bool)
    for slot, i in enumerate(chosen):
        block[slot] = descriptors[i]
        pad_mask[slot] = True
    return FrameFeatures(
        descriptors=block,
        pad_mask=pad_mask,
        keypoints=[keypoints[i] for i in chosen],
    )


def extract_features(img: np.ndarray, cfg: SiftConfig | None = None) -> FrameFeatures:
    """Full chain: scale space -> detect -> orient -> describe -> top-N block.

    Descriptors are computed only for the response-ranked survivors; the
    result is identical to describing every keypoint first because ranking
    never looks at descriptor content.
    """
    cfg = cfg or SiftConfig()
    space = build_scale_space(img, cfg)
    raw = detect_and_refine(space, cfg)
    raw.sort(key=_selection_key)
    raw = raw[: 2 * cfg.max_keypoints]
    oriented = [ok for kp in raw for ok in assign_orientation(kp, space)]
    oriented.sort(key=_selection_key)
    oriented = oriented[: cfg.max_keypoints]
    descriptors = [compute_descriptor(kp, space) for kp in oriented]
    return select_top_n(oriented, descriptors, cfg.max_keypoints)


def dump_keypoints_csv(keypoints: list[Keypoint], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "scale", "orientation", "response"])
        for kp in keypoints:
            writer.writerow(
                [f"{kp.x:.3f}", f"{kp.y:.3f}", f"{kp.scale:.4f}",
                 f"{kp.orientation:.5f}", f"{kp.response:.6f}"]
            )
