"""Shared fixtures-in-spirit: synthetic textures and keypoint matching helpers."""

import numpy as np
from scipy.ndimage import gaussian_filter

from spikepin.sift import extract_features


def textured_image(n=128, seed=0):
    """Multi-scale smoothed-noise texture that yields a healthy keypoint crop."""
    rng = np.random.default_rng(seed)
    img = np.zeros((n, n))
    for sigma, amp in ((1.0, 1.0), (2.0, 1.5), (4.0, 2.0), (8.0, 2.5)):
        img += amp * gaussian_filter(rng.standard_normal((n, n)), sigma)
    img -= img.min()
    img /= img.max()
    return img.astype(np.float32)


def rotation_match_rate(img, cfg):
    """Fraction of ratio-test-accepted NN matches that land on the rot90 target.

    Returns (accepted, correct).  np.rot90 is lossless, so descriptor changes
    come purely from the algorithm's rotation handling.
    """
    n = img.shape[0]
    feats = extract_features(img, cfg)
    feats_rot = extract_features(np.ascontiguousarray(np.rot90(img)), cfg)
    d1 = feats.descriptors[feats.pad_mask]
    d2 = feats_rot.descriptors[feats_rot.pad_mask]
    k2 = feats_rot.keypoints
    accepted = correct = 0
    for i, kp in enumerate(feats.keypoints):
        dists = np.linalg.norm(d2 - d1[i], axis=1)
        if len(dists) < 2:
            continue
        order = np.argsort(dists)
        if dists[order[0]] < 0.8 * dists[order[1]]:
            accepted += 1
            match = k2[order[0]]
            # np.rot90 (counterclockwise): (x, y) -> (y, n-1-x)
            if abs(match.x - kp.y) <= 3.0 and abs(match.y - (n - 1 - kp.x)) <= 3.0:
                correct += 1
    return accepted, correct


def scale_shift_rate(img, cfg):
    """Position-match keypoints against the 2x-upsampled image.

    Returns (matched, octave_shifted): pairs within 4 px of the doubled
    position, and how many of those moved one octave up in scale.
    """
    from spikepin.sift import _bilinear_double

    feats = extract_features(img, cfg)
    doubled = _bilinear_double(img.astype(np.float64)).astype(np.float32)
    feats2 = extract_features(doubled, cfg)
    matched = shifted = 0
    for kp in feats.keypoints:
        best, best_dist = None, np.inf
        for m in feats2.keypoints:
            d = np.hypot(m.x - 2.0 * kp.x, m.y - 2.0 * kp.y)
            if d < best_dist:
                best_dist, best = d, m
        if best is not None and best_dist <= 4.0:
            matched += 1
            if abs(np.log2(best.scale / kp.scale) - 1.0) <= 0.5:
                shifted += 1
    return matched, shifted
