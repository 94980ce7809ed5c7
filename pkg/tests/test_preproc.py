import numpy as np
import pytest

from spikepin.preproc import (
    Roi,
    crop_roi,
    histogram_equalize,
    normalize_zmuv,
    stride_subsample,
    to_grayscale,
)


def equalize_oracle(img):
    """Independent hand-evaluation of the CDF remap, pixel by pixel."""
    flat = img.ravel()
    n = flat.size
    levels = sorted(set(flat.tolist()))
    if len(levels) == 1:
        return img.copy()
    cdf = {}
    running = 0
    for level in range(256):
        running += int(np.sum(flat == level))
        cdf[level] = running
    cdf_min = cdf[min(levels)]
    out = np.array(
        [round(255.0 * (cdf[int(v)] - cdf_min) / (n - cdf_min)) for v in flat],
        dtype=np.uint8,
    )
    return out.reshape(img.shape)


class TestToGrayscale:
    def test_black_maps_to_black(self):
        rgb = np.zeros((1, 1, 3), dtype=np.uint8)
        assert to_grayscale(rgb)[0, 0] == 0

    def test_white_maps_to_white(self):
        rgb = np.full((1, 1, 3), 255, dtype=np.uint8)
        assert to_grayscale(rgb)[0, 0] == 255

    def test_pure_red(self):
        # round(0.299 * 255) = round(76.245) = 76
        rgb = np.zeros((1, 1, 3), dtype=np.uint8)
        rgb[0, 0, 0] = 255
        assert to_grayscale(rgb)[0, 0] == 76

    def test_zero_sized_rejected(self):
        with pytest.raises(ValueError):
            to_grayscale(np.zeros((0, 4, 3), dtype=np.uint8))

    def test_wrong_channel_count_rejected(self):
        with pytest.raises(ValueError):
            to_grayscale(np.zeros((4, 4, 4), dtype=np.uint8))


class TestHistogramEqualize:
    def test_single_level_unchanged(self):
        img = np.full((5, 5), 7, dtype=np.uint8)
        out = histogram_equalize(img)
        assert np.array_equal(out, img)

    def test_two_extreme_pixels(self):
        # cdf_min = 1, N = 2: 0 -> 0, 255 -> 255
        img = np.array([[0, 255]], dtype=np.uint8)
        assert histogram_equalize(img).tolist() == [[0, 255]]

    def test_two_level_midrange(self):
        # cdf(10)=2, cdf(20)=4, cdf_min=2, N=4:
        #   10 -> round(255*0/2) = 0, 20 -> round(255*2/2) = 255
        img = np.array([[10, 10, 20, 20]], dtype=np.uint8)
        out = histogram_equalize(img)
        assert out.tolist() == [[0, 0, 255, 255]]
        assert np.array_equal(out, equalize_oracle(img))

    def test_matches_oracle_on_random_images(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            img = rng.integers(0, 256, size=(17, 13), dtype=np.uint8)
            assert np.array_equal(histogram_equalize(img), equalize_oracle(img))

    def test_idempotent_within_one_level(self):
        rng = np.random.default_rng(29)
        for _ in range(10):
            img = rng.integers(0, 256, size=(24, 24), dtype=np.uint8)
            once = histogram_equalize(img)
            twice = histogram_equalize(once)
            delta = np.abs(once.astype(int) - twice.astype(int))
            assert delta.max() <= 1


class TestNormalizeZmuv:
    def test_constant_image_is_zeroed(self):
        img = np.full((8, 8), 42, dtype=np.uint8)
        out = normalize_zmuv(img)
        assert out.dtype == np.float32
        assert np.all(out == 0.0)

    def test_two_pixel_example(self):
        # mu = 1, population sigma = 1
        img = np.array([[0, 2]], dtype=np.uint8)
        out = normalize_zmuv(img)
        assert np.allclose(out, [[-1.0, 1.0]])

    def test_statistics(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            img = rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
            if img.min() == img.max():
                continue
            out = normalize_zmuv(img)
            assert abs(float(out.mean())) < 1e-5
            assert abs(float(out.var()) - 1.0) < 1e-4


class TestCropRoi:
    def test_full_image_identity(self):
        rng = np.random.default_rng(5)
        img = rng.integers(0, 256, size=(32, 48), dtype=np.uint8)
        out = crop_roi(img, Roi(0, 0, 48, 32))
        assert np.array_equal(out, img)

    def test_pixel_mapping(self):
        rng = np.random.default_rng(6)
        img = rng.integers(0, 256, size=(64, 64), dtype=np.uint8)
        roi = Roi(5, 3, 16, 16)
        out = crop_roi(img, roi)
        for i in (0, 7, 15):
            for j in (0, 7, 15):
                assert out[i, j] == img[3 + i, 5 + j]

    def test_out_of_bounds_rejected(self):
        img = np.zeros((32, 32), dtype=np.uint8)
        with pytest.raises(IndexError):
            crop_roi(img, Roi(17, 0, 16, 16))

    def test_crop_composition(self):
        rng = np.random.default_rng(7)
        img = rng.integers(0, 256, size=(80, 80), dtype=np.uint8)
        a = Roi(4, 8, 48, 40)
        b = Roi(2, 3, 20, 18)
        composed = Roi(a.x0 + b.x0, a.y0 + b.y0, b.width, b.height)
        assert np.array_equal(crop_roi(crop_roi(img, a), b), crop_roi(img, composed))

    def test_minimum_size_enforced(self):
        with pytest.raises(ValueError):
            Roi(0, 0, 8, 16)


class TestStrideSubsample:
    def test_keep_one_of_four(self):
        frames = [f"f{i}" for i in range(8)]
        assert stride_subsample(frames, 4) == ["f0", "f4"]

    def test_identity(self):
        frames = list(range(5))
        assert stride_subsample(frames, 1) == frames

    def test_short_list(self):
        assert stride_subsample(["a", "b", "c"], 4) == ["a"]

    def test_empty(self):
        assert stride_subsample([], 4) == []

    def test_bad_stride(self):
        with pytest.raises(ValueError):
            stride_subsample([1, 2], 0)


def test_operations_are_pure():
    rng = np.random.default_rng(13)
    img = rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
    before = img.copy()
    histogram_equalize(img)
    normalize_zmuv(img)
    crop_roi(img, Roi(0, 0, 16, 16))
    assert np.array_equal(img, before)
    assert np.array_equal(histogram_equalize(img), histogram_equalize(before))
