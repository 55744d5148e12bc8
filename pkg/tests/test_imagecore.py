import numpy as np
import pytest
from PIL import Image

from rcm2he.imagecore import (ImageIOError, ImageStack, crop_offsets, load_stack,
                              normalize, random_crop_set, save_gray16, save_rgb8,
                              save_stack, load_gray, load_rgb, to_float)

from reference_impls import percentile_sorted


class TestStackIO:
    def test_single_page_tiff_is_depth_one(self, tmp_path, rng):
        img = rng.integers(0, 65536, size=(16, 20), dtype=np.uint16)
        Image.fromarray(img).save(tmp_path / "one.tiff")
        stack = load_stack(tmp_path / "one.tiff")
        assert stack.depth == 1
        assert np.array_equal(stack.layers[0], img)

    def test_round_trip_bit_identical(self, tmp_path, rng):
        layers = rng.integers(0, 65536, size=(5, 24, 31), dtype=np.uint16)
        save_stack(ImageStack(layers), tmp_path / "s.tiff")
        back = load_stack(tmp_path / "s.tiff")
        assert back.layers.dtype == np.uint16
        assert np.array_equal(back.layers, layers)

    def test_directory_stack_lexicographic(self, tmp_path, rng):
        imgs = rng.integers(0, 255, size=(3, 8, 8), dtype=np.uint8)
        for i, img in enumerate(imgs):
            Image.fromarray(img).save(tmp_path / f"{i:03d}.png")
        stack = load_stack(tmp_path)
        assert stack.depth == 3
        assert np.array_equal(stack.layers, imgs)

    def test_mixed_dimensions_error(self, tmp_path):
        Image.fromarray(np.zeros((64, 64), dtype=np.uint8)).save(tmp_path / "a.png")
        Image.fromarray(np.zeros((32, 32), dtype=np.uint8)).save(tmp_path / "b.png")
        with pytest.raises(ImageIOError, match="mixed"):
            load_stack(tmp_path)

    def test_missing_path_error(self, tmp_path):
        with pytest.raises(ImageIOError):
            load_stack(tmp_path / "nope.tiff")

    def test_empty_directory_error(self, tmp_path):
        with pytest.raises(ImageIOError):
            load_stack(tmp_path)

    def test_non_grayscale_error(self, tmp_path):
        rgb = np.zeros((8, 8, 3), dtype=np.uint8)
        Image.fromarray(rgb).save(tmp_path / "c.png")
        with pytest.raises(ImageIOError, match="grayscale"):
            load_stack(tmp_path)

    def test_rgb_png_round_trip(self, tmp_path, rng):
        img = rng.random((9, 7, 3))
        save_rgb8(img, tmp_path / "x.png")
        back = load_rgb(tmp_path / "x.png")
        assert np.abs(back - img).max() <= 0.5 / 255

    def test_gray16_round_trip(self, tmp_path, rng):
        img = rng.random((9, 7))
        save_gray16(img, tmp_path / "g.tiff")
        back = to_float(load_gray(tmp_path / "g.tiff"))
        assert np.abs(back - img).max() <= 0.5 / 65535


class TestNormalize:
    def test_constant_image_returns_zeros_with_warning(self):
        img = np.full((10, 10), 42.0)
        with pytest.warns(UserWarning, match="degenerate"):
            out = normalize(img, 1, 99)
        assert np.array_equal(out, np.zeros((10, 10)))

    def test_full_range_endpoints(self):
        img = np.array([[0, 128], [200, 255]], dtype=np.uint8)
        out = normalize(img, 0, 100)
        assert out[0, 0] == 0.0
        assert out[1, 1] == 1.0

    def test_matches_sort_percentile_oracle(self, rng):
        img = rng.integers(0, 65536, size=(40, 40)).astype(np.float64)
        lo = percentile_sorted(img, 1)
        hi = percentile_sorted(img, 99)
        expected = np.clip((img - lo) / (hi - lo), 0, 1)
        out = normalize(img, 1, 99)
        assert np.abs(out - expected).max() < 1e-12

    def test_idempotent_on_normalized_output(self, rng):
        out = normalize(rng.random((30, 30)) * 1000, 1, 99)
        again = normalize(out, 0, 100)
        assert np.abs(again - out).max() <= 1e-7

    @pytest.mark.parametrize("lo,hi", [(-1, 99), (99, 1), (0, 101), (50, 50)])
    def test_bad_percentiles(self, lo, hi):
        with pytest.raises(ValueError):
            normalize(np.zeros((4, 4)), lo, hi)


class TestRandomCrop:
    def test_aligned_patch_batch(self, rng):
        a = rng.random((512, 512))
        b = rng.random((512, 512, 3))
        groups = random_crop_set([a, b], size=256, count=10, seed=3)
        assert len(groups) == 10
        for pa, pb in groups:
            assert pa.shape == (256, 256)
            assert pb.shape == (256, 256, 3)

    def test_full_frame_is_identity(self, rng):
        a = rng.random((64, 64))
        (patch,), = random_crop_set([a], size=64, count=1, seed=0)
        assert np.array_equal(patch, a)

    def test_same_seed_same_offsets(self):
        assert crop_offsets(100, 90, 32, 5, seed=9) == crop_offsets(100, 90, 32, 5, seed=9)

    def test_copies_stay_aligned(self, rng):
        a = rng.random((128, 128))
        for pa, pb in random_crop_set([a, a.copy()], size=48, count=6, seed=1):
            assert np.array_equal(pa, pb)

    def test_size_too_large(self, rng):
        with pytest.raises(ValueError, match="exceeds"):
            random_crop_set([rng.random((32, 32))], size=64, count=1, seed=0)

    def test_mismatched_inputs(self, rng):
        with pytest.raises(ValueError, match="disagree"):
            random_crop_set([rng.random((32, 32)), rng.random((16, 16))],
                            size=8, count=1, seed=0)
