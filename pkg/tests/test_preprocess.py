import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcm2he.imagecore import ImageStack
from rcm2he.preprocess import (SplitError, build_dataset, extract_surface, inpaint,
                               load_mask, load_samples, mask_from_calibration,
                               read_manifest, save_mask, write_manifest)
from rcm2he.synthgen import PairedSample


def _sample(patient, size=4, seed=0):
    rng = np.random.default_rng(seed)
    return PairedSample(rcm=rng.random((size, size)), h_target=rng.random((size, size)),
                        e_target=rng.random((size, size)),
                        rgb_target=rng.random((size, size, 3)), patient_id=patient)


class TestExtractSurface:
    def test_depth_one_passthrough(self, rng):
        layer = rng.random((12, 12))
        out, depth = extract_surface(ImageStack(layer[None]), smooth_radius=3)
        assert np.array_equal(out, layer)
        assert not depth.any()

    def test_step_phantom_recovers_depth(self, rng):
        depth_count, h, w = 9, 40, 40
        # smooth true surface so the median filter cannot disagree much
        base = rng.integers(2, 6)
        z_true = np.full((h, w), base, dtype=np.int64)
        z_true[: h // 2] += 2
        stack = np.zeros((depth_count, h, w))
        for z in range(depth_count):
            stack[z] = np.where(z >= z_true, 100.0, 10.0)
        stack += rng.normal(0, 0.1, stack.shape)
        _, depth = extract_surface(ImageStack(stack), smooth_radius=2)
        within_one = np.abs(depth - z_true) <= 1
        assert within_one.mean() >= 0.99

    def test_constant_stack_all_zero_tiebreak(self):
        stack = np.ones((5, 8, 8)) * 3.0
        _, depth = extract_surface(ImageStack(stack), smooth_radius=1)
        assert not depth.any()

    def test_output_values_come_from_stack(self, rng):
        stack = rng.random((6, 20, 20))
        out, _ = extract_surface(ImageStack(stack), smooth_radius=1)
        membership = (stack == out[None]).any(axis=0)
        assert membership.all()


class TestInpaint:
    def test_uniform_fill_is_exact(self):
        img = np.full((16, 16), 7.5)
        mask = np.zeros((16, 16), dtype=bool)
        mask[5:9, 6:10] = True
        out = inpaint(img, mask)
        assert np.array_equal(out, img)

    def test_empty_mask_noop(self, rng):
        img = rng.random((10, 10))
        out = inpaint(img, np.zeros((10, 10), dtype=bool))
        assert np.array_equal(out, img)

    def test_linear_ramp_is_recovered(self):
        h, w = 32, 32
        img = np.tile(np.arange(h)[:, None] / h, (1, w))
        mask = np.zeros((h, w), dtype=bool)
        mask[10:20, 12:22] = True
        out = inpaint(img, mask, tol=1e-7, max_iter=50_000)
        assert np.abs(out[mask] - img[mask]).max() < 1e-3

    def test_all_true_mask_error(self):
        with pytest.raises(ValueError, match="entire image"):
            inpaint(np.zeros((4, 4)), np.ones((4, 4), dtype=bool))

    def test_shape_mismatch_error(self):
        with pytest.raises(ValueError):
            inpaint(np.zeros((4, 4)), np.zeros((5, 5), dtype=bool))

    def test_unmasked_preserved_and_max_principle(self, rng):
        for seed in range(5):
            local = np.random.default_rng(seed)
            img = local.random((24, 24)) * 10 - 3
            mask = local.random((24, 24)) < 0.2
            mask[0, :] = False   # keep some anchors
            out = inpaint(img, mask)
            assert np.array_equal(out[~mask], img[~mask])
            assert out.min() >= img.min() - 1e-12
            assert out.max() <= img.max() + 1e-12


class TestMask:
    def test_calibration_threshold_and_roundtrip(self, tmp_path, rng):
        img = rng.random((50, 50)) * 0.5
        img[10:13, 20:23] = 1.0
        mask = mask_from_calibration(img, percentile=99.9)
        assert mask.sum() == 9
        assert mask[10:13, 20:23].all()
        save_mask(mask, tmp_path / "m.png")
        assert np.array_equal(load_mask(tmp_path / "m.png"), mask)


class TestBuildDataset:
    def test_many_patient_partition(self):
        counts = [8, 225, 15, 32, 105, 12, 11, 103, 40, 5, 13, 9, 45, 12, 70]
        samples = []
        for p, n in enumerate(counts):
            samples.extend(_sample(f"p{p:02d}") for _ in range(n))
        assert len(samples) == 705
        split = build_dataset(samples, ["p01", "p07"])
        assert len(split.train) + len(split.test) == 705
        assert not (split.train_patients & split.test_patients)
        assert len(split.test) == 225 + 103

    def test_all_patients_as_test_error(self):
        samples = [_sample("a"), _sample("b")]
        with pytest.raises(SplitError, match="whole corpus"):
            build_dataset(samples, ["a", "b"])

    def test_unknown_patient_error(self):
        with pytest.raises(SplitError, match="unknown"):
            build_dataset([_sample("a"), _sample("b")], ["zzz"])

    def test_single_patient_error(self):
        with pytest.raises(SplitError):
            build_dataset([_sample("a"), _sample("a")], ["a"])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 8), st.integers(1, 4), st.data())
    def test_patient_disjointness_property(self, n_patients, per_patient, data):
        samples = [_sample(f"p{p}") for p in range(n_patients) for _ in range(per_patient)]
        k = data.draw(st.integers(1, n_patients - 1))
        test_ids = [f"p{p}" for p in range(k)]
        split = build_dataset(samples, test_ids)
        assert not (split.train_patients & split.test_patients)
        assert len(split.train) + len(split.test) == len(samples)


class TestManifest:
    def test_round_trip_and_exclusion(self, tmp_path):
        entries = [{"patient_id": "p0", "sample_id": f"s{i}", "rcm": f"i{i}.tiff"}
                   for i in range(4)]
        write_manifest(entries, tmp_path / "m.jsonl")
        assert read_manifest(tmp_path / "m.jsonl") == entries
        kept = read_manifest(tmp_path / "m.jsonl", exclude_ids=["s1", "s3"])
        assert [e["sample_id"] for e in kept] == ["s0", "s2"]

    def test_load_samples(self, tmp_path, rng):
        from rcm2he.imagecore import save_gray16, save_rgb8
        sample = _sample("p0", size=8, seed=3)
        save_gray16(sample.rcm, tmp_path / "s_rcm.tiff")
        save_gray16(sample.h_target, tmp_path / "s_h.tiff")
        save_gray16(sample.e_target, tmp_path / "s_e.tiff")
        save_rgb8(sample.rgb_target, tmp_path / "s_rgb.png")
        write_manifest([{"patient_id": "p0", "sample_id": "s", "rcm": "s_rcm.tiff",
                         "h": "s_h.tiff", "e": "s_e.tiff", "rgb": "s_rgb.png"}],
                       tmp_path / "m.jsonl")
        loaded, = load_samples(tmp_path / "m.jsonl")
        assert loaded.patient_id == "p0"
        assert np.abs(loaded.rcm - sample.rcm).max() <= 0.5 / 65535
        assert np.abs(loaded.rgb_target - sample.rgb_target).max() <= 0.5 / 255
