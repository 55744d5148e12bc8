import numpy as np
import pytest

from rcm2he.synthgen import PairedSample, PhantomConfig, generate_corpus, generate_phantom
from rcm2he.virtual_he import beer_lambert_he


def _equal_samples(a, b):
    return (np.array_equal(a.rcm, b.rcm) and np.array_equal(a.h_target, b.h_target)
            and np.array_equal(a.e_target, b.e_target)
            and np.array_equal(a.rgb_target, b.rgb_target))


class TestGeneratePhantom:
    def test_empty_nuclei_range(self):
        cfg = PhantomConfig(image_size=48, nuclei_count_range=(0, 0), seed=5)
        sample = generate_phantom(cfg)
        assert not sample.h_target.any()
        expected = beer_lambert_he(np.zeros_like(sample.e_target), sample.e_target)
        assert np.array_equal(sample.rgb_target, expected)

    def test_same_seed_bit_identical(self):
        cfg = PhantomConfig(image_size=40, seed=99)
        assert _equal_samples(generate_phantom(cfg), generate_phantom(cfg))

    def test_different_seed_differs(self):
        a = generate_phantom(PhantomConfig(image_size=40, seed=1))
        b = generate_phantom(PhantomConfig(image_size=40, seed=2))
        assert not _equal_samples(a, b)

    def test_artifact_threshold_matches_mask(self):
        cfg = PhantomConfig(image_size=128, speckle_strength=0.0,
                            artifact_enabled=True, seed=21)
        sample = generate_phantom(cfg)
        threshold = np.percentile(sample.rcm, 99.9)
        assert np.array_equal(sample.rcm >= threshold, sample.artifact_mask)
        assert sample.artifact_mask.any()

    def test_fields_aligned_and_in_range(self):
        sample = generate_phantom(PhantomConfig(image_size=64, seed=3))
        assert sample.rcm.shape == sample.h_target.shape == sample.e_target.shape
        assert sample.rgb_target.shape == (64, 64, 3)
        for field in (sample.rcm, sample.h_target, sample.e_target):
            assert field.min() >= 0.0 and field.max() <= 1.0

    def test_nuclei_interiors_brighter_than_background(self):
        sample = generate_phantom(PhantomConfig(image_size=64, seed=17))
        interiors = sample.h_target[sample.h_target > 0.5]
        background = sample.h_target[sample.h_target == 0.0]
        assert interiors.size and background.size
        assert interiors.mean() > background.mean()

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            PhantomConfig(nuclei_count_range=(5, 2))
        with pytest.raises(ValueError):
            PhantomConfig(rcm_mix=(0.0, 0.0))
        with pytest.raises(ValueError):
            PhantomConfig(speckle_strength=1.5)

    def test_misaligned_sample_rejected(self, rng):
        with pytest.raises(ValueError, match="co-registered"):
            PairedSample(rcm=rng.random((4, 4)), h_target=rng.random((5, 5)),
                         e_target=rng.random((4, 4)),
                         rgb_target=rng.random((4, 4, 3)), patient_id="p0")


class TestGenerateCorpus:
    def test_uneven_multipatient_corpus(self):
        counts = [8, 225, 15, 32, 105, 12, 11, 103, 40, 5, 13, 9, 45, 12, 70]
        cfg = PhantomConfig(image_size=16, nuclei_count_range=(1, 2),
                            nuclei_radius_range=(2.0, 3.0), seed=4)
        corpus = generate_corpus(cfg, patients=15, images_per_patient=counts)
        assert len(corpus) == 705
        per_patient = {}
        for s in corpus:
            per_patient[s.patient_id] = per_patient.get(s.patient_id, 0) + 1
        assert sorted(per_patient.values()) == sorted(counts)

    def test_singleton(self):
        corpus = generate_corpus(PhantomConfig(image_size=16, seed=1), 1, 1)
        assert len(corpus) == 1
        assert corpus[0].patient_id == "p000"

    def test_same_master_seed_identical(self):
        cfg = PhantomConfig(image_size=24, seed=5)
        a = generate_corpus(cfg, 2, 3)
        b = generate_corpus(cfg, 2, 3)
        assert all(_equal_samples(x, y) for x, y in zip(a, b))

    def test_count_mismatch_error(self):
        with pytest.raises(ValueError, match="counts"):
            generate_corpus(PhantomConfig(seed=0), 3, [1, 2])

    def test_bad_patient_count(self):
        with pytest.raises(ValueError):
            generate_corpus(PhantomConfig(seed=0), 0, 1)
