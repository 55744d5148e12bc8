"""Procedural phantom data so the full pipeline runs without clinical data.

Each phantom sample carries four pixel-aligned fields: a nuclei channel
(anti-aliased random ellipses), a cytoplasm channel (band-limited noise
shaped by a smooth tissue envelope), a confocal-like input built from a
weighted mix of the two degraded by multiplicative speckle and optionally
one saturated bright-dot artifact, and the Beer-Lambert RGB composite.
All content is a pure function of the seed.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .virtual_he import StainCoefficients, beer_lambert_he


@dataclass(frozen=True)
class PhantomConfig:
    image_size: int = 128
    nuclei_count_range: tuple = (8, 18)
    nuclei_radius_range: tuple = (4.0, 9.0)
    texture_cutoff: float = 0.08          # cycles/pixel of the background texture
    rcm_mix: tuple = (0.65, 0.35)         # (nuclei, cytoplasm) weights in the input
    speckle_strength: float = 0.25        # 0 disables speckle
    speckle_shape: float = 4.0            # gamma shape of the unit-mean noise
    artifact_enabled: bool = False
    artifact_radius: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.nuclei_count_range[0] > self.nuclei_count_range[1]:
            raise ValueError("empty nuclei_count_range")
        if self.nuclei_radius_range[0] > self.nuclei_radius_range[1]:
            raise ValueError("empty nuclei_radius_range")
        if self.rcm_mix[0] + self.rcm_mix[1] <= 0:
            raise ValueError("rcm_mix weights must sum to a positive value")
        if not (0.0 <= self.speckle_strength <= 1.0):
            raise ValueError("speckle_strength must be in [0, 1]")


@dataclass
class PairedSample:
    """Pixel-aligned training record: input, channel targets, RGB target."""

    rcm: np.ndarray
    h_target: np.ndarray
    e_target: np.ndarray
    rgb_target: np.ndarray
    patient_id: str
    sample_id: str = ""
    artifact_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        shapes = {self.rcm.shape, self.h_target.shape, self.e_target.shape,
                  self.rgb_target.shape[:2]}
        if len(shapes) != 1:
            raise ValueError(f"sample fields are not co-registered: {sorted(shapes)}")


def _soft_ellipses(size, rng, count_range, radius_range):
    img = np.zeros((size, size), dtype=np.float64)
    n = int(rng.integers(count_range[0], count_range[1] + 1))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(n):
        r = rng.uniform(*radius_range)
        lo, hi = min(r, size * 0.5), max(size - r, size * 0.5)
        cy = rng.uniform(lo, hi)
        cx = rng.uniform(lo, hi)
        aspect = rng.uniform(0.6, 1.0)
        angle = rng.uniform(0.0, np.pi)
        amp = rng.uniform(0.65, 1.0)
        ca, sa = np.cos(angle), np.sin(angle)
        u = (xx - cx) * ca + (yy - cy) * sa
        v = -(xx - cx) * sa + (yy - cy) * ca
        # normalized elliptical distance; ~1 px anti-aliased rim
        d = np.sqrt((u / r) ** 2 + (v / (r * aspect)) ** 2)
        cover = np.clip((1.0 - d) * r, 0.0, 1.0)
        img = np.maximum(img, amp * cover)
    return img


def _bandlimited_noise(size, rng, cutoff):
    white = rng.standard_normal((size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    f = np.sqrt(fy * fy + fx * fx)
    tex = np.fft.ifft2(np.fft.fft2(white) * np.exp(-0.5 * (f / cutoff) ** 2)).real
    lo, hi = tex.min(), tex.max()
    return (tex - lo) / (hi - lo) if hi > lo else np.zeros_like(tex)


def _minmax(img):
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)


def generate_phantom(config: PhantomConfig, patient_id: str = "p000",
                     sample_id: str = "", rng=None,
                     coeffs: StainCoefficients = StainCoefficients()) -> PairedSample:
    """Generate one phantom sample deterministically from the config seed."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    size = config.image_size

    nuclei = _soft_ellipses(size, rng, config.nuclei_count_range, config.nuclei_radius_range)
    texture = _bandlimited_noise(size, rng, config.texture_cutoff)
    envelope = 0.35 + 0.65 * _bandlimited_noise(size, rng, config.texture_cutoff / 4.0)
    cyto = _minmax(texture * envelope) * (1.0 - 0.5 * nuclei)

    a, b = config.rcm_mix
    rcm = _minmax(a * nuclei + b * cyto)
    if config.speckle_strength > 0:
        k = config.speckle_shape
        gamma = rng.gamma(shape=k, scale=1.0 / k, size=rcm.shape)
        rcm = _minmax(rcm * (1.0 + config.speckle_strength * (gamma - 1.0)))

    mask = None
    if config.artifact_enabled:
        # saturated interference dot: background capped below 1.0, dot at 1.0,
        # so the dot alone sits above any high-percentile threshold
        rcm = rcm * 0.9
        r = config.artifact_radius
        cy = rng.uniform(size * 0.25, size * 0.75)
        cx = rng.uniform(size * 0.25, size * 0.75)
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r
        rcm = np.where(mask, 1.0, rcm)

    rgb = beer_lambert_he(nuclei, cyto, coeffs)
    return PairedSample(rcm=rcm, h_target=nuclei, e_target=cyto, rgb_target=rgb,
                        patient_id=patient_id, sample_id=sample_id, artifact_mask=mask)


def generate_corpus(config: PhantomConfig, patients: int, images_per_patient,
                    coeffs: StainCoefficients = StainCoefficients()) -> list:
    """Generate a multi-patient corpus with per-patient derived sub-seeds.

    images_per_patient may be a single int or one count per patient.
    Patient sub-streams are spawned from the master seed, so the corpus is
    reproducible as a whole and per patient.
    """
    if patients < 1:
        raise ValueError("patients must be >= 1")
    if isinstance(images_per_patient, int):
        counts = [images_per_patient] * patients
    else:
        counts = list(images_per_patient)
        if len(counts) != patients:
            raise ValueError(f"got {len(counts)} image counts for {patients} patients")
    patient_seqs = np.random.SeedSequence(config.seed).spawn(patients)
    corpus = []
    for p, (seq, count) in enumerate(zip(patient_seqs, counts)):
        pid = f"p{p:03d}"
        for i, img_seq in enumerate(seq.spawn(count)):
            rng = np.random.default_rng(img_seq)
            corpus.append(generate_phantom(config, patient_id=pid,
                                           sample_id=f"{pid}_i{i:04d}",
                                           rng=rng, coeffs=coeffs))
    return corpus


def with_seed(config: PhantomConfig, seed: int) -> PhantomConfig:
    return replace(config, seed=seed)
