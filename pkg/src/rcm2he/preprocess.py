"""Raw z-stacks to single-layer, artifact-free, pixel-aligned training pairs.

Covers per-pixel surface extraction from a stack, harmonic inpainting of the
optical interference dot, calibration-mask construction, the line-delimited
dataset manifest, and the strict patient-level train/test split.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import median_filter

from .imagecore import ImageStack, load_gray, load_rgb, to_float
from .synthgen import PairedSample


class SplitError(ValueError):
    """Invalid patient-level dataset split request."""


@dataclass
class DatasetSplit:
    """Patient-disjoint train/test partition of paired samples."""

    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    @property
    def train_patients(self) -> set:
        return {s.patient_id for s in self.train}

    @property
    def test_patients(self) -> set:
        return {s.patient_id for s in self.test}

    def counts(self) -> dict:
        return {
            "train_images": len(self.train),
            "test_images": len(self.test),
            "train_patients": len(self.train_patients),
            "test_patients": len(self.test_patients),
        }


def extract_surface(stack: ImageStack, smooth_radius: int = 5):
    """Collapse a z-stack onto its surface layer.

    For each pixel the surface depth is the layer index where the axial
    intensity profile changes most rapidly, scored as the squared first
    difference along z after per-pixel mean removal (ties break to the
    shallowest layer; a depth-1 stack maps to layer 0 everywhere). The
    depth map is then median-smoothed with window radius `smooth_radius`
    and the output image samples each pixel at its smoothed depth, so every
    output value is an actual stack value.

    Returns (surface_image, depth_map).
    """
    layers = np.asarray(stack.layers)
    depth = layers.shape[0]
    if depth == 1:
        return layers[0].copy(), np.zeros(layers.shape[1:], dtype=np.int64)

    profile = layers.astype(np.float64)
    profile = profile - profile.mean(axis=0, keepdims=True)
    energy = np.diff(profile, axis=0) ** 2
    depth_map = np.argmax(energy, axis=0).astype(np.int64)

    if smooth_radius > 0:
        depth_map = median_filter(depth_map, size=2 * smooth_radius + 1, mode="nearest")
    rows, cols = np.indices(depth_map.shape)
    return layers[depth_map, rows, cols], depth_map


def inpaint(img: np.ndarray, mask: np.ndarray, tol: float = 1e-5,
            max_iter: int = 10_000) -> np.ndarray:
    """Fill masked pixels with the harmonic (diffusion) solution.

    Jacobi iteration of 4-neighbor averaging on the masked set, edges
    replicated, until the largest per-pixel change falls below `tol` times
    the image dynamic range or `max_iter` is reached. Unmasked pixels are
    untouched and fill values never leave the input's [min, max] range.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != np.asarray(img).shape:
        raise ValueError(f"mask shape {mask.shape} != image shape {np.asarray(img).shape}")
    if mask.all():
        raise ValueError("mask covers the entire image; nothing to anchor the fill")
    if not mask.any():
        return np.array(img, copy=True)

    out = np.asarray(img, dtype=np.float64).copy()
    known = out[~mask]
    out[mask] = known.mean()
    scale = float(known.max() - known.min()) if known.size else 1.0
    threshold = tol * max(scale, np.finfo(np.float64).tiny)

    for _ in range(max_iter):
        padded = np.pad(out, 1, mode="edge")
        avg = (padded[:-2, 1:-1] + padded[2:, 1:-1] +
               padded[1:-1, :-2] + padded[1:-1, 2:]) * 0.25
        change = np.abs(avg[mask] - out[mask]).max()
        out[mask] = avg[mask]
        if change < threshold:
            break

    result = np.asarray(img, dtype=np.float64).copy()
    result[mask] = out[mask]
    if not np.issubdtype(np.asarray(img).dtype, np.floating):
        result = np.round(result).astype(np.asarray(img).dtype)
    return result


def mask_from_calibration(img: np.ndarray, percentile: float = 99.9) -> np.ndarray:
    """Threshold a calibration image into a bright-dot artifact mask.

    Pixels at or above the given intensity percentile are flagged for
    inpainting (the interference dot saturates, so it sits in the top tail).
    """
    values = to_float(np.asarray(img))
    return values >= np.percentile(values, percentile)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a boolean mask as 8-bit PNG (nonzero = masked)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.asarray(mask, dtype=bool) * 255).astype(np.uint8)).save(path)


def load_mask(path) -> np.ndarray:
    return np.array(Image.open(path).convert("L")) > 0


def build_dataset(samples, test_patients) -> DatasetSplit:
    """Split samples strictly by patient id.

    `samples` is an iterable of PairedSample (each carries its patient id).
    `test_patients` must be a non-empty strict subset of the patient ids
    present; otherwise a SplitError is raised.
    """
    samples = list(samples)
    all_patients = {s.patient_id for s in samples}
    test_set = set(test_patients)
    if not test_set:
        raise SplitError("no test patients requested")
    unknown = test_set - all_patients
    if unknown:
        raise SplitError(f"unknown test patient ids: {sorted(unknown)}")
    if test_set == all_patients:
        raise SplitError("test patients cover the whole corpus; train side would be empty")
    if len(all_patients) < 2:
        raise SplitError("cannot split a single-patient corpus")
    split = DatasetSplit(
        train=[s for s in samples if s.patient_id not in test_set],
        test=[s for s in samples if s.patient_id in test_set],
    )
    assert not (split.train_patients & split.test_patients)
    return split


# --- manifest: one JSON object per line, patient id plus file paths ---------

def write_manifest(entries, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for entry in entries:
            fh.write(json.dumps(entry) + "\n")


def read_manifest(path, exclude_ids=()) -> list:
    """Read manifest entries, dropping any whose sample_id is excluded."""
    excluded = set(exclude_ids)
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            if entry.get("sample_id") in excluded:
                continue
            entries.append(entry)
    return entries


def load_samples(manifest_path, exclude_ids=()) -> list:
    """Materialize PairedSamples from a manifest (paths relative to it)."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    samples = []
    for entry in read_manifest(manifest_path, exclude_ids):
        rcm = to_float(load_gray(base / entry["rcm"]))
        h = to_float(load_gray(base / entry["h"]))
        e = to_float(load_gray(base / entry["e"]))
        rgb = load_rgb(base / entry["rgb"])
        samples.append(PairedSample(rcm=rcm, h_target=h, e_target=e, rgb_target=rgb,
                                    patient_id=entry["patient_id"],
                                    sample_id=entry.get("sample_id", "")))
    return samples
