"""Beer-Lambert synthesis of H&E ground truth and its inverse decomposition.

Two normalized fluorescence channels (nuclei and cytoplasm) are combined
into a brightfield-like RGB image through exponential attenuation:

    rgb[c] = exp(-(k_h[c] * nuclei + k_e[c] * cyto))

so zero concentration gives pure white and increasing either concentration
darkens every channel monotonically. The inverse maps an RGB image back to
per-pixel (h, e) concentrations through optical density and a non-negative
two-variable least squares fit, which lets chemically stained H&E serve as
channel-level ground truth.
"""

from dataclasses import dataclass

import numpy as np

# Defaults produce the blue-purple (hematoxylin) vs pink-red (eosin) contrast
# of standard H&E; they are package defaults, fully configurable.
DEFAULT_K_H = (0.60, 1.45, 0.80)
DEFAULT_K_E = (0.10, 1.00, 0.55)


@dataclass(frozen=True)
class StainCoefficients:
    """Per-RGB-channel absorption coefficients for the two dyes."""

    k_h: tuple = DEFAULT_K_H
    k_e: tuple = DEFAULT_K_E

    def __post_init__(self):
        kh, ke = self.as_arrays()
        if kh.shape != (3,) or ke.shape != (3,):
            raise ValueError("stain coefficients must be 3-vectors")
        if (kh < 0).any() or (ke < 0).any():
            raise ValueError("stain coefficients must be non-negative")
        cross = np.linalg.norm(np.cross(kh, ke))
        if cross < 1e-9 * max(np.linalg.norm(kh) * np.linalg.norm(ke), 1e-12):
            raise ValueError("k_h and k_e are parallel; decomposition would be ill-posed")

    def as_arrays(self):
        return np.asarray(self.k_h, dtype=np.float64), np.asarray(self.k_e, dtype=np.float64)


def beer_lambert_he(nuclei: np.ndarray, cyto: np.ndarray,
                    coeffs: StainCoefficients = StainCoefficients()) -> np.ndarray:
    """Compose an RGB H&E image from two normalized concentration channels.

    Both inputs must share dimensions and live in [0, 1]. Output values are
    in (0, 1], exactly 1 where both concentrations are 0.
    """
    nuclei = np.asarray(nuclei, dtype=np.float64)
    cyto = np.asarray(cyto, dtype=np.float64)
    if nuclei.shape != cyto.shape:
        raise ValueError(f"channel dimensions differ: {nuclei.shape} vs {cyto.shape}")
    k_h, k_e = coeffs.as_arrays()
    absorbance = nuclei[..., None] * k_h + cyto[..., None] * k_e
    return np.exp(-absorbance)


def decompose_he(rgb: np.ndarray, coeffs: StainCoefficients = StainCoefficients(),
                 floor: float = 1e-4):
    """Split an RGB H&E image into (h, e) concentration channels.

    Per pixel the optical density od[c] = -ln(rgb[c]) is fitted as
    od ~= h*k_h + e*k_e in the least-squares sense with h, e >= 0 (negative
    unconstrained solutions are projected onto the active-set optimum of the
    non-negative quadrant). Pixels at or below `floor` are clamped before
    the log; the returned `clamped` flag reports whether that happened.

    Returns (h, e, clamped).
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) RGB image, got shape {rgb.shape}")
    clamped = bool((rgb < floor).any())
    od = -np.log(np.clip(rgb, floor, None))
    k_h, k_e = coeffs.as_arrays()

    # 2x2 normal equations, solved in closed form.
    a = float(k_h @ k_h)
    b = float(k_h @ k_e)
    c = float(k_e @ k_e)
    det = a * c - b * b
    p = od @ k_h
    q = od @ k_e
    h = (c * p - b * q) / det
    e = (a * q - b * p) / det

    # Active-set projection: clamp one variable to 0 and refit the other.
    neg_h = h < 0
    neg_e = e < 0
    both = neg_h & neg_e
    only_h = neg_h & ~neg_e
    only_e = neg_e & ~neg_h
    if only_h.any():
        h[only_h] = 0.0
        e[only_h] = np.maximum(q[only_h] / c, 0.0)
    if only_e.any():
        e[only_e] = 0.0
        h[only_e] = np.maximum(p[only_e] / a, 0.0)
    if both.any():
        # neither axis fit can be negative-optimal in both; pick the better edge
        h_edge = np.maximum(p[both] / a, 0.0)
        e_edge = np.maximum(q[both] / c, 0.0)
        res_h = _edge_residual(od[both], h_edge, k_h)
        res_e = _edge_residual(od[both], e_edge, k_e)
        use_h = res_h <= res_e
        h[both] = np.where(use_h, h_edge, 0.0)
        e[both] = np.where(use_h, 0.0, e_edge)
    return h, e, clamped


def _edge_residual(od, coef, k):
    diff = od - coef[..., None] * k
    return np.sum(diff * diff, axis=-1)
