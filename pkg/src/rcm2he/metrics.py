"""Full-reference image quality metrics, sharpness, and paired testing.

All comparison metrics operate on the 8-bit intensity scale: float inputs
are assumed to live in [0, 1] and are scaled by 255, integer inputs are
used as-is. Color images are reduced to Rec.601 luminance before SSIM,
MS-SSIM, FSIM, and VOL. vol() is the one scale-preserving exception: it
reports the variance of the 4-neighbor Laplacian of the values it is given.

Pinned definitions (shared by the test references):
  * SSIM: 11x11 Gaussian window sigma 1.5, k1=0.01, k2=0.03, local map on
    'valid' windows, mean pooled.
  * MS-SSIM: dyadic scales by non-overlapping 2x2 block means (odd trailing
    row/col dropped), contrast-structure means at the fine scales, full
    SSIM at the coarsest, weights = prefix of (0.0448, 0.2856, 0.3001,
    0.2363, 0.1333) renormalized to sum 1.
  * FSIM: phase congruency from a log-Gabor bank (4 scales, 4 orientations,
    min wavelength 6, multiplier 2, sigma_on_f 0.55, angular sigma
    pi/4/1.2, Kovesi noise threshold k=2, per-orientation energy over
    amplitude-sum, summed over orientations), Scharr gradient magnitude,
    constants T1=0.85, T2=160, pooled by the elementwise max of the two
    phase congruency maps.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d
from scipy.special import betainc

PSNR_IDENTICAL = math.inf   # explicit sentinel for a zero-MSE comparison

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
REC601 = (0.299, 0.587, 0.114)


def as_255(img) -> np.ndarray:
    arr = np.asarray(img)
    if np.issubdtype(arr.dtype, np.floating):
        return arr.astype(np.float64) * 255.0
    return arr.astype(np.float64)


def luminance(img) -> np.ndarray:
    """Rec.601 luma of an (H, W, 3) image; grayscale passes through."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[-1] == 3:
        return arr @ np.asarray(REC601)
    raise ValueError(f"expected (H, W) or (H, W, 3), got {arr.shape}")


def _check_dims(a, b):
    if np.asarray(a).shape != np.asarray(b).shape:
        raise ValueError(f"dimension mismatch: {np.asarray(a).shape} vs {np.asarray(b).shape}")


def mse(a, b) -> float:
    """Mean squared difference over all pixels and channels, 0-255 scale."""
    _check_dims(a, b)
    diff = as_255(a) - as_255(b)
    return float(np.mean(diff * diff))


def psnr(a, b, max_value: float = 255.0) -> float:
    """10 log10(max^2 / MSE); identical images return the inf sentinel."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_IDENTICAL
    return float(10.0 * math.log10(max_value * max_value / err))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_maps(a, b, window, sigma, k1, k2, data_range=255.0):
    win = _gaussian_window(window, sigma)
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    var_a = convolve2d(a * a, win, mode="valid") - mu_a * mu_a
    var_b = convolve2d(b * b, win, mode="valid") - mu_b * mu_b
    cov = convolve2d(a * b, win, mode="valid") - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def ssim(a, b, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local structural similarity on luminance."""
    _check_dims(a, b)
    ya, yb = luminance(as_255(a)), luminance(as_255(b))
    if min(ya.shape) < window:
        raise ValueError(f"image {ya.shape} smaller than the {window}x{window} window")
    lum, cs = _ssim_maps(ya, yb, window, sigma, k1, k2)
    return float(np.mean(lum * cs))


def _downsample2(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    x = img[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a, b, scales: int = 5, weights=None, window: int = 11,
            sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Multi-scale SSIM: weighted product of contrast-structure means across
    dyadic scales with the full SSIM at the coarsest scale."""
    _check_dims(a, b)
    ya, yb = luminance(as_255(a)), luminance(as_255(b))
    if min(ya.shape) // 2 ** (scales - 1) < window:
        raise ValueError(f"image {ya.shape} too small for {scales} scales with an "
                         f"{window}px window")
    if weights is None:
        weights = MS_SSIM_WEIGHTS[:scales]
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size != scales:
        raise ValueError("need one weight per scale")
    weights = weights / weights.sum()

    value = 1.0
    for level in range(scales):
        lum, cs = _ssim_maps(ya, yb, window, sigma, k1, k2)
        if level == scales - 1:
            value *= float(np.mean(lum * cs)) ** weights[level]
        else:
            value *= float(np.mean(cs)) ** weights[level]
            ya, yb = _downsample2(ya), _downsample2(yb)
    return float(value)


# --- FSIM --------------------------------------------------------------------

_SCHARR_X = np.array([[3, 0, -3], [10, 0, -10], [3, 0, -3]], dtype=np.float64) / 16.0


def _freq_grid(rows, cols):
    if cols % 2:
        xr = np.arange(-(cols - 1) // 2, (cols - 1) // 2 + 1) / (cols - 1)
    else:
        xr = np.arange(-cols // 2, cols // 2) / cols
    if rows % 2:
        yr = np.arange(-(rows - 1) // 2, (rows - 1) // 2 + 1) / (rows - 1)
    else:
        yr = np.arange(-rows // 2, rows // 2) / rows
    x, y = np.meshgrid(xr, yr)
    radius = np.fft.ifftshift(np.sqrt(x * x + y * y))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    radius[0, 0] = 1.0
    return radius, theta


def phase_congruency(img, nscale: int = 4, norient: int = 4,
                     min_wavelength: float = 6.0, mult: float = 2.0,
                     sigma_on_f: float = 0.55, d_theta_sigma: float = 1.2,
                     k: float = 2.0, epsilon: float = 1e-4) -> np.ndarray:
    """Phase congruency map from a log-Gabor filter bank (see module doc)."""
    img = np.asarray(img, dtype=np.float64)
    rows, cols = img.shape
    radius, theta = _freq_grid(rows, cols)
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** 30)
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    theta_sigma = math.pi / norient / d_theta_sigma

    log_gabors = []
    for s in range(nscale):
        f0 = 1.0 / (min_wavelength * mult ** s)
        lg = np.exp(-(np.log(radius / f0) ** 2) / (2.0 * math.log(sigma_on_f) ** 2))
        lg *= lowpass
        lg[0, 0] = 0.0
        log_gabors.append(lg)

    im_fft = np.fft.fft2(img)
    pc = np.zeros_like(img)
    for o in range(norient):
        angle = o * math.pi / norient
        ds = sin_t * math.cos(angle) - cos_t * math.sin(angle)
        dc = cos_t * math.cos(angle) + sin_t * math.sin(angle)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-(dtheta ** 2) / (2.0 * theta_sigma ** 2))

        eo = [np.fft.ifft2(im_fft * lg * spread) for lg in log_gabors]
        amps = [np.abs(e) for e in eo]
        sum_an = np.sum(amps, axis=0)
        sum_e = np.sum([e.real for e in eo], axis=0)
        sum_o = np.sum([e.imag for e in eo], axis=0)

        x_energy = np.sqrt(sum_e ** 2 + sum_o ** 2) + epsilon
        mean_e, mean_o = sum_e / x_energy, sum_o / x_energy
        energy = np.zeros_like(img)
        for e in eo:
            energy += e.real * mean_e + e.imag * mean_o \
                - np.abs(e.real * mean_o - e.imag * mean_e)

        tau = np.median(amps[0]) / math.sqrt(math.log(4.0))
        total_tau = tau * (1.0 - (1.0 / mult) ** nscale) / (1.0 - 1.0 / mult)
        noise_mean = total_tau * math.sqrt(math.pi / 2.0)
        noise_sigma = total_tau * math.sqrt((4.0 - math.pi) / 2.0)
        energy = np.maximum(energy - (noise_mean + k * noise_sigma), 0.0)
        pc += energy / (sum_an + epsilon)
    return pc


def fsim(a, b) -> float:
    """Feature similarity on luminance: phase congruency plus gradient
    magnitude, pooled by maximal phase congruency."""
    _check_dims(a, b)
    ya, yb = luminance(as_255(a)), luminance(as_255(b))
    if min(ya.shape) < 32:
        raise ValueError(f"image {ya.shape} below the 32px filter support")

    factor = max(1, round(min(ya.shape) / 256))
    if factor > 1:
        box = np.ones((factor, factor)) / factor ** 2
        ya = convolve2d(ya, box, mode="same")[::factor, ::factor]
        yb = convolve2d(yb, box, mode="same")[::factor, ::factor]

    pc_a = phase_congruency(ya)
    pc_b = phase_congruency(yb)
    gm_a = _gradient_magnitude(ya)
    gm_b = _gradient_magnitude(yb)

    t1, t2 = 0.85, 160.0
    s_pc = (2 * pc_a * pc_b + t1) / (pc_a ** 2 + pc_b ** 2 + t1)
    s_g = (2 * gm_a * gm_b + t2) / (gm_a ** 2 + gm_b ** 2 + t2)
    pc_max = np.maximum(pc_a, pc_b)
    return float(np.sum(s_pc * s_g * pc_max) / (np.sum(pc_max) + 1e-12))


def _gradient_magnitude(img):
    gx = convolve2d(img, _SCHARR_X, mode="same", boundary="fill")
    gy = convolve2d(img, _SCHARR_X.T, mode="same", boundary="fill")
    return np.sqrt(gx * gx + gy * gy)


def vol(img) -> float:
    """Variance of the 4-neighbor Laplacian over interior pixels.

    Larger means sharper. Works on the values as given (no rescaling) so a
    unit checkerboard scores exactly 16.
    """
    gray = luminance(img)
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        raise ValueError(f"image {gray.shape} smaller than 3x3")
    lap = (gray[:-2, 1:-1] + gray[2:, 1:-1] + gray[1:-1, :-2] + gray[1:-1, 2:]
           - 4.0 * gray[1:-1, 1:-1])
    return float(np.var(lap))


# --- paired testing and reports -------------------------------------------------


@dataclass
class PairedTestResult:
    metric: str
    mean_difference: float
    t_statistic: float = math.nan
    p_value: float = math.nan
    sample_count: int = 0
    degenerate: bool = False


def paired_t_test(x, y, metric: str = "") -> PairedTestResult:
    """Two-sided paired t test; zero difference variance is reported as a
    degenerate result rather than a number."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("need two equal-length 1-D samples")
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 paired samples")
    d = x - y
    mean_d = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return PairedTestResult(metric=metric, mean_difference=mean_d,
                                sample_count=n, degenerate=True)
    t = mean_d / (sd / math.sqrt(n))
    nu = n - 1
    p = float(betainc(nu / 2.0, 0.5, nu / (nu + t * t)))
    return PairedTestResult(metric=metric, mean_difference=mean_d, t_statistic=t,
                            p_value=p, sample_count=n)


METRIC_NAMES = ("mse", "psnr", "ssim", "fsim", "ms_ssim", "vol")


@dataclass
class MetricReport:
    model_id: str
    image_ids: list
    per_image: dict = field(default_factory=dict)   # metric -> list of values
    means: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"model_id": self.model_id, "image_ids": self.image_ids,
                "per_image": self.per_image, "means": self.means}

    def to_csv(self) -> str:
        names = list(self.per_image)
        lines = ["image_id," + ",".join(names)]
        for i, img in enumerate(self.image_ids):
            lines.append(img + "," + ",".join(f"{self.per_image[m][i]:.9g}" for m in names))
        lines.append("mean," + ",".join(f"{self.means[m]:.9g}" for m in names))
        return "\n".join(lines) + "\n"


def _auto_scales(shape, window=11, most=5) -> int:
    m = 1
    while m < most and min(shape) // 2 ** m >= window:
        m += 1
    return m


def evaluate_dataset(predictions, targets, ids=None, model_id: str = "model") -> MetricReport:
    """Per-image metric vectors and corpus means for matched image sets.

    PSNR is aggregated both ways: `psnr` is the mean of per-image values
    (inf if any pair is identical) and `psnr_of_mean_mse` recomputes PSNR
    from the pooled MSE. MS-SSIM uses the largest scale count (up to 5)
    the image size supports. VOL is reported for the predictions on the
    0-255 scale.
    """
    if len(predictions) != len(targets):
        raise ValueError("prediction/target counts differ")
    if not predictions:
        raise ValueError("empty evaluation set")
    ids = list(ids) if ids is not None else [f"img{i:04d}" for i in range(len(predictions))]
    if len(ids) != len(predictions):
        raise ValueError("identifier count does not match image count")

    scales = _auto_scales(np.asarray(predictions[0]).shape[:2])
    report = MetricReport(model_id=model_id, image_ids=ids)
    cols = {name: [] for name in METRIC_NAMES}
    for pred, target in zip(predictions, targets):
        cols["mse"].append(mse(pred, target))
        cols["psnr"].append(psnr(pred, target))
        cols["ssim"].append(ssim(pred, target))
        cols["fsim"].append(fsim(pred, target))
        cols["ms_ssim"].append(ms_ssim(pred, target, scales=scales))
        cols["vol"].append(vol(as_255(pred)))
    report.per_image = cols
    report.means = {name: float(np.mean(vals)) for name, vals in cols.items()}
    pooled = report.means["mse"]
    report.means["psnr_of_mean_mse"] = (PSNR_IDENTICAL if pooled == 0.0 else
                                        float(10.0 * math.log10(255.0 ** 2 / pooled)))
    return report


def compare_models(report_a: MetricReport, report_b: MetricReport) -> list:
    """Paired t tests per metric between two reports on the same images."""
    if report_a.image_ids != report_b.image_ids:
        raise ValueError("reports cover different image sets")
    results = []
    for name in report_a.per_image:
        if name not in report_b.per_image:
            continue
        xa = np.asarray(report_a.per_image[name], dtype=np.float64)
        xb = np.asarray(report_b.per_image[name], dtype=np.float64)
        finite = np.isfinite(xa) & np.isfinite(xb)
        if finite.sum() < 2:
            results.append(PairedTestResult(metric=name, mean_difference=math.nan,
                                            sample_count=int(finite.sum()),
                                            degenerate=True))
            continue
        results.append(paired_t_test(xa[finite], xb[finite], metric=name))
    return results


def differences_csv(report_a: MetricReport, report_b: MetricReport) -> str:
    """Per-image metric differences (a - b), one row per image, for
    violin-style distribution plots."""
    if report_a.image_ids != report_b.image_ids:
        raise ValueError("reports cover different image sets")
    names = [n for n in report_a.per_image if n in report_b.per_image]
    lines = ["image_id," + ",".join(names)]
    for i, img in enumerate(report_a.image_ids):
        diffs = [report_a.per_image[n][i] - report_b.per_image[n][i] for n in names]
        lines.append(img + "," + ",".join(f"{d:.9g}" for d in diffs))
    return "\n".join(lines) + "\n"
