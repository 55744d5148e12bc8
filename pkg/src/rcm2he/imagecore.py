"""Image/stack data model, file I/O, normalization, seeded cropping.

Conventions used across the package:
  * grayscale images are 2-D numpy arrays, either integer counts (uint8 /
    uint16) or float in [0, 1]
  * RGB images are (H, W, 3) float arrays in [0, 1]; values are clamped to
    [0, 1] only when exported to disk, never inside loss computation
  * stacks are stored shallow to deep as 16-bit grayscale multi-page TIFF
  * RGB exports are 8-bit PNG
"""

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

STACK_EXTENSIONS = (".tif", ".tiff", ".png")


class ImageIOError(ValueError):
    """Unreadable, empty, or structurally invalid image input."""


@dataclass
class ImageStack:
    """Depth-ordered set of co-registered 2-D grayscale fields.

    layers: (depth, H, W) array, shallow to deep, all layers same size.
    z_step_um: axial step between layers in micrometers (metadata only).
    """

    layers: np.ndarray
    z_step_um: float = 1.0
    bit_depth: int = field(default=16)

    def __post_init__(self):
        self.layers = np.asarray(self.layers)
        if self.layers.ndim != 3:
            raise ImageIOError(f"stack must be (depth, H, W), got shape {self.layers.shape}")
        if self.layers.shape[0] < 1 or self.layers.shape[1] < 1 or self.layers.shape[2] < 1:
            raise ImageIOError("stack must have depth >= 1 and non-empty layers")

    @property
    def depth(self) -> int:
        return self.layers.shape[0]

    @property
    def shape(self) -> tuple:
        return self.layers.shape[1:]


def _read_gray(path: Path) -> np.ndarray:
    img = Image.open(path)
    frames = []
    n = getattr(img, "n_frames", 1)
    for i in range(n):
        img.seek(i)
        if img.mode in ("L", "I;16", "I", "F"):
            frames.append(np.array(img))
        elif img.mode in ("P",):
            frames.append(np.array(img.convert("L")))
        else:
            raise ImageIOError(f"{path}: non-grayscale content (mode {img.mode})")
    return np.stack(frames) if len(frames) > 1 else frames[0][None]


def load_stack(path) -> ImageStack:
    """Load a z-stack from a multi-page TIFF or a directory of images.

    Directory entries are taken in lexicographic order (zero-padded numeric
    names sort correctly). Bit depth is preserved. Raises ImageIOError on
    mixed dimensions, unreadable/empty input, or non-grayscale content.
    """
    path = Path(path)
    if not path.exists():
        raise ImageIOError(f"no such path: {path}")
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in STACK_EXTENSIONS)
        if not files:
            raise ImageIOError(f"no stack images in directory: {path}")
        layers = []
        for f in files:
            frames = _read_gray(f)
            layers.extend(frames)
        shapes = {a.shape for a in layers}
        if len(shapes) > 1:
            raise ImageIOError(f"mixed layer dimensions in {path}: {sorted(shapes)}")
        arr = np.stack(layers)
    else:
        arr = _read_gray(path)
    bit_depth = 16 if arr.dtype == np.uint16 else 8
    return ImageStack(layers=arr, bit_depth=bit_depth)


def save_stack(stack: ImageStack, path) -> None:
    """Write a stack as a multi-page grayscale TIFF, preserving dtype."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pages = [Image.fromarray(layer) for layer in stack.layers]
    pages[0].save(path, save_all=True, append_images=pages[1:])


def load_gray(path) -> np.ndarray:
    """Load a single grayscale image (first page if multi-page)."""
    return _read_gray(Path(path))[0]


def save_gray16(img: np.ndarray, path) -> None:
    """Write a grayscale image as 16-bit TIFF; floats in [0,1] are scaled."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if np.issubdtype(img.dtype, np.floating):
        img = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    elif img.dtype == np.uint8:
        img = img.astype(np.uint16) * 257
    Image.fromarray(img.astype(np.uint16)).save(path)


def save_rgb8(img: np.ndarray, path) -> None:
    """Export an RGB float image in [0,1] as 8-bit PNG (clamped here only)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    u8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8).save(path)


def load_rgb(path) -> np.ndarray:
    """Load an RGB image as float in [0,1]."""
    arr = np.array(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def to_float(img: np.ndarray) -> np.ndarray:
    """Map integer counts onto [0,1] by dtype range; floats pass through."""
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    if img.dtype == np.uint16:
        return img.astype(np.float64) / 65535.0
    return img.astype(np.float64)


def normalize(img: np.ndarray, lo_pct: float = 1.0, hi_pct: float = 99.0) -> np.ndarray:
    """Percentile-normalize an image to [0,1].

    The lo_pct percentile maps to 0 and the hi_pct percentile to 1 (linear),
    then values are clamped to [0,1]. A constant image has no dynamic range;
    it comes back all zeros with a warning rather than an error, since blank
    patches occur in real mosaics and training must not abort.
    """
    if not (0.0 <= lo_pct < hi_pct <= 100.0):
        raise ValueError(f"need 0 <= lo_pct < hi_pct <= 100, got ({lo_pct}, {hi_pct})")
    values = np.asarray(img, dtype=np.float64)
    lo = np.percentile(values, lo_pct)
    hi = np.percentile(values, hi_pct)
    if hi <= lo:
        warnings.warn("normalize: degenerate input (zero dynamic range), returning zeros")
        return np.zeros_like(values)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def crop_offsets(height: int, width: int, size: int, count: int, seed) -> list:
    """Deterministic list of `count` top-left crop offsets for a size×size patch."""
    rng = np.random.default_rng(seed)
    tops = rng.integers(0, height - size + 1, size=count)
    lefts = rng.integers(0, width - size + 1, size=count)
    return list(zip(tops.tolist(), lefts.tolist()))


def random_crop_set(images: list, size: int, count: int, seed) -> list:
    """Crop `count` aligned patch groups from co-registered images.

    Every image in `images` (grayscale or RGB, identical H and W) is cropped
    at the same offset, so patches stay pixel-aligned. Offsets are a pure
    function of the seed. Returns a list of `count` tuples of patches.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    shapes = {np.asarray(im).shape[:2] for im in images}
    if len(shapes) > 1:
        raise ValueError(f"co-registered inputs disagree on dimensions: {sorted(shapes)}")
    h, w = shapes.pop()
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds image dimensions ({h}, {w})")
    groups = []
    for top, left in crop_offsets(h, w, size, count, seed):
        groups.append(tuple(np.asarray(im)[top:top + size, left:left + size, ...].copy()
                            for im in images))
    return groups
