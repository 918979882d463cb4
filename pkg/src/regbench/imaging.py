"""Grayscale image handling: ingestion, normalization and long-side resizing.

A gray image is a 2-D float64 numpy array (rows = y, cols = x) with
intensities in [0, 255].
"""

from __future__ import annotations

from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IoError, UnsupportedBandCount

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
CLAHE_CLIP_LIMIT = 2.0
CLAHE_GRID = 8
_BINS = 256


class Normalization(str, Enum):
    IDENTITY = "identity"
    PERCENTILE = "percentile"
    ZSCORE = "zscore"
    CLAHE = "clahe"

    @classmethod
    def parse(cls, value) -> Normalization:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown normalization {value!r} (choose from {choices})") from None


def as_gray(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    return arr


def _minmax_to_255(band: np.ndarray) -> np.ndarray:
    lo, hi = float(band.min()), float(band.max())
    if hi - lo <= 0:
        return np.zeros_like(band, dtype=np.float64)
    return (band.astype(np.float64) - lo) * (255.0 / (hi - lo))


def to_gray(raster) -> np.ndarray:
    """1-band or 3-band (H, W, 3) 8/16-bit raster to a gray image.

    Anything wider than 8 bits is min-max rescaled to [0, 255] first.
    """
    arr = np.asarray(raster)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 3 and arr.shape[2] != 3 or arr.ndim not in (2, 3):
        bands = arr.shape[2] if arr.ndim == 3 else arr.ndim
        raise UnsupportedBandCount(f"expected 1 or 3 bands, got {bands}")
    if arr.dtype == np.uint8:
        data = arr.astype(np.float64)
    else:
        data = _minmax_to_255(arr)
    if data.ndim == 3:
        w = LUMA_WEIGHTS
        data = w[0] * data[:, :, 0] + w[1] * data[:, :, 1] + w[2] * data[:, :, 2]
    return as_gray(data)


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("RGBA", "LA", "P", "CMYK", "YCbCr"):
                im = im.convert("RGB")
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read image {path}: {exc}") from exc
    return to_gray(arr)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_png(img: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="L").save(path, format="PNG")


# --- normalization -------------------------------------------------------


def percentile_stretch(img: np.ndarray, lo_q: float = 2.0, hi_q: float = 98.0) -> np.ndarray:
    lo, hi = np.percentile(img, [lo_q, hi_q])
    if hi - lo < 1e-6:
        return img.copy()
    return np.clip((img - lo) * (255.0 / (hi - lo)), 0.0, 255.0)


def zscore_stretch(img: np.ndarray) -> np.ndarray:
    mu, sigma = float(img.mean()), float(img.std())
    if sigma < 1e-12:
        return img.copy()
    return np.clip(128.0 + 64.0 * (img - mu) / sigma, 0.0, 255.0)


def _tile_edges(n: int, grid: int) -> np.ndarray:
    return np.linspace(0, n, grid + 1).round().astype(int)


def _interp_weights(n: int, edges: np.ndarray):
    """Per-pixel lower/upper tile index and upper weight along one axis."""
    centers = (edges[:-1] + edges[1:]) / 2.0
    pos = np.interp(np.arange(n) + 0.5, centers, np.arange(len(centers), dtype=np.float64))
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(centers) - 1)
    return lo, hi, pos - lo


def clahe(img: np.ndarray, clip_limit: float = CLAHE_CLIP_LIMIT, grid: int = CLAHE_GRID) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    256-bin histograms per tile of a ``grid`` x ``grid`` layout; bins are
    clipped at ``clip_limit`` times the uniform bin height and the excess
    is spread evenly over all bins in a single pass. Each pixel blends the
    four nearest tile lookup tables bilinearly; edge tiles are clamped.
    """
    h, w = img.shape
    if img.max() - img.min() < 1e-6:
        return img.copy()
    gy, gx = min(grid, h), min(grid, w)
    ye, xe = _tile_edges(h, gy), _tile_edges(w, gx)
    bins = np.clip(np.floor(img), 0, _BINS - 1).astype(np.intp)

    luts = np.empty((gy, gx, _BINS))
    for i in range(gy):
        for j in range(gx):
            block = bins[ye[i]:ye[i + 1], xe[j]:xe[j + 1]]
            npix = block.size
            hist = np.bincount(block.ravel(), minlength=_BINS).astype(np.float64)
            cap = max(1.0, clip_limit * npix / _BINS)
            excess = np.maximum(hist - cap, 0.0).sum()
            hist = np.minimum(hist, cap) + excess / _BINS
            luts[i, j] = np.cumsum(hist) * (255.0 / npix)

    y0, y1, wy = _interp_weights(h, ye)
    x0, x1, wx = _interp_weights(w, xe)
    wy, wx = wy[:, None], wx[None, :]
    r0, r1 = y0[:, None], y1[:, None]
    c0, c1 = x0[None, :], x1[None, :]
    top = (1 - wx) * luts[r0, c0, bins] + wx * luts[r0, c1, bins]
    bottom = (1 - wx) * luts[r1, c0, bins] + wx * luts[r1, c1, bins]
    return np.clip((1 - wy) * top + wy * bottom, 0.0, 255.0)


def normalize(img: np.ndarray, kind) -> np.ndarray:
    kind = Normalization.parse(kind)
    img = as_gray(img)
    if kind is Normalization.IDENTITY:
        return img
    if kind is Normalization.PERCENTILE:
        return percentile_stretch(img)
    if kind is Normalization.ZSCORE:
        return zscore_stretch(img)
    return clahe(img)


# --- resizing ------------------------------------------------------------


def _axis_taps(n_src: int, coords: np.ndarray):
    lo = np.clip(np.floor(coords).astype(int), 0, n_src - 1)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = np.clip(coords - lo, 0.0, 1.0)
    return lo, hi, frac


def bilinear_resample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` on the separable grid (ys x xs) of source coordinates."""
    x0, x1, fx = _axis_taps(img.shape[1], xs)
    y0, y1, fy = _axis_taps(img.shape[0], ys)
    fx, fy = fx[None, :], fy[:, None]
    rows0, rows1 = img[y0], img[y1]
    top = rows0[:, x0] * (1 - fx) + rows0[:, x1] * fx
    bottom = rows1[:, x0] * (1 - fx) + rows1[:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_long_side(img: np.ndarray, max_dimension: int) -> tuple[np.ndarray, float]:
    """Shrink so the long side is at most ``max_dimension``.

    Output pixel (i, j) samples source coordinate (i / s, j / s), so a
    point p in the resized frame sits at p / s in the original frame.
    """
    if max_dimension < 1:
        raise ValueError("max_dimension must be >= 1")
    h, w = img.shape
    long_side = max(h, w)
    if long_side <= max_dimension:
        return img, 1.0
    s = max_dimension / long_side
    out_h = max(1, int(round(h * s))) if h != long_side else max_dimension
    out_w = max(1, int(round(w * s))) if w != long_side else max_dimension
    xs = np.arange(out_w) / s
    ys = np.arange(out_h) / s
    return bilinear_resample(img, xs, ys), s
