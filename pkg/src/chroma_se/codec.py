"""LPS <-> colour image conversion, PNG persistence and DNN-side scaling.

Images are stored as ``(H, W, 3)`` arrays with frequency increasing upward:
image row 0 is the highest frequency band, the last row is DC.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, PngImagePlugin, UnidentifiedImageError

from .colormaps import ColormapTable, colormap
from .dsp import LOG_FLOOR

log = logging.getLogger(__name__)

IMAGE_SIZE = 256


class ImageFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DisplayRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.lo < self.hi:
            raise ValueError(f"invalid display range [{self.lo}, {self.hi}]")

    @classmethod
    def from_corpus(cls, lps_values, lo_pct=0.1, hi_pct=99.9, floor=LOG_FLOOR) -> "DisplayRange":
        """Percentile range of corpus LPS values, widened down to the log floor."""
        v = np.concatenate([np.ravel(getattr(x, "values", x)) for x in lps_values])
        lo, hi = np.percentile(v, [lo_pct, hi_pct])
        lo = min(float(lo), float(np.log(floor)))
        if hi <= lo:
            hi = lo + 1.0
        return cls(lo, float(hi))


@dataclass
class ColorImage:
    pixels: np.ndarray
    colormap_name: str
    display_range: DisplayRange

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {p.shape}")
        if p.min() < 0 or p.max() > 1:
            raise ValueError("pixel components must lie in [0, 1]")
        self.pixels = p

    @property
    def shape(self):
        return self.pixels.shape


@dataclass
class PixelDataset:
    rgb: np.ndarray     # (N, 3)
    target: np.ndarray  # (N,)

    def __len__(self):
        return len(self.target)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros(0))


def quantize_index(v, rng: DisplayRange):
    """Map LPS values to colormap indices 0..255 (round half up, clamped)."""
    x = (np.clip(v, rng.lo, rng.hi) - rng.lo) / (rng.hi - rng.lo)
    idx = np.floor(255 * x + 0.5).astype(np.int64)
    return int(idx) if np.ndim(idx) == 0 else idx


def dequantize_index(idx, rng: DisplayRange):
    return rng.lo + np.asarray(idx) / 255 * (rng.hi - rng.lo)


def encode_lps(lps, table: ColormapTable, rng: DisplayRange, size: int | None = IMAGE_SIZE) -> ColorImage:
    """Colour a ``(F, T)`` LPS matrix; frequency row 0 lands on the bottom image row."""
    v = np.asarray(getattr(lps, "values", lps), dtype=np.float64)
    if v.ndim != 2 or (size is not None and v.shape != (size, size)):
        raise ValueError(f"expected a {size}x{size} LPS matrix, got {v.shape}")
    colors = table.quantized().astype(np.float64) / 255
    pixels = colors[quantize_index(v, rng)][::-1]
    return ColorImage(pixels, table.name, rng)


def nearest_index(img: ColorImage, table: ColormapTable) -> np.ndarray:
    """Exact nearest-entry lookup of every pixel, returned in LPS orientation.

    Ties go to the lowest index, so repeated colours decode to their first
    occurrence.
    """
    q = table.quantized().astype(np.int64)
    px = np.round(img.pixels[::-1] * 255).astype(np.int64).reshape(-1, 3)
    colors, inverse = np.unique(px, axis=0, return_inverse=True)
    d = ((colors[:, None, :] - q[None]) ** 2).sum(axis=-1)
    return np.argmin(d, axis=1)[inverse.ravel()].reshape(img.pixels.shape[:2])


# ---------------------------------------------------------------------------
# PNG persistence

def save_image(img: ColorImage, path) -> None:
    meta = PngImagePlugin.PngInfo()
    meta.add_text("colormap", img.colormap_name)
    meta.add_text("lps_lo", repr(float(img.display_range.lo)))
    meta.add_text("lps_hi", repr(float(img.display_range.hi)))
    data = np.round(img.pixels * 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(os.fspath(path), format="PNG", pnginfo=meta)


def load_image(path, expect_size: int | None = IMAGE_SIZE) -> ColorImage:
    path = os.fspath(path)
    try:
        with Image.open(path) as im:
            im.load()
            text = dict(getattr(im, "text", {}) or {})
            data = np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot read PNG ({exc})") from exc
    if expect_size is not None and data.shape[:2] != (expect_size, expect_size):
        raise ImageFormatError(f"{path}: expected {expect_size}x{expect_size} image, got {data.shape[:2]}")
    try:
        rng = DisplayRange(float(text["lps_lo"]), float(text["lps_hi"]))
        name = text["colormap"]
    except KeyError as exc:
        raise ImageFormatError(f"{path}: missing metadata key {exc}") from exc
    return ColorImage(data.astype(np.float64) / 255, name, rng)


# ---------------------------------------------------------------------------
# standardization for the denoiser

@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    degenerate: tuple  # per channel: True where std was ~0 and replaced by 1


def channel_stats(pixels) -> ChannelStats:
    p = np.asarray(getattr(pixels, "pixels", pixels), dtype=np.float64)
    mu = p.mean(axis=(0, 1))
    sd = p.std(axis=(0, 1))
    flat = tuple(bool(s < 1e-12) for s in sd)
    if any(flat):
        log.warning("standardize: zero-variance channel(s) %s passed through with std=1",
                    [c for c, f in enumerate(flat) if f])
    sd = np.where(np.array(flat), 1.0, sd)
    return ChannelStats(mu, sd, flat)


def standardize(img, stats: ChannelStats | None = None):
    """Per-channel zero-mean, unit-variance field; returns ``(field, stats)``.

    ``stats`` may be supplied to scale another image (e.g. a training target)
    with the statistics of a reference image.
    """
    p = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
    if stats is None:
        stats = channel_stats(p)
    return (p - stats.mean) / stats.std, stats


def destandardize(field, stats: ChannelStats) -> np.ndarray:
    return np.asarray(field) * stats.std + stats.mean


def to_color_image(field, name: str, rng: DisplayRange) -> ColorImage:
    """Project an arbitrary real field into the valid colour gamut."""
    return ColorImage(np.clip(field, 0.0, 1.0), name, rng)


# ---------------------------------------------------------------------------
# image <-> tensor layout and regression data

def image_to_tensor(pixels) -> np.ndarray:
    """``(H=freq, W=time, 3)`` image to ``(time, freq, 3)`` with freq 0 = DC."""
    p = np.asarray(getattr(pixels, "pixels", pixels))
    return np.ascontiguousarray(p[::-1].transpose(1, 0, 2))


def tensor_to_image(tensor) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(tensor).transpose(1, 0, 2)[::-1])


def pixel_rows(img: ColorImage) -> np.ndarray:
    """RGB rows ordered column-major over the ``(freq, time)`` LPS grid."""
    p = img.pixels[::-1]  # back to LPS orientation
    return p.transpose(1, 0, 2).reshape(-1, 3)


def pixel_dataset(pairs) -> PixelDataset:
    rgb, target = [], []
    for img, lps in pairs:
        v = np.asarray(getattr(lps, "values", lps), dtype=np.float64)
        if v.shape != img.pixels.shape[:2]:
            raise ValueError(f"image {img.pixels.shape[:2]} and LPS {v.shape} shapes differ")
        rgb.append(pixel_rows(img))
        target.append(v.ravel(order="F"))
    if not rgb:
        return PixelDataset.empty()
    return PixelDataset(np.concatenate(rgb), np.concatenate(target))


def encode_named(lps, name: str, rng: DisplayRange, size: int | None = IMAGE_SIZE) -> ColorImage:
    return encode_lps(lps, colormap(name), rng, size)

