"""Image loading/saving, paired crops and the ``low/`` + ``high/`` dataset layout."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from .rng import stream

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
LUMA = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported or degenerate image files."""


class DatasetError(ValueError):
    """Raised when a paired dataset cannot be assembled."""


@dataclass(frozen=True)
class PairedSample:
    low: np.ndarray
    high: np.ndarray
    id: str

    def __post_init__(self):
        if self.low.shape != self.high.shape:
            raise ValueError(
                f"pair {self.id!r}: low {self.low.shape} and high {self.high.shape} differ"
            )


def as_hwc(img: np.ndarray) -> np.ndarray:
    """Return ``img`` as a float64 H x W x C array (adds a channel axis to 2-D input)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected H x W x C image with C in (1, 3), got shape {arr.shape}")
    return arr


def to_gray(img) -> np.ndarray:
    """ITU-R 601 luma (0.299, 0.587, 0.114) for colour input, the single channel otherwise."""
    img = as_hwc(img)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ LUMA


def load_image(path) -> np.ndarray:
    """Read a PNG/JPEG file into an H x W x C float64 array in [0, 1].

    Colour files (including palette and RGBA) come back with 3 channels,
    grayscale files with 1. Values are the 8-bit codes divided by 255.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with PILImage.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise ImageFormatError(f"{path}: unsupported format {im.format}")
            if im.mode in ("L", "I;16", "I", "1"):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
            data = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a supported raster image") from exc
    if data.size == 0:
        raise ImageFormatError(f"{path}: zero-sized image")
    return as_hwc(data.astype(np.float64) / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    # floor(x + 0.5) so that 0.5 -> 128 (np.rint would round half to even)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    """Write ``img`` as an 8-bit PNG/JPEG (format from the suffix), rounding to nearest."""
    path = Path(path)
    arr = as_hwc(img)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot save image with non-finite values")
    codes = to_uint8(arr)
    if codes.shape[2] == 1:
        pil = PILImage.fromarray(codes[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(codes, mode="RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = "JPEG" if path.suffix.lower() in (".jpg", ".jpeg") else "PNG"
    try:
        pil.save(path, format=fmt)
    except OSError as exc:
        raise OSError(f"cannot write image to {path}: {exc}") from exc


def random_crop_pair(sample: PairedSample, size: int, seed: int, *index: int) -> PairedSample:
    """Crop the same ``size`` x ``size`` window out of both images of a pair.

    The offset is drawn from the ``crop`` stream of ``seed`` (``index`` lets the
    trainer vary it per epoch and sample while staying reproducible).
    """
    h, w = sample.low.shape[:2]
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds image size {h}x{w}")
    if size < 1:
        raise ValueError("crop size must be positive")
    rng = stream(seed, "crop", *index)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    window = (slice(top, top + size), slice(left, left + size))
    return PairedSample(sample.low[window], sample.high[window], sample.id)


def _stems(directory: Path) -> dict[str, Path]:
    return {
        p.stem: p
        for p in sorted(directory.iterdir())
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    }


def scan_paired_dataset(low_dir, high_dir) -> list[str]:
    """Sorted filename stems present in both ``low_dir`` and ``high_dir``."""
    low_dir, high_dir = Path(low_dir), Path(high_dir)
    for d in (low_dir, high_dir):
        if not d.is_dir():
            raise DatasetError(f"dataset directory not found: {d}")
    low, high = _stems(low_dir), _stems(high_dir)
    for stem in sorted(set(low) - set(high)):
        logger.warning("%s has no match in %s", low[stem].name, high_dir)
    for stem in sorted(set(high) - set(low)):
        logger.warning("%s has no match in %s", high[stem].name, low_dir)
    common = sorted(set(low) & set(high))
    if not common:
        raise DatasetError(f"no paired images between {low_dir} and {high_dir}")
    return common


class PairedDataset:
    """Lazy view over ``<root>/low`` and ``<root>/high``."""

    def __init__(self, root):
        self.root = Path(root)
        self.low_dir = self.root / "low"
        self.high_dir = self.root / "high"
        self.ids = scan_paired_dataset(self.low_dir, self.high_dir)
        self._low = _stems(self.low_dir)
        self._high = _stems(self.high_dir)

    def __len__(self):
        return len(self.ids)

    def load(self, sample_id: str) -> PairedSample:
        return PairedSample(
            load_image(self._low[sample_id]), load_image(self._high[sample_id]), sample_id
        )
