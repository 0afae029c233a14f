"""NIQE: natural-image-statistics quality score (lower is better).

Features follow Mittal, Soundararajan & Bovik (2013): on the gray image (0-255
scale) at full and half resolution, compute MSCN coefficients, fit an AGGD to
them (shape, mean scale) and to their products with four shifted copies
(shape, mean, left scale, right scale). That is 18 features per scale and 36 per
patch. A model is the mean and covariance of the features of sharp pristine
patches; an image's score is the Mahalanobis-type distance between its own
patch-feature Gaussian and the model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter
from scipy.special import gamma as gamma_fn

from .image_io import IMAGE_SUFFIXES, load_image, to_gray

N_FEATURES = 36
MSCN_SIGMA = 7.0 / 6.0
MSCN_TRUNCATE = 3.0 / MSCN_SIGMA  # 7x7 window
RIDGE = 1e-6
MIN_IMAGES = 10
MODEL_MAGIC = b"NIQEMDL\0"
MODEL_VERSION = 1

_SHAPES = np.arange(0.2, 10.0 + 5e-4, 0.001)
_RATIO = gamma_fn(2.0 / _SHAPES) ** 2 / (gamma_fn(1.0 / _SHAPES) * gamma_fn(3.0 / _SHAPES))
_SHIFTS = ((0, 1), (1, 0), (1, 1), (1, -1))


class NiqeError(ValueError):
    pass


@dataclass
class NiqeModel:
    mean: np.ndarray  # (36,)
    cov: np.ndarray  # (36, 36)
    patch: int = 96
    sharpness: float = 0.75

    def save(self, path) -> None:
        """Binary layout, little-endian: magic(8) u32 version u32 dim f64 patch
        f64 sharpness, dim f64 means, dim*dim f64 covariance (row-major)."""
        dim = len(self.mean)
        blob = MODEL_MAGIC + struct.pack("<IIdd", MODEL_VERSION, dim, float(self.patch), self.sharpness)
        blob += np.asarray(self.mean, "<f8").tobytes() + np.asarray(self.cov, "<f8").tobytes()
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(blob)

    @classmethod
    def load(cls, path) -> "NiqeModel":
        data = Path(path).read_bytes()
        head = len(MODEL_MAGIC) + struct.calcsize("<IIdd")
        if len(data) < head or data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
            raise NiqeError(f"{path}: not a NIQE model file")
        version, dim, patch, sharp = struct.unpack("<IIdd", data[len(MODEL_MAGIC) : head])
        if version != MODEL_VERSION:
            raise NiqeError(f"{path}: model version {version}, expected {MODEL_VERSION}")
        if len(data) != head + 8 * (dim + dim * dim):
            raise NiqeError(f"{path}: truncated or oversized NIQE model file")
        values = np.frombuffer(data[head:], "<f8")
        return cls(values[:dim].copy(), values[dim:].reshape(dim, dim).copy(), int(patch), sharp)


def aggd_fit(vec: np.ndarray) -> tuple[float, float, float]:
    """Moment-matching AGGD fit: (shape, left scale, right scale)."""
    vec = np.asarray(vec, dtype=np.float64).ravel()
    tiny = 1e-12
    left, right = vec[vec < 0], vec[vec > 0]
    left_std = np.sqrt(np.mean(left**2)) if left.size else tiny
    right_std = np.sqrt(np.mean(right**2)) if right.size else tiny
    ratio = max(left_std, tiny) / max(right_std, tiny)
    rhat = np.mean(np.abs(vec)) ** 2 / max(np.mean(vec**2), tiny)
    rhat_norm = rhat * (ratio**3 + 1) * (ratio + 1) / (ratio**2 + 1) ** 2
    shape = float(_SHAPES[np.argmin((_RATIO - rhat_norm) ** 2)])
    k = np.sqrt(gamma_fn(1.0 / shape) / gamma_fn(3.0 / shape))
    return shape, float(left_std * k), float(right_std * k)


def mscn(gray255: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean-subtracted contrast-normalized coefficients and the local std map."""
    mu = gaussian_filter(gray255, MSCN_SIGMA, mode="nearest", truncate=MSCN_TRUNCATE)
    var = gaussian_filter(gray255 * gray255, MSCN_SIGMA, mode="nearest", truncate=MSCN_TRUNCATE) - mu * mu
    sigma = np.sqrt(np.abs(var))
    return (gray255 - mu) / (sigma + 1.0), sigma


def patch_features(coeffs: np.ndarray) -> np.ndarray:
    shape, bl, br = aggd_fit(coeffs)
    feats = [shape, (bl + br) / 2.0]
    for dy, dx in _SHIFTS:
        pair = coeffs * np.roll(coeffs, (dy, dx), axis=(0, 1))
        shape, bl, br = aggd_fit(pair)
        mean = (br - bl) * gamma_fn(2.0 / shape) / gamma_fn(1.0 / shape)
        feats += [shape, mean, bl, br]
    return np.array(feats)


def _half(gray255: np.ndarray) -> np.ndarray:
    h, w = gray255.shape
    im = PILImage.fromarray(gray255.astype(np.float32), mode="F")
    return np.asarray(im.resize((w // 2, h // 2), PILImage.BICUBIC), dtype=np.float64)


def image_features(img, patch: int = 96) -> tuple[np.ndarray, np.ndarray]:
    """Per-patch 36-d features and per-patch sharpness for one image.

    The image is cropped to a whole number of ``patch`` blocks; the half-scale
    pass uses ``patch // 2`` blocks on the downsampled image.
    """
    gray = to_gray(img) * 255.0
    h, w = gray.shape
    rows, cols = h // patch, w // patch
    if rows < 1 or cols < 1:
        raise NiqeError(f"image {h}x{w} smaller than one {patch}x{patch} patch")
    gray = gray[: rows * patch, : cols * patch]
    scales = [(gray, patch), (_half(gray), patch // 2)]
    feats = np.zeros((rows * cols, N_FEATURES))
    sharp = np.zeros(rows * cols)
    for s, (im, p) in enumerate(scales):
        coeffs, sigma = mscn(im)
        for r in range(rows):
            for c in range(cols):
                k = r * cols + c
                block = (slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p))
                feats[k, s * 18 : (s + 1) * 18] = patch_features(coeffs[block])
                if s == 0:
                    sharp[k] = sigma[block].sum()
    return feats, sharp


def _ridge(cov: np.ndarray) -> np.ndarray:
    lam = RIDGE * max(np.trace(cov) / cov.shape[0], 1e-12)
    return cov + lam * np.eye(cov.shape[0])


def _images(source):
    if isinstance(source, (str, Path)):
        root = Path(source)
        if not root.is_dir():
            raise FileNotFoundError(f"pristine directory not found: {root}")
        return [load_image(p) for p in sorted(root.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES]
    return list(source)


def fit_niqe_model(pristine, patch: int = 96, sharpness_quantile: float = 0.75) -> NiqeModel:
    """Fit a pristine model from a directory (or a list of images).

    Patches whose summed local standard deviation falls below
    ``sharpness_quantile`` times the image's sharpest patch are discarded, as in
    the reference construction.
    """
    images = _images(pristine)
    if len(images) < MIN_IMAGES:
        raise NiqeError(f"need at least {MIN_IMAGES} pristine images, got {len(images)}")
    kept = []
    for img in images:
        try:
            feats, sharp = image_features(img, patch)
        except NiqeError:
            continue
        kept.append(feats[sharp >= sharpness_quantile * sharp.max()] if sharp.max() > 0 else feats)
    feats = np.concatenate(kept) if kept else np.zeros((0, N_FEATURES))
    if len(feats) < 2:
        raise NiqeError(f"too few usable patches ({len(feats)}) to fit a NIQE model")
    cov = np.cov(feats, rowvar=False)
    cov = (cov + cov.T) / 2.0
    return NiqeModel(feats.mean(axis=0), _ridge(cov), patch, sharpness_quantile)


def niqe(img, model: NiqeModel) -> float:
    h, w = np.asarray(img).shape[:2]
    if h < 2 * model.patch or w < 2 * model.patch:
        raise NiqeError(f"image {h}x{w} too small for NIQE with patch {model.patch} (need {2 * model.patch})")
    feats, _ = image_features(img, model.patch)
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False)
    pooled = _ridge((model.cov + cov) / 2.0)
    d = model.mean - mu
    return float(np.sqrt(max(d @ np.linalg.pinv(pooled, hermitian=True) @ d, 0.0)))
