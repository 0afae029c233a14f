"""Full-reference metrics, colour-histogram consistency and classical baseline enhancers."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .image_io import IMAGE_SUFFIXES, as_hwc, load_image, to_gray, to_uint8
from .niqe import niqe

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
REPORT_HEADER = ["id", "psnr_db", "ssim", "niqe", "color_divergence"]


class IdMismatchError(ValueError):
    def __init__(self, only_output, only_reference):
        self.only_output = sorted(only_output)
        self.only_reference = sorted(only_reference)
        parts = []
        if self.only_output:
            parts.append("only in output: " + ", ".join(self.only_output))
        if self.only_reference:
            parts.append("only in reference: " + ", ".join(self.only_reference))
        super().__init__("image ids differ (" + "; ".join(parts or ["no images"]) + ")")


def _same_shape(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    m = len(g) // 2
    return out[m : img.shape[0] - m, m : img.shape[1] - m]


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows (sigma 1.5) of the luma."""
    a, b = _same_shape(a, b)
    ga, gb = to_gray(a), to_gray(b)
    if min(ga.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {ga.shape}")
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(ga, g), _filter_valid(gb, g)
    var_a = _filter_valid(ga * ga, g) - mu_a * mu_a
    var_b = _filter_valid(gb * gb, g) - mu_b * mu_b
    cov = _filter_valid(ga * gb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------- colour consistency


def channel_histograms(img, bins: int = 64) -> np.ndarray:
    """(3, bins) per-channel histograms over [0, 1], each normalized to sum 1."""
    img = as_hwc(img)
    if img.shape[2] != 3:
        raise ValueError("colour histograms need a 3-channel image")
    clipped = np.clip(img, 0.0, 1.0)
    hists = np.stack(
        [np.histogram(clipped[:, :, c], bins=bins, range=(0.0, 1.0))[0] for c in range(3)]
    ).astype(np.float64)
    return hists / hists.sum(axis=1, keepdims=True)


def color_divergence(img, bins: int = 64) -> float:
    """Mean pairwise L1 distance between the R, G and B histograms (0 when all three agree)."""
    h = channel_histograms(img, bins)
    pairs = [(0, 1), (0, 2), (1, 2)]
    return float(sum(np.abs(h[i] - h[j]).sum() for i, j in pairs) / len(pairs))


# ---------------------------------------------------------------- baselines


def baseline_gamma(img, g: float) -> np.ndarray:
    if g <= 0:
        raise ValueError("gamma exponent must be positive")
    return np.clip(as_hwc(img), 0.0, 1.0) ** g


def baseline_histeq(img) -> np.ndarray:
    """Per-channel histogram equalization on the 8-bit codes."""
    codes = to_uint8(as_hwc(img))
    out = np.empty(codes.shape, dtype=np.float64)
    for c in range(codes.shape[2]):
        ch = codes[:, :, c]
        cdf = np.cumsum(np.bincount(ch.ravel(), minlength=256))
        cdf_min = cdf[cdf > 0][0]
        if cdf[-1] == cdf_min:
            out[:, :, c] = ch / 255.0
            continue
        lut = np.clip((cdf - cdf_min) / (cdf[-1] - cdf_min), 0.0, 1.0)
        out[:, :, c] = lut[ch]
    return out


# ---------------------------------------------------------------- evaluation


@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)
    has_niqe: bool = True

    @property
    def aggregate(self) -> dict[str, float]:
        keys = [k for k in REPORT_HEADER[1:] if self.has_niqe or k != "niqe"]
        return {k: float(np.mean([r[k] for r in self.rows])) for k in keys}

    def header(self) -> list[str]:
        return [k for k in REPORT_HEADER if self.has_niqe or k != "niqe"]

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for r in self.rows:
                w.writerow([r[k] if k == "id" else repr(float(r[k])) for k in self.header()])

    def summary_line(self) -> str:
        agg = self.aggregate
        parts = [f"PSNR={agg['psnr_db']:.4f}", f"SSIM={agg['ssim']:.4f}"]
        if self.has_niqe:
            parts.append(f"NIQE={agg['niqe']:.4f}")
        parts.append(f"ColorDiv={agg['color_divergence']:.4f}")
        return " ".join(parts)


def _image_files(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"directory not found: {directory}")
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def score_pair(sample_id: str, out, ref, niqe_model=None) -> dict:
    row = {
        "id": sample_id,
        "psnr_db": psnr(out, ref),
        "ssim": ssim(out, ref),
        "color_divergence": color_divergence(out),
    }
    if niqe_model is not None:
        row["niqe"] = niqe(out, niqe_model)
    return row


def evaluate(output_dir, reference_dir, niqe_model=None, jobs: int = 1) -> MetricsReport:
    """Score every image in ``output_dir`` against the same-stem image in ``reference_dir``."""
    outs, refs = _image_files(Path(output_dir)), _image_files(Path(reference_dir))
    if set(outs) != set(refs) or not outs:
        raise IdMismatchError(set(outs) - set(refs), set(refs) - set(outs))
    ids = sorted(outs)

    def job(sample_id):
        return score_pair(sample_id, load_image(outs[sample_id]), load_image(refs[sample_id]), niqe_model)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(job, ids))
    else:
        rows = [job(i) for i in ids]
    return MetricsReport(rows, has_niqe=niqe_model is not None)
