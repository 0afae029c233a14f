"""Inference: enhanced image = clip(R * L, 0, 1), plus decomposition map export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .image_io import as_hwc, save_image
from .model import DOWNSAMPLE, RetinexNet


@dataclass
class EnhancementResult:
    enhanced: np.ndarray  # H x W x 3
    L: np.ndarray  # H x W x 1
    R: np.ndarray  # H x W x 3
    N: np.ndarray  # H x W x 3


def _pad_amounts(n: int) -> int:
    return (-n) % DOWNSAMPLE


@torch.no_grad()
def decompose(params: RetinexNet, y) -> EnhancementResult:
    """Run the network on one H x W x 3 image (any size) and compose the result.

    Sizes not divisible by 8 are reflect-padded at the bottom/right and the
    outputs cropped back.
    """
    y = as_hwc(y)
    if y.shape[2] != 3:
        raise ValueError(f"enhancement needs a 3-channel image, got {y.shape[2]} channel(s)")
    h, w = y.shape[:2]
    ph, pw = _pad_amounts(h), _pad_amounts(w)
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "symmetric"
        y = np.pad(y, ((0, ph), (0, pw), (0, 0)), mode=mode)
    dtype = next(params.parameters()).dtype
    batch = torch.from_numpy(y.transpose(2, 0, 1)[None].copy()).to(dtype)
    L, R, N = (t[0].double().numpy().transpose(1, 2, 0)[:h, :w] for t in params(batch))
    enhanced = np.clip(R * L, 0.0, 1.0)
    return EnhancementResult(enhanced, L, R, N)


def enhance(params: RetinexNet, y) -> EnhancementResult:
    return decompose(params, y)


def decompose_to_files(params: RetinexNet, y, out_dir) -> EnhancementResult:
    """Write ``L.png``, ``R.png``, ``N.png`` (shown as (N+1)/2) and ``enhanced.png``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    res = decompose(params, y)
    save_image(res.L, out_dir / "L.png")
    save_image(res.R, out_dir / "R.png")
    save_image((res.N + 1.0) / 2.0, out_dir / "N.png")
    save_image(res.enhanced, out_dir / "enhanced.png")
    return res
