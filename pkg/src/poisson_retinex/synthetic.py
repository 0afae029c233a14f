"""Procedural natural-looking colour images and synthetic training pairs.

Used for the toy runs in the test suite and the demo in the README, where no
real dataset is available.
"""

from __future__ import annotations

import numpy as np

from .image_io import PairedSample
from .noise import simulate_low_light


def natural_image(h: int, w: int, seed: int, saturation: float = 1.0) -> np.ndarray:
    """1/f-spectrum colour texture with a few hard-edged shapes, values in [0, 1].

    ``saturation`` blends each pixel toward its channel mean (0 gives gray).
    """
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    f = np.sqrt(fx**2 + fy**2)
    f[0, 0] = 1.0
    base = np.empty((h, w, 3))
    mix = rng.uniform(0.3, 1.0, size=(3, 3))
    fields = []
    for _ in range(3):
        spectrum = (rng.normal(size=(h, w)) + 1j * rng.normal(size=(h, w))) / f**1.1
        spectrum[0, 0] = 0
        field = np.real(np.fft.ifft2(spectrum))
        fields.append((field - field.mean()) / (field.std() + 1e-12))
    for c in range(3):
        base[:, :, c] = sum(mix[c, k] * fields[k] for k in range(3))
    base = 0.5 + 0.15 * base / (np.abs(base).max() + 1e-12) * 2
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.08, 0.3) * h, rng.uniform(0.08, 0.3) * w
        colour = rng.uniform(0.1, 0.95, size=3)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        shade = 0.85 + 0.15 * fields[0][mask] / (np.abs(fields[0]).max() + 1e-12)
        base[mask] = colour[None, :] * shade[:, None]
    gray = base.mean(axis=2, keepdims=True)
    return np.clip(gray + saturation * (base - gray), 0.0, 1.0)


def synthetic_pairs(
    n: int, size: int, exposure: float, photon_scale: float, seed: int, saturation: float = 1.0
) -> list[PairedSample]:
    """``n`` (low, high) pairs: the high image is ``natural_image``, the low one its simulated dim capture."""
    out = []
    for k in range(n):
        clean = natural_image(size, size, seed * 100003 + k, saturation)
        low = simulate_low_light(clean, exposure, photon_scale, seed, index=(k,))
        out.append(PairedSample(np.clip(low, 0.0, 1.0), clean, f"syn{k:04d}"))
    return out
