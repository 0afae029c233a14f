"""Photon-counting degradation model.

Intensities in [0, 1] are turned into photon counts by a photon scale ``s``
(expected count for unit intensity). With ``s = 1`` the formulas reduce to
applying ``Poisson(.)`` directly to normalized pixel values.
"""

from __future__ import annotations

import numpy as np

from .rng import stream

DEFAULT_PHOTON_SCALE = 255.0
DEFAULT_ALPHA = 1e-6
LADDER_HEAD = 0.30
LADDER_RATIO = 0.5


def _check_scale(s: float) -> None:
    if not np.isfinite(s) or s <= 0:
        raise ValueError(f"photon scale must be positive, got {s}")


def simulate_low_light(x, e: float, s: float = DEFAULT_PHOTON_SCALE, seed: int = 0, index=()) -> np.ndarray:
    """Attenuate ``x`` by exposure ``e`` and resample it as photon counts.

    Each pixel/channel gets ``k ~ Poisson(s * e * x)`` and the result is ``k / s``,
    so the mean is ``e * x`` and the variance ``e * x / s``. The output is not
    clipped and can exceed 1 for bright pixels at large ``e``.
    """
    _check_scale(s)
    if not (0.0 < e <= 1.0):
        raise ValueError(f"exposure must lie in (0, 1], got {e}")
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("clean image must be finite and non-negative")
    rng = stream(seed, "simulate", *index)
    return rng.poisson(s * e * x).astype(np.float64) / s


def noise_target(y, s: float = DEFAULT_PHOTON_SCALE, alpha: float = DEFAULT_ALPHA, seed: int = 0, index=(), rng=None) -> np.ndarray:
    """Sample the multiplicative-noise target ``Poisson(s*y) / (s*y + alpha)``.

    For ``y > 0`` the target has mean close to 1 and variance ``1 / (s*y)``;
    pixels with ``y = 0`` map to 0.
    """
    _check_scale(s)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValueError("noise target requires a non-negative image")
    if rng is None:
        rng = stream(seed, "noise", *index)
    rate = s * y
    return rng.poisson(rate).astype(np.float64) / (rate + alpha)


def multiplicative_residual(y, x, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Element-wise ``y / (x + alpha)``: the noise factor that maps ``x`` onto ``y``."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != x.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {x.shape}")
    if np.any(x < 0):
        raise ValueError("reference image must be non-negative")
    return y / (x + alpha)


def level_ladder(n_levels: int = 4) -> list[float]:
    """Exposure factors for graded low-light levels: 0.30, 0.15, 0.075, ..."""
    if n_levels < 1:
        raise ValueError("need at least one level")
    return [LADDER_HEAD * LADDER_RATIO**k for k in range(n_levels)]
