"""Composite training objective.

All L1 norms are means over elements so the weights do not depend on the
patch size. Tensors are NCHW; ``L`` is broadcast over the three colour
channels wherever it multiplies ``R`` or ``N``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

from .model import DecompositionTriple


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.5
    lambda2: float = 0.1
    gamma: float = 0.6
    beta: float = 10.0
    alpha: float = 1e-6

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise ValueError(f"loss weight {name} must be finite")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass
class LossBreakdown:
    rec: torch.Tensor
    decom: torch.Tensor
    sps: torch.Tensor
    noise: torch.Tensor
    total: torch.Tensor

    FIELDS = ("rec", "decom", "sps", "noise", "total")

    def floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in self.FIELDS}


def _check_same(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _check_triple(t: DecompositionTriple, ref: torch.Tensor) -> None:
    if t.L.ndim != 4 or t.L.shape[1] != 1:
        raise ValueError(f"L must be (B, 1, H, W), got {tuple(t.L.shape)}")
    _check_same(t.R, ref, "R vs image")
    _check_same(t.N, ref, "N vs image")
    if t.L.shape[0] != ref.shape[0] or t.L.shape[2:] != ref.shape[2:]:
        raise ValueError(f"L {tuple(t.L.shape)} does not match image {tuple(ref.shape)}")


def grad_xy(m: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Forward differences along x (last axis) and y (second-to-last axis).

    The last column of the x map and the last row of the y map are 0.
    """
    if m.shape[-1] < 2 or m.shape[-2] < 2:
        raise ValueError(f"gradient needs at least 2x2 pixels, got {tuple(m.shape[-2:])}")
    gx = torch.zeros_like(m)
    gy = torch.zeros_like(m)
    gx[..., :, :-1] = m[..., :, 1:] - m[..., :, :-1]
    gy[..., :-1, :] = m[..., 1:, :] - m[..., :-1, :]
    return gx, gy


def loss_rec(y: torch.Tensor, t: DecompositionTriple) -> torch.Tensor:
    _check_triple(t, y)
    return (y - t.R * t.L * t.N).abs().mean()


def loss_decom(x: torch.Tensor, t: DecompositionTriple) -> torch.Tensor:
    _check_triple(t, x)
    return (x - t.R * t.L).abs().mean()


def loss_sps(t: DecompositionTriple, beta: float = 10.0) -> torch.Tensor:
    """Illumination gradients, down-weighted where reflectance has edges.

    ``mean(|dL| * exp(-beta * mean_c |dR_c|))`` averaged over the x and y directions.
    """
    if t.L.shape[1] != 1 or t.R.shape[1] != 3:
        raise ValueError("sps loss needs single-channel L and three-channel R")
    lx, ly = grad_xy(t.L)
    rx, ry = grad_xy(t.R)
    wx = torch.exp(-beta * rx.abs().mean(dim=1, keepdim=True))
    wy = torch.exp(-beta * ry.abs().mean(dim=1, keepdim=True))
    return 0.5 * ((lx.abs() * wx).mean() + (ly.abs() * wy).mean())


def loss_noise(n: torch.Tensor, n_target: torch.Tensor) -> torch.Tensor:
    _check_same(n, n_target, "noise vs target")
    return (n - n_target).abs().mean()


def total_loss(
    y: torch.Tensor,
    x: torch.Tensor,
    t: DecompositionTriple,
    n_target: torch.Tensor,
    w: LossWeights = LossWeights(),
) -> LossBreakdown:
    """All four terms and ``rec + lambda1*(gamma*decom + (1-gamma)*sps) + lambda2*noise``.

    ``y`` is the low-light input, ``x`` the normal-light reference.
    """
    _check_same(y, x, "low vs high")
    rec = loss_rec(y, t)
    decom = loss_decom(x, t)
    sps = loss_sps(t, w.beta)
    noise = loss_noise(t.N, n_target)
    total = rec + w.lambda1 * (w.gamma * decom + (1.0 - w.gamma) * sps) + w.lambda2 * noise
    return LossBreakdown(rec, decom, sps, noise, total)
