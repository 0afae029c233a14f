"""Three-headed convolutional encoder-decoder.

Layout (``w`` = base width)::

    stem    3 -> w        3x3 conv, stride 1, ReLU                  H
    enc1    w -> 2w       3x3 conv, stride 2, ReLU                  H/2
    enc2   2w -> 4w       3x3 conv, stride 2, ReLU                  H/4
    enc3   4w -> 8w       3x3 conv, stride 2, ReLU                  H/8
    up3    8w -> 4w       3x3 transposed conv, stride 2, ReLU       H/4
    fuse3  [up3, enc2] 8w -> 4w   3x3 conv, ReLU
    up2    4w -> 2w                                                 H/2
    fuse2  [up2, enc1] 4w -> 2w
    up1    2w -> w                                                  H
    fuse1  [up1, stem] 2w -> w
    heads  1x1 convs: L (1, sigmoid), R (3, sigmoid), N (3, tanh)

Tensors are NCHW throughout.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .rng import stream

DOWNSAMPLE = 8
NOISE_ACTIVATIONS = ("tanh", "softplus")
HEAD_INITS = ("uniform", "zero")


class DecompositionTriple(NamedTuple):
    L: torch.Tensor  # (B, 1, H, W) in [0, 1]
    R: torch.Tensor  # (B, 3, H, W) in [0, 1]
    N: torch.Tensor  # (B, 3, H, W) in [-1, 1] for the tanh head


class RetinexNet(nn.Module):
    def __init__(self, width: int = 64, noise_activation: str = "tanh"):
        super().__init__()
        if width < 8:
            raise ValueError(f"width must be at least 8, got {width}")
        if noise_activation not in NOISE_ACTIVATIONS:
            raise ValueError(f"noise_activation must be one of {NOISE_ACTIVATIONS}")
        self.width = width
        self.noise_activation = noise_activation
        w = width
        self.stem = nn.Conv2d(3, w, 3, stride=1, padding=1)
        self.enc1 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.enc2 = nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1)
        self.enc3 = nn.Conv2d(4 * w, 8 * w, 3, stride=2, padding=1)
        self.up3 = nn.ConvTranspose2d(8 * w, 4 * w, 3, stride=2, padding=1, output_padding=1)
        self.fuse3 = nn.Conv2d(8 * w, 4 * w, 3, padding=1)
        self.up2 = nn.ConvTranspose2d(4 * w, 2 * w, 3, stride=2, padding=1, output_padding=1)
        self.fuse2 = nn.Conv2d(4 * w, 2 * w, 3, padding=1)
        self.up1 = nn.ConvTranspose2d(2 * w, w, 3, stride=2, padding=1, output_padding=1)
        self.fuse1 = nn.Conv2d(2 * w, w, 3, padding=1)
        self.head_l = nn.Conv2d(w, 1, 1)
        self.head_r = nn.Conv2d(w, 3, 1)
        self.head_n = nn.Conv2d(w, 3, 1)

    def forward(self, y: torch.Tensor) -> DecompositionTriple:
        if y.ndim != 4 or y.shape[1] != 3:
            raise ValueError(f"expected a (B, 3, H, W) batch, got shape {tuple(y.shape)}")
        h, w = y.shape[-2:]
        if h % DOWNSAMPLE or w % DOWNSAMPLE:
            raise ValueError(f"spatial size {h}x{w} must be divisible by {DOWNSAMPLE}")
        s0 = F.relu(self.stem(y))
        e1 = F.relu(self.enc1(s0))
        e2 = F.relu(self.enc2(e1))
        e3 = F.relu(self.enc3(e2))
        d3 = F.relu(self.fuse3(torch.cat([F.relu(self.up3(e3)), e2], dim=1)))
        d2 = F.relu(self.fuse2(torch.cat([F.relu(self.up2(d3)), e1], dim=1)))
        d1 = F.relu(self.fuse1(torch.cat([F.relu(self.up1(d2)), s0], dim=1)))
        L = torch.sigmoid(self.head_l(d1))
        R = torch.sigmoid(self.head_r(d1))
        n = self.head_n(d1)
        N = torch.tanh(n) if self.noise_activation == "tanh" else F.softplus(n)
        return DecompositionTriple(L, R, N)


HEADS = ("head_l", "head_r", "head_n")


def init_model(
    seed: int = 0,
    width: int = 64,
    noise_activation: str = "tanh",
    dtype=torch.float32,
    head_init: str = "uniform",
) -> RetinexNet:
    """Build a network with seed-deterministic fan-in scaled uniform weights.

    Hidden layers draw from U(-sqrt(6/fan_in), sqrt(6/fan_in)), the linear
    1x1 heads from U(-sqrt(3/fan_in), sqrt(3/fan_in)); all biases start at 0.
    Weights come from a numpy stream, so they do not depend on torch's global RNG.

    With ``head_init="zero"`` the heads start at zero instead, so training
    begins from a neutral gray reflectance with no per-channel bias. The hidden
    layers are drawn identically in both modes.
    """
    if head_init not in HEAD_INITS:
        raise ValueError(f"head_init must be one of {HEAD_INITS}")
    net = RetinexNet(width, noise_activation)
    rng = stream(seed, "init", width)
    with torch.no_grad():
        for name, module in net.named_children():
            weight = module.weight
            if isinstance(module, nn.ConvTranspose2d):
                # weight is (in, out, k, k); each output sees in * k*k / stride^2 taps on average
                fan_in = weight.shape[0] * weight.shape[2] * weight.shape[3] / 4
            else:
                fan_in = weight.shape[1] * weight.shape[2] * weight.shape[3]
            gain = 3.0 if name in HEADS else 6.0
            bound = np.sqrt(gain / fan_in)
            values = rng.uniform(-bound, bound, size=tuple(weight.shape))
            weight.copy_(torch.from_numpy(values))
            module.bias.zero_()
    if head_init == "zero":
        zero_heads(net)
    return net.to(dtype)


def forward(params: RetinexNet, y: torch.Tensor) -> DecompositionTriple:
    return params(y)


def count_params(params: nn.Module) -> int:
    return sum(p.numel() for p in params.parameters())


def zero_heads(params: RetinexNet) -> RetinexNet:
    """Zero the head weights and biases in place (L = R = 0.5, N = 0 everywhere)."""
    with torch.no_grad():
        for name in HEADS:
            head = getattr(params, name)
            head.weight.zero_()
            head.bias.zero_()
    return params
