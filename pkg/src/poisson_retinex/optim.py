"""Adaptive-moment (Adam) optimizer with explicit, serializable state."""

from __future__ import annotations

import math

import torch


class Adam:
    """Bias-corrected Adam over a dict of named parameters.

    The update for each parameter ``p`` with gradient ``g`` at step ``t`` is::

        m = beta1*m + (1-beta1)*g
        v = beta2*v + (1-beta2)*g*g
        p -= lr * (m / (1-beta1**t)) / (sqrt(v / (1-beta2**t)) + eps)
    """

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}

    @torch.no_grad()
    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + self.eps))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, torch.Tensor]:
        out = {f"m/{k}": t for k, t in self.m.items()}
        out.update({f"v/{k}": t for k, t in self.v.items()})
        return out

    def load_state_arrays(self, arrays, t: int):
        with torch.no_grad():
            for k in self.params:
                self.m[k].copy_(arrays[f"m/{k}"])
                self.v[k].copy_(arrays[f"v/{k}"])
        self.t = int(t)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g.mul_(scale)
    return total


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))
