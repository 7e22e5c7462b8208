"""Axis-separated self-attention over time, height, then width.

Applying attention one axis at a time keeps the largest attention matrix at
max(T^2, H^2, W^2) entries per slice instead of (HWT)^2 for full attention,
while information still propagates between all spatio-temporal positions.
Shipped as a standalone library module; the video GAN itself does not use it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch


@dataclass
class AttentionParams:
    """Q, K, V projection matrices ([C, C] each) for the three axes."""

    time_q: torch.Tensor
    time_k: torch.Tensor
    time_v: torch.Tensor
    height_q: torch.Tensor
    height_k: torch.Tensor
    height_v: torch.Tensor
    width_q: torch.Tensor
    width_k: torch.Tensor
    width_v: torch.Tensor

    def __post_init__(self):
        c = self.time_q.shape[0]
        for name, m in self.__dict__.items():
            if m.shape != (c, c):
                raise ValueError(f"{name} must be square [{c}, {c}], got {tuple(m.shape)}")

    @staticmethod
    def random(channels: int, rng: torch.Generator, scale: float = 1.0,
               dtype=torch.float32) -> "AttentionParams":
        def mat():
            return scale * torch.randn(channels, channels, generator=rng, dtype=dtype)

        return AttentionParams(*[mat() for _ in range(9)])


def self_attention(x: torch.Tensor, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                   scaled: bool = False, stats: dict | None = None) -> torch.Tensor:
    """softmax[XQ (XK)^T] XV over the last axis, batched over leading axes.

    `scaled=True` divides the logits by sqrt(C); the base formulation does not.
    """
    c = x.shape[-1]
    if q.shape != (c, c) or k.shape != (c, c) or v.shape != (c, c):
        raise ValueError(f"Q/K/V must be [{c}, {c}] to match the input feature size")
    xq = x @ q
    xk = x @ k
    xv = x @ v
    logits = xq @ xk.transpose(-1, -2)
    if scaled:
        logits = logits / math.sqrt(c)
    if stats is not None:
        stats["max_logits_entries"] = max(stats.get("max_logits_entries", 0), logits.numel())
    return torch.softmax(logits, dim=-1) @ xv


def separable_attention(x: torch.Tensor, params: AttentionParams, scaled: bool = False,
                        stats: dict | None = None) -> torch.Tensor:
    """Attend over time, then height, then width of a [B, H, W, T, C] tensor.

    Axes are transposed before each reshape so every slice is contiguous along
    the attended axis; output shape equals input shape.
    """
    if x.ndim != 5:
        raise ValueError(f"expected [B, H, W, T, C], got shape {tuple(x.shape)}")
    b, h, w, t, c = x.shape

    out = x.reshape(b * h * w, t, c)
    out = self_attention(out, params.time_q, params.time_k, params.time_v, scaled, stats)
    out = out.reshape(b, h, w, t, c)

    out = out.permute(0, 2, 3, 1, 4).reshape(b * w * t, h, c)
    out = self_attention(out, params.height_q, params.height_k, params.height_v, scaled, stats)
    out = out.reshape(b, w, t, h, c).permute(0, 3, 1, 2, 4)

    out = out.permute(0, 1, 3, 2, 4).reshape(b * h * t, w, c)
    out = self_attention(out, params.width_q, params.width_k, params.width_v, scaled, stats)
    out = out.reshape(b, h, t, w, c).permute(0, 1, 3, 2, 4)
    return out.contiguous()


def peak_attention_entries(b: int, h: int, w: int, t: int) -> tuple[int, int]:
    """(separable peak, full-attention) attention-matrix entry counts."""
    separable = max(b * h * w * t * t, b * w * t * h * h, b * h * t * w * w)
    full = b * (h * w * t) ** 2
    return separable, full
