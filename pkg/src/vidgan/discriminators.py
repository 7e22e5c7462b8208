"""Dual discriminator: a spatial critic scoring k random full-resolution frames
individually (scores summed), and a temporal critic scoring the spatially
downsampled whole video through two leading 3-D residual blocks.

Both use spectral normalization on every weight layer and projection-based
class conditioning on sum-pooled features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .nn import DiscriminatorBlock, ProjectionHead, fold_time, unfold_time

PHI_CHOICES = ("avgpool2x2", "avgpool4x4", "identity", "random_half_crop")

DISC_CONSTANT_BASE = (1, 2, 4, 8, 16, 16)


def disc_layer_constants(resolution: int) -> tuple[int, ...]:
    """Channel constants for a stack that pools `resolution` down to 4x4.

    One block per halving plus a final non-downsampling block; the widths are
    the tail of the 128-resolution schedule, giving (2,4,8,16,16) at 64 and
    (1,2,4,8,16,16) at 128.
    """
    if resolution < 8 or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two >= 8, got {resolution}")
    n_blocks = int(math.log2(resolution // 4)) + 1
    if n_blocks > len(DISC_CONSTANT_BASE):
        raise ValueError(f"resolution {resolution} too large for the default schedule")
    return DISC_CONSTANT_BASE[len(DISC_CONSTANT_BASE) - n_blocks:]


@dataclass
class SpatialDiscConfig:
    k: int = 8
    ch: int = 32
    layer_constants: tuple[int, ...] = ()


@dataclass
class TemporalDiscConfig:
    phi: str = "avgpool2x2"
    ch: int = 32
    n_3d_blocks: int = 2
    layer_constants: tuple[int, ...] = ()

    def __post_init__(self):
        if self.phi not in PHI_CHOICES:
            raise ValueError(f"phi must be one of {PHI_CHOICES}, got {self.phi!r}")

    def phi_output_resolution(self, resolution: int) -> int:
        if self.phi == "avgpool2x2" or self.phi == "random_half_crop":
            if resolution % 2:
                raise ValueError("resolution must be divisible by 2 for this phi")
            return resolution // 2
        if self.phi == "avgpool4x4":
            if resolution % 4:
                raise ValueError("resolution must be divisible by 4 for avgpool4x4")
            return resolution // 4
        return resolution


def _residual_stack(in_channels: int, ch: int, constants: tuple[int, ...],
                    n_3d: int = 0) -> nn.ModuleList:
    blocks = nn.ModuleList()
    prev = in_channels
    for j, const in enumerate(constants):
        blocks.append(DiscriminatorBlock(prev, ch * const,
                                         downsample=(j < len(constants) - 1),
                                         is_3d=(j < n_3d)))
        prev = ch * const
    return blocks


class SpatialDiscriminator(nn.Module):
    """Scores k uniformly sampled (without replacement) frames and sums them."""

    def __init__(self, config: SpatialDiscConfig, resolution: int, num_classes: int):
        super().__init__()
        self.config = config
        constants = config.layer_constants or disc_layer_constants(resolution)
        self.blocks = _residual_stack(3, config.ch, tuple(constants))
        self.head = ProjectionHead(config.ch * constants[-1], num_classes)

    def sample_frame_indices(self, batch: int, num_frames: int,
                             rng: torch.Generator) -> torch.Tensor:
        k = self.config.k
        if k > num_frames:
            raise ValueError(f"k={k} exceeds clip length {num_frames}")
        rows = [torch.randperm(num_frames, generator=rng)[:k] for _ in range(batch)]
        return torch.stack(rows)

    def score_frames(self, frames: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Per-frame scores for [B, k, 3, H, W]; returns their sum, shape [B]."""
        b, k = frames.shape[:2]
        h = fold_time(frames)
        for block in self.blocks:
            h = block(h)
        feats = F.relu(h).sum(dim=(2, 3))
        scores = self.head(feats, y.repeat_interleave(k))
        return scores.view(b, k).sum(dim=1)

    def forward(self, video: torch.Tensor, y: torch.Tensor,
                rng: torch.Generator) -> torch.Tensor:
        b, t = video.shape[:2]
        idx = self.sample_frame_indices(b, t, rng)
        frames = video[torch.arange(b).unsqueeze(1), idx]
        return self.score_frames(frames, y)


class TemporalDiscriminator(nn.Module):
    """Scores phi(video): 3-D blocks, then per-frame 2-D blocks, features
    sum-pooled over time and space before the projection head."""

    def __init__(self, config: TemporalDiscConfig, resolution: int, num_classes: int):
        super().__init__()
        self.config = config
        inner = config.phi_output_resolution(resolution)
        constants = config.layer_constants or disc_layer_constants(inner)
        self.blocks = _residual_stack(3, config.ch, tuple(constants),
                                      n_3d=min(config.n_3d_blocks, len(constants)))
        self.n_3d = min(config.n_3d_blocks, len(constants))
        self.head = ProjectionHead(config.ch * constants[-1], num_classes)

    def apply_phi(self, video: torch.Tensor,
                  rng: torch.Generator | None = None) -> torch.Tensor:
        """Spatial downsampling on [B, T, 3, H, W]."""
        phi = self.config.phi
        b, t, c, h, w = video.shape
        if phi == "identity":
            return video
        if phi in ("avgpool2x2", "avgpool4x4"):
            size = 2 if phi == "avgpool2x2" else 4
            if h % size or w % size:
                raise ValueError(f"spatial dims ({h}, {w}) not divisible by {size}")
            return unfold_time(F.avg_pool2d(fold_time(video), size), t)
        # random_half_crop: one crop per video per pass, offset uniform
        if rng is None:
            raise ValueError("random_half_crop needs an rng")
        if h % 2 or w % 2:
            raise ValueError("spatial dims must be even for random_half_crop")
        ch_, cw = h // 2, w // 2
        tops = torch.randint(0, h - ch_ + 1, (b,), generator=rng)
        lefts = torch.randint(0, w - cw + 1, (b,), generator=rng)
        crops = [video[i, :, :, tops[i]:tops[i] + ch_, lefts[i]:lefts[i] + cw]
                 for i in range(b)]
        return torch.stack(crops)

    def forward(self, video: torch.Tensor, y: torch.Tensor,
                rng: torch.Generator | None = None) -> torch.Tensor:
        x = self.apply_phi(video, rng)
        b, t = x.shape[:2]
        h = x.permute(0, 2, 1, 3, 4)  # [B, 3, T, H', W'] for the 3-D blocks
        for block in self.blocks[:self.n_3d]:
            h = block(h)
        h = fold_time(h.permute(0, 2, 1, 3, 4))  # fold time into batch
        for block in self.blocks[self.n_3d:]:
            h = block(h)
        feats = F.relu(h).sum(dim=(2, 3))
        feats = feats.view(b, t, -1).sum(dim=1)  # sum-pool over time as well
        return self.head(feats, y)


class PixelBudget(NamedTuple):
    ds_pixels: int
    dt_pixels: int
    total: int
    reduction_fraction: float


def pixel_budget(t: int, h: int, w: int, k: int, phi: str) -> PixelBudget:
    """Pixels consumed by the dual discriminators vs the T*H*W of a full critic."""
    if min(t, h, w, k) < 1:
        raise ValueError("dimensions and k must be positive")
    if phi not in PHI_CHOICES:
        raise ValueError(f"phi must be one of {PHI_CHOICES}")
    ds = k * h * w
    if phi == "identity":
        dt = t * h * w
    elif phi == "avgpool4x4":
        dt = t * (h // 4) * (w // 4)
    else:  # avgpool2x2 and random_half_crop both halve each spatial dim
        dt = t * (h // 2) * (w // 2)
    full = t * h * w
    total = ds + dt
    return PixelBudget(ds, dt, total, 1.0 - total / full)
