"""Video generator: latent + class embedding -> 4x4 seed -> stacked
[ConvGRU over time, two per-frame residual blocks] groups -> tanh video.

Each group's recurrent cell consumes the previous group's per-frame features
(the first consumes the seed at every step); upsampling happens inside the
residual blocks, so group i's cell runs at the incoming resolution. The
concatenated [z; e(y)] vector conditions every conditional batch norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .nn import ConvGRUCell, GeneratorBlock, TimeBatchNorm, fold_time, unfold_time

DEFAULT_LAYER_CONSTANTS = {
    16: (8, 4, 2),
    32: (8, 8, 4, 2),
    64: (8, 8, 8, 4, 2),
    128: (8, 8, 8, 4, 2, 1),
}


def default_layer_constants(resolution: int) -> tuple[int, ...]:
    if resolution not in DEFAULT_LAYER_CONSTANTS:
        raise ValueError(f"no default layer constants for resolution {resolution}; pass them")
    return DEFAULT_LAYER_CONSTANTS[resolution]


@dataclass
class GeneratorConfig:
    resolution: int = 32
    clip_length: int = 8
    ch: int = 32
    layer_constants: tuple[int, ...] = ()
    num_classes: int = 4
    latent_dim: int = 120
    embedding_dim: int = 120
    spectral_norm: bool = False

    def __post_init__(self):
        if not self.layer_constants:
            self.layer_constants = default_layer_constants(self.resolution)
        self.layer_constants = tuple(self.layer_constants)
        expected = 4 * 2 ** (len(self.layer_constants) - 1)
        if self.resolution != expected:
            raise ValueError(
                f"resolution {self.resolution} inconsistent with {len(self.layer_constants)} "
                f"groups (first group keeps 4x4, the rest double: expected {expected})")
        if self.clip_length < 1:
            raise ValueError("clip_length must be >= 1")

    @property
    def cond_dim(self) -> int:
        return self.latent_dim + self.embedding_dim

    @property
    def ch0(self) -> int:
        return self.ch * self.layer_constants[0]

    def group_channels(self) -> list[tuple[int, int]]:
        """(input, output) channel widths per group."""
        consts = self.layer_constants
        return [(self.ch * consts[max(i - 1, 0)], self.ch * consts[i])
                for i in range(len(consts))]

    def gru_resolutions(self) -> list[int]:
        """Spatial size at which each group's recurrent cell runs."""
        return [4 * 2 ** max(i - 1, 0) for i in range(len(self.layer_constants))]


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        c = config
        self.embed = nn.Embedding(c.num_classes, c.embedding_dim)
        self.seed_affine = nn.Linear(c.cond_dim, 4 * 4 * c.ch0)
        self.grus = nn.ModuleList()
        self.blocks_a = nn.ModuleList()
        self.blocks_b = nn.ModuleList()
        for i, (w_in, w_out) in enumerate(c.group_channels()):
            self.grus.append(ConvGRUCell(w_in, w_in))
            self.blocks_a.append(GeneratorBlock(c.clip_length, w_in, w_out, c.cond_dim,
                                                upsample=(i > 0), spectral_norm=c.spectral_norm))
            self.blocks_b.append(GeneratorBlock(c.clip_length, w_out, w_out, c.cond_dim,
                                                upsample=False, spectral_norm=c.spectral_norm))
        w_last = c.ch * c.layer_constants[-1]
        self.final_bn = TimeBatchNorm(c.clip_length, w_last, affine=True)
        self.final_conv = nn.Conv2d(w_last, 3, 3, padding=1)

    def class_embedding(self, y: torch.Tensor) -> torch.Tensor:
        if y.min() < 0 or y.max() >= self.config.num_classes:
            raise ValueError(f"class id out of range [0, {self.config.num_classes})")
        return self.embed(y)

    def forward(self, z: torch.Tensor, y: torch.Tensor | None = None,
                class_embedding: torch.Tensor | None = None,
                initial_states: list[torch.Tensor] | None = None) -> torch.Tensor:
        """Returns a video batch [B, T, 3, R, R] with values in [-1, 1]."""
        c = self.config
        if z.shape[-1] != c.latent_dim:
            raise ValueError(f"latent dim {z.shape[-1]} != {c.latent_dim}")
        if (y is None) == (class_embedding is None):
            raise ValueError("pass exactly one of y or class_embedding")
        e = self.class_embedding(y) if y is not None else class_embedding
        cond = torch.cat([z, e], dim=1)
        b, t = z.shape[0], c.clip_length

        seed = self.seed_affine(cond).view(b, c.ch0, 4, 4)
        x = seed.unsqueeze(1).expand(b, t, c.ch0, 4, 4)  # same seed at every unroll step
        for i, (gru, block_a, block_b) in enumerate(zip(self.grus, self.blocks_a, self.blocks_b)):
            if initial_states is not None:
                h = initial_states[i]
            else:
                h = gru.initial_state(b, x.shape[-2], x.shape[-1],
                                      dtype=x.dtype, device=x.device)
            states = []
            for step in range(t):
                h = gru(x[:, step], h)
                states.append(h)
            x = torch.stack(states, dim=1)
            x = block_a(x, cond)
            x = block_b(x, cond)
        x = self.final_bn(x)
        x = fold_time(F.relu(x))
        x = torch.tanh(self.final_conv(x))
        return unfold_time(x, t)


def sample_latents(n: int, latent_dim: int, stddev: float,
                   rng: torch.Generator) -> torch.Tensor:
    if not 0.0 <= stddev <= 1.0:
        raise ValueError("stddev must be within [0, 1]")
    return stddev * torch.randn(n, latent_dim, generator=rng)


def sample_truncated(generator: Generator, stddev: float, y: torch.Tensor,
                     rng: torch.Generator) -> torch.Tensor:
    """Generate with latents drawn from N(0, stddev^2 I); stddev=1 is ordinary sampling."""
    z = sample_latents(y.shape[0], generator.config.latent_dim, stddev, rng)
    with torch.no_grad():
        return generator(z, y=y)


def interpolate_latent(generator: Generator, z1: torch.Tensor, z2: torch.Tensor,
                       y: int, steps: int) -> torch.Tensor:
    """Videos along the straight line from z1 to z2 under a fixed class."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    alphas = torch.linspace(0.0, 1.0, steps).view(steps, 1)
    z = (1.0 - alphas) * z1.view(1, -1) + alphas * z2.view(1, -1)
    labels = torch.full((steps,), int(y), dtype=torch.long)
    with torch.no_grad():
        return generator(z, y=labels)


def interpolate_class(generator: Generator, z: torch.Tensor, y1: int, y2: int,
                      steps: int) -> torch.Tensor:
    """Videos along the straight line between two class embeddings, fixed latent.

    Intermediate embeddings are valid inputs even though never seen in training.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    labels = torch.tensor([int(y1), int(y2)], dtype=torch.long)
    e = generator.class_embedding(labels)
    alphas = torch.linspace(0.0, 1.0, steps).view(steps, 1)
    emb = (1.0 - alphas) * e[0].view(1, -1) + alphas * e[1].view(1, -1)
    z_rep = z.view(1, -1).expand(steps, -1)
    with torch.no_grad():
        return generator(z_rep, class_embedding=emb)
