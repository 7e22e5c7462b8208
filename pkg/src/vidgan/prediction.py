"""Frame-conditional generation: a residual encoder (mirroring the spatial
discriminator's stack) turns C conditioning frames into per-scale initial
states for the generator's recurrent cells. The emitted video is the
conditioning frames followed by the generated continuation; the spatial
discriminator never samples the conditioning range, the temporal discriminator
sees the full concatenation with no marker.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import RawVideo
from .discriminators import (SpatialDiscConfig, TemporalDiscConfig,
                             disc_layer_constants)
from .generator import Generator, GeneratorConfig
from .nn import DiscriminatorBlock
from .training import TrainConfig, Trainer, batch_to_tensor


@dataclass
class FPConfig:
    num_cond_frames: int = 2
    t_gen: int = 6  # generated frames; clips are num_cond_frames + t_gen long
    encoder_ch: int = 32

    def __post_init__(self):
        if self.num_cond_frames < 1:
            raise ValueError("num_cond_frames must be >= 1")
        if self.t_gen < 1:
            raise ValueError("t_gen must be >= 1")

    @property
    def clip_length(self) -> int:
        return self.num_cond_frames + self.t_gen


class ConditioningEncoder(nn.Module):
    """Per-frame residual encoder whose block outputs seed the generator.

    Each conditioning frame passes independently through the residual stack;
    after every block the C frames' features are stacked channelwise and mapped
    by a 3x3 conv + ReLU to the hidden size of the recurrent cell at the
    matching resolution. The deepest (smallest) features feed the earliest
    generator scale.
    """

    def __init__(self, gen_config: GeneratorConfig, num_cond_frames: int,
                 encoder_ch: int = 32):
        super().__init__()
        self.num_cond_frames = num_cond_frames
        self.resolution = gen_config.resolution
        constants = disc_layer_constants(gen_config.resolution)
        n = len(gen_config.layer_constants)
        if len(constants) != n:
            raise ValueError("encoder depth does not match the generator group count")
        gru_channels = [w_in for w_in, _ in gen_config.group_channels()]
        gru_res = gen_config.gru_resolutions()

        self.blocks = nn.ModuleList()
        self.heads = nn.ModuleList()
        prev = 3
        for j, const in enumerate(constants):
            out = encoder_ch * const
            self.blocks.append(DiscriminatorBlock(prev, out, downsample=(j < n - 1),
                                                  spectral_norm=False))
            paired = n - 1 - j  # deepest encoder output -> first generator group
            self.heads.append(nn.Conv2d(num_cond_frames * out, gru_channels[paired],
                                        3, padding=1))
            prev = out
        self._paired_res = [gru_res[n - 1 - j] for j in range(n)]

    def forward(self, frames: torch.Tensor) -> list[torch.Tensor]:
        """[B, C, 3, H, W] -> initial recurrent states ordered by generator group."""
        b, c = frames.shape[:2]
        if c != self.num_cond_frames:
            raise ValueError(f"expected {self.num_cond_frames} conditioning frames, got {c}")
        if frames.shape[-1] != self.resolution or frames.shape[-2] != self.resolution:
            raise ValueError(f"conditioning frames must be {self.resolution}px, "
                             f"got {tuple(frames.shape[-2:])}")
        x = frames.reshape(b * c, *frames.shape[2:])
        states: list[torch.Tensor | None] = [None] * len(self.blocks)
        for j, (block, head) in enumerate(zip(self.blocks, self.heads)):
            x = block(x)
            stacked = x.reshape(b, c * x.shape[1], *x.shape[2:])
            states[len(self.blocks) - 1 - j] = F.relu(head(stacked))
        return states  # type: ignore[return-value]


class FramePredictionModel(nn.Module):
    """Generator plus conditioning encoder; class id is fixed to 0."""

    def __init__(self, gen_config: GeneratorConfig, fp_config: FPConfig):
        super().__init__()
        if gen_config.clip_length != fp_config.t_gen:
            raise ValueError("generator clip_length must equal t_gen")
        self.gen_config = gen_config
        self.fp_config = fp_config
        self.generator = Generator(gen_config)
        self.encoder = ConditioningEncoder(gen_config, fp_config.num_cond_frames,
                                           fp_config.encoder_ch)

    def forward(self, cond_frames: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """[B, C, 3, R, R] + latents -> [B, C + t_gen, 3, R, R].

        The conditioning frames are passed through unchanged at the front.
        """
        if cond_frames.min() < -1.0 - 1e-6 or cond_frames.max() > 1.0 + 1e-6:
            raise ValueError("conditioning frames must lie in [-1, 1]")
        states = self.encoder(cond_frames)
        y = torch.zeros(z.shape[0], dtype=torch.long)
        generated = self.generator(z, y=y, initial_states=states)
        return torch.cat([cond_frames, generated], dim=1)


def fp_discriminator_views(cond_frames: torch.Tensor, generated: torch.Tensor,
                           k: int, rng: torch.Generator
                           ) -> tuple[torch.Tensor, torch.Tensor]:
    """Discriminator inputs for frame prediction.

    The temporal critic sees the full [conditioning; generated] concatenation;
    the spatial critic's k frames are sampled (without replacement) only from
    indices >= C, for real and generated data alike.
    """
    c = cond_frames.shape[1]
    t_gen = generated.shape[1]
    if k > t_gen:
        raise ValueError(f"k={k} exceeds the {t_gen} generated frames")
    dt_video = torch.cat([cond_frames, generated], dim=1)
    b = dt_video.shape[0]
    idx = torch.stack([c + torch.randperm(t_gen, generator=rng)[:k] for _ in range(b)])
    ds_frames = dt_video[torch.arange(b).unsqueeze(1), idx]
    return ds_frames, dt_video


class FPTrainer(Trainer):
    """Adversarial trainer for the frame-prediction variant.

    Real clips are num_cond_frames + t_gen long (stride 1 by default); fakes
    are continuations of the real batch's conditioning frames.
    """

    def __init__(self, gen_config: GeneratorConfig, spatial_config: SpatialDiscConfig,
                 temporal_config: TemporalDiscConfig, train_config: TrainConfig,
                 fp_config: FPConfig, dataset: list[RawVideo], seed: int = 0,
                 out_dir: str | None = None):
        self.fp_config = fp_config
        bundle = {
            "mode": "prediction",
            "generator": vars(gen_config).copy(),
            "spatial_disc": vars(spatial_config).copy(),
            "temporal_disc": vars(temporal_config).copy(),
            "training": vars(train_config).copy(),
            "prediction": vars(fp_config).copy(),
            "seed": seed,
        }
        super().__init__(gen_config, spatial_config, temporal_config, train_config,
                         dataset, seed=seed, out_dir=out_dir, config_bundle=bundle)
        # clips must cover the conditioning frames plus the generated range
        self.batcher.clip_length = fp_config.clip_length

    def _build_generator(self) -> nn.Module:
        return FramePredictionModel(self.gen_config, self.fp_config)

    def _real_video(self, batch):
        video = batch_to_tensor(batch.frames)
        y = torch.zeros(video.shape[0], dtype=torch.long)  # no class conditioning
        return video, y

    def _sample_fake(self, reference_batch):
        video = batch_to_tensor(reference_batch.frames)
        cond = video[:, : self.fp_config.num_cond_frames]
        z = torch.randn(video.shape[0], self.gen_config.latent_dim,
                        generator=self.state.model_rng)
        fake = self.state.generator(cond, z)
        return fake, torch.zeros(video.shape[0], dtype=torch.long)

    def _spatial_scores(self, video: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        c = self.fp_config.num_cond_frames
        ds_frames, _ = fp_discriminator_views(video[:, :c], video[:, c:],
                                              self.spatial_config.k, self.state.model_rng)
        return self.state.spatial_disc.score_frames(ds_frames, y)
