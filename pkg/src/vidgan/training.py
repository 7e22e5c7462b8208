"""Adversarial training: hinge losses, a 2:1 discriminator/generator update
schedule, per-network Adam learning rates, an exponential moving average of the
generator, and bit-exact checkpoint/resume.
"""

from __future__ import annotations

import copy
import csv
import os
import pickle
import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import __version__
from .data import ClipBatcher, RawVideo
from .discriminators import (SpatialDiscConfig, SpatialDiscriminator,
                             TemporalDiscConfig, TemporalDiscriminator)
from .generator import Generator, GeneratorConfig
from .nn import init_parameters
from .serialize import canonical_hash, read_pickle, to_plain, to_tensors, write_pickle

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Raised when a training loss becomes non-finite."""


class CheckpointError(RuntimeError):
    """Raised for unreadable, corrupt, or incompatible checkpoint files."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr_g: float = 1e-4
    lr_d: float = 5e-4
    beta1: float = 0.0
    beta2: float = 0.999
    d_steps_per_g: int = 2
    ema_decay: float = 0.9999
    ema_start_step: int = 2000
    total_steps: int = 20000
    ds_weight: float = 1.0
    dt_weight: float = 1.0
    frame_stride: int = 2
    eval_with_running_stats: bool = True

    def __post_init__(self):
        if self.d_steps_per_g < 1:
            raise ValueError("d_steps_per_g must be >= 1")
        if min(self.batch_size, self.total_steps) < 1:
            raise ValueError("batch_size and total_steps must be positive")
        if not (0.0 <= self.ema_decay < 1.0):
            raise ValueError("ema_decay must be in [0, 1)")


def d_loss_hinge(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """mean ReLU(1 - real) + mean ReLU(1 + fake); nonnegative by construction."""
    return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()


def g_loss_hinge(fake_scores: torch.Tensor) -> torch.Tensor:
    """Maximize the critic's score on fakes, written as a minimization."""
    return -fake_scores.mean()


def batch_to_tensor(frames: np.ndarray) -> torch.Tensor:
    """[B, T, H, W, 3] float32 -> [B, T, 3, H, W] tensor."""
    return torch.from_numpy(frames).permute(0, 1, 4, 2, 3).contiguous()


@dataclass
class TrainState:
    generator: torch.nn.Module
    spatial_disc: SpatialDiscriminator
    temporal_disc: TemporalDiscriminator
    ema_generator: torch.nn.Module
    g_opt: torch.optim.Adam
    d_opt: torch.optim.Adam
    model_rng: torch.Generator
    step: int = 0
    g_updates: int = 0
    d_updates: int = 0


def ema_update(state: TrainState, config: TrainConfig) -> None:
    """Copy generator weights verbatim before ema_start_step, then blend with
    decay gamma. Buffers (running stats, spectral vectors) are always copied."""
    g = state.generator
    ema = state.ema_generator
    with torch.no_grad():
        if state.step < config.ema_start_step:
            for p_ema, p in zip(ema.parameters(), g.parameters()):
                p_ema.copy_(p)
        else:
            gamma = config.ema_decay
            for p_ema, p in zip(ema.parameters(), g.parameters()):
                p_ema.mul_(gamma).add_(p, alpha=1.0 - gamma)
        for b_ema, b in zip(ema.buffers(), g.buffers()):
            b_ema.copy_(b)


class Trainer:
    """Owns all mutable training state for one synthesis run.

    The data pipeline feeds batches through `batcher`; evaluation should run on
    the EMA snapshot (`ema_generator` in eval mode) and never mutates state.
    """

    def __init__(self, gen_config: GeneratorConfig, spatial_config: SpatialDiscConfig,
                 temporal_config: TemporalDiscConfig, train_config: TrainConfig,
                 dataset: list[RawVideo], seed: int = 0, out_dir: str | None = None,
                 config_bundle: dict | None = None):
        self.gen_config = gen_config
        self.spatial_config = spatial_config
        self.temporal_config = temporal_config
        self.config = train_config
        self.seed = seed
        self.out_dir = out_dir
        self.config_bundle = config_bundle or {
            "generator": vars(gen_config).copy(),
            "spatial_disc": vars(spatial_config).copy(),
            "temporal_disc": vars(temporal_config).copy(),
            "training": vars(train_config).copy(),
            "seed": seed,
        }
        self.config_hash = canonical_hash(_plain_dict(self.config_bundle))

        generator = self._build_generator()
        init_parameters(generator, seed + 1)
        spatial = SpatialDiscriminator(spatial_config, gen_config.resolution,
                                       gen_config.num_classes)
        init_parameters(spatial, seed + 2)
        temporal = TemporalDiscriminator(temporal_config, gen_config.resolution,
                                         gen_config.num_classes)
        init_parameters(temporal, seed + 3)
        ema = copy.deepcopy(generator)
        for p in ema.parameters():
            p.requires_grad_(False)

        g_opt = torch.optim.Adam(generator.parameters(), lr=train_config.lr_g,
                                 betas=(train_config.beta1, train_config.beta2))
        d_params = list(spatial.parameters()) + list(temporal.parameters())
        d_opt = torch.optim.Adam(d_params, lr=train_config.lr_d,
                                 betas=(train_config.beta1, train_config.beta2))
        model_rng = torch.Generator().manual_seed(seed + 4)
        self.state = TrainState(generator, spatial, temporal, ema, g_opt, d_opt, model_rng)

        self.batcher = ClipBatcher(dataset, train_config.batch_size, gen_config.resolution,
                                   gen_config.clip_length, train_config.frame_stride,
                                   seed=seed + 5)
        self.metrics: MetricsLog | None = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            self.metrics = MetricsLog(os.path.join(out_dir, "metrics.csv"), self.config_hash)

    def _build_generator(self) -> torch.nn.Module:
        return Generator(self.gen_config)

    # hooks overridden by the frame-prediction trainer
    def _real_video(self, batch) -> tuple[torch.Tensor, torch.Tensor]:
        return batch_to_tensor(batch.frames), torch.from_numpy(batch.labels)

    def _sample_fake(self, reference_batch) -> tuple[torch.Tensor, torch.Tensor]:
        c = self.gen_config
        z = torch.randn(self.config.batch_size, c.latent_dim, generator=self.state.model_rng)
        y = torch.randint(0, c.num_classes, (self.config.batch_size,),
                          generator=self.state.model_rng)
        return self.state.generator(z, y=y), y

    def _spatial_scores(self, video: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return self.state.spatial_disc(video, y, self.state.model_rng)

    def _temporal_scores(self, video: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return self.state.temporal_disc(video, y, self.state.model_rng)

    def _disc_loss(self, real, y_real, fake, y_fake) -> tuple[torch.Tensor, dict]:
        ds_real = self._spatial_scores(real, y_real)
        ds_fake = self._spatial_scores(fake, y_fake)
        dt_real = self._temporal_scores(real, y_real)
        dt_fake = self._temporal_scores(fake, y_fake)
        loss = (self.config.ds_weight * d_loss_hinge(ds_real, ds_fake)
                + self.config.dt_weight * d_loss_hinge(dt_real, dt_fake))
        stats = {
            "ds_real_mean": ds_real.mean().item(), "ds_fake_mean": ds_fake.mean().item(),
            "dt_real_mean": dt_real.mean().item(), "dt_fake_mean": dt_fake.mean().item(),
        }
        return loss, stats

    def train_step(self) -> dict:
        """d_steps_per_g discriminator updates (fresh real and fake batches each),
        then one generator update; the step counter tracks generator updates."""
        state, cfg = self.state, self.config
        stats: dict = {}
        for _ in range(cfg.d_steps_per_g):
            batch = self.batcher.next_batch()
            real, y_real = self._real_video(batch)
            with torch.no_grad():
                fake, y_fake = self._sample_fake(batch)
            state.d_opt.zero_grad(set_to_none=True)
            d_loss, score_stats = self._disc_loss(real, y_real, fake, y_fake)
            self._check_finite("d_loss", d_loss)
            d_loss.backward()
            state.d_opt.step()
            state.d_updates += 1
            stats.update(score_stats)
            stats["d_loss"] = d_loss.item()

        batch = self.batcher.next_batch()
        state.g_opt.zero_grad(set_to_none=True)
        state.d_opt.zero_grad(set_to_none=True)
        fake, y_fake = self._sample_fake(batch)
        g_loss = (self.config.ds_weight * g_loss_hinge(self._spatial_scores(fake, y_fake))
                  + self.config.dt_weight * g_loss_hinge(self._temporal_scores(fake, y_fake)))
        self._check_finite("g_loss", g_loss)
        g_loss.backward()
        state.g_opt.step()
        state.d_opt.zero_grad(set_to_none=True)
        state.g_updates += 1
        state.step += 1
        ema_update(state, cfg)
        stats["g_loss"] = g_loss.item()
        stats["step"] = state.step
        return stats

    def _check_finite(self, name: str, loss: torch.Tensor) -> None:
        if not torch.isfinite(loss):
            raise DivergenceError(
                f"{name} became non-finite ({loss.item()}) at step {self.state.step}; "
                f"training aborted")

    def run(self, total_steps: int | None = None, log_every: int = 10,
            checkpoint_every: int = 0, eval_every: int = 0, eval_fn=None,
            start_time: float | None = None) -> None:
        total = total_steps if total_steps is not None else self.config.total_steps
        t0 = start_time if start_time is not None else time.time()
        while self.state.step < total:
            stats = self.train_step()
            step = self.state.step
            row = dict(stats)
            if eval_every and eval_fn is not None and (step % eval_every == 0 or step == total):
                fid_value, is_value = eval_fn(self)
                row["fid"] = fid_value
                row["is"] = is_value
            if self.metrics is not None and (step % log_every == 0 or step == total
                                             or "fid" in row):
                row["wall_time_s"] = time.time() - t0
                self.metrics.log(**row)
            if checkpoint_every and self.out_dir and (step % checkpoint_every == 0
                                                      or step == total):
                self.save(os.path.join(self.out_dir, "checkpoint.pkl"))

    # checkpointing -----------------------------------------------------------

    def save(self, path: str) -> None:
        save_checkpoint(self.state, path, self.config_bundle,
                        data_state=self.batcher.state())

    def restore(self, path: str) -> None:
        payload = load_checkpoint(path, expected_config=self.config_bundle)
        state = self.state
        state.generator.load_state_dict(to_tensors(payload["generator"]))
        state.spatial_disc.load_state_dict(to_tensors(payload["spatial_disc"]))
        state.temporal_disc.load_state_dict(to_tensors(payload["temporal_disc"]))
        state.ema_generator.load_state_dict(to_tensors(payload["ema_generator"]))
        state.g_opt.load_state_dict(to_tensors(payload["g_opt"]))
        state.d_opt.load_state_dict(to_tensors(payload["d_opt"]))
        state.model_rng.set_state(torch.from_numpy(payload["model_rng"].copy()))
        state.step = payload["step"]
        state.g_updates = payload["g_updates"]
        state.d_updates = payload["d_updates"]
        self.batcher.set_state(payload["data_state"])


def _plain_dict(obj):
    if isinstance(obj, dict):
        return {k: _plain_dict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain_dict(v) for v in obj]
    return obj


def save_checkpoint(state: TrainState, path: str, config_bundle: dict,
                    data_state: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "version": __version__,
        "config": _plain_dict(config_bundle),
        "config_hash": canonical_hash(_plain_dict(config_bundle)),
        "step": state.step,
        "g_updates": state.g_updates,
        "d_updates": state.d_updates,
        "generator": to_plain(state.generator.state_dict()),
        "spatial_disc": to_plain(state.spatial_disc.state_dict()),
        "temporal_disc": to_plain(state.temporal_disc.state_dict()),
        "ema_generator": to_plain(state.ema_generator.state_dict()),
        "g_opt": to_plain(state.g_opt.state_dict()),
        "d_opt": to_plain(state.d_opt.state_dict()),
        "model_rng": state.model_rng.get_state().numpy(),
        "data_state": data_state,
    }
    write_pickle(payload, path)


def load_checkpoint(path: str, expected_config: dict | None = None) -> dict:
    if not os.path.isfile(path):
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        payload = read_pickle(path)
    except (pickle.UnpicklingError, EOFError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"corrupt checkpoint {path}: missing format header")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format {payload['format_version']} != supported {CHECKPOINT_VERSION}")
    if expected_config is not None:
        expected_hash = canonical_hash(_plain_dict(expected_config))
        if payload["config_hash"] != expected_hash:
            raise CheckpointError(
                "checkpoint config hash mismatch: "
                f"{payload['config_hash'][:12]} vs expected {expected_hash[:12]}")
    return payload


class MetricsLog:
    """Append-only CSV with a fixed column set; missing values log as blanks."""

    COLUMNS = ("step", "d_loss", "g_loss", "ds_real_mean", "ds_fake_mean",
               "dt_real_mean", "dt_fake_mean", "fid", "is", "wall_time_s")

    def __init__(self, path: str, config_hash: str):
        self.path = path
        if not os.path.exists(path):
            with open(path, "w", newline="") as f:
                f.write(f"# config_hash={config_hash} version={__version__}\n")
                csv.writer(f).writerow(self.COLUMNS)

    def log(self, **values) -> None:
        row = [values.get(c, "") for c in self.COLUMNS]
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow(row)

    @staticmethod
    def read(path: str) -> list[dict]:
        with open(path) as f:
            lines = [ln for ln in f if not ln.startswith("#")]
        reader = csv.DictReader(lines)
        return list(reader)
