"""Video preprocessing and the synthetic moving-shapes dataset.

All operations are pure functions of (input, rng state), so the pipeline is
deterministic under a fixed seed and safe to run on parallel workers that own
independent rng streams.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np


@dataclass
class RawVideo:
    """Unprocessed clip: [T, H, W, 3] pixels in [0, 255] plus a class id."""

    frames: np.ndarray
    label: int

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"expected [T, H, W, 3] frames, got {self.frames.shape}")
        if self.frames.shape[0] < 1 or min(self.frames.shape[1:3]) < 1:
            raise ValueError("video must have at least one frame and nonzero spatial dims")


@dataclass
class Clip:
    """Preprocessed sample: [T, R, R, 3] float32 in [-1, 1] plus a class id."""

    frames: np.ndarray
    label: int


@dataclass
class SyntheticDatasetConfig:
    num_classes: int = 4
    resolution: int = 32
    clip_length: int = 8
    shapes_per_video: int = 1
    velocity_range: tuple[float, float] = (0.5, 0.9)  # raw pixels per raw frame
    dataset_size: int = 400
    seed: int = 0
    # raw videos are rendered larger and longer than the training clips so the
    # resize / crop / temporal-sampling stages all do real work
    raw_margin: float = 1.25
    raw_length_slack: int = 4
    frame_stride: int = 2

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.resolution < 16:
            raise ValueError("resolution must be >= 16")
        if self.clip_length < 4:
            raise ValueError("clip_length must be >= 4")

    @property
    def raw_resolution(self) -> int:
        return int(math.ceil(self.resolution * self.raw_margin))

    @property
    def raw_length(self) -> int:
        return (self.clip_length - 1) * self.frame_stride + 1 + self.raw_length_slack


def resize_preserve_aspect(video: RawVideo, target: int) -> RawVideo:
    """Bilinear resize so the smaller spatial dimension maps to `target` pixels.

    The longer dimension is scaled by the same factor and rounded half-up.
    """
    import torch
    import torch.nn.functional as F

    if target < 1:
        raise ValueError("target must be >= 1")
    t, h, w, _ = video.frames.shape
    if t == 0:
        raise ValueError("video has no frames")
    if h <= w:
        new_h = target
        new_w = int(math.floor(w * target / h + 0.5))
    else:
        new_w = target
        new_h = int(math.floor(h * target / w + 0.5))
    if (new_h, new_w) == (h, w):
        return RawVideo(video.frames.copy(), video.label)
    x = torch.from_numpy(np.ascontiguousarray(video.frames, dtype=np.float32))
    x = x.permute(0, 3, 1, 2)  # [T, 3, H, W]
    y = F.interpolate(x, size=(new_h, new_w), mode="bilinear", align_corners=False)
    out = y.permute(0, 2, 3, 1).clamp_(0.0, 255.0).numpy()
    return RawVideo(out, video.label)


def random_crop(video: RawVideo, size: int, rng: np.random.Generator) -> RawVideo:
    """Crop a size x size window at an offset drawn uniformly over valid positions."""
    t, h, w, _ = video.frames.shape
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds video dims ({h}, {w})")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return RawVideo(video.frames[:, top : top + size, left : left + size].copy(), video.label)


def sample_clip(video: RawVideo, num_frames: int, stride: int, rng: np.random.Generator) -> RawVideo:
    """Take `num_frames` frames at the given stride from a uniform random start."""
    t = video.frames.shape[0]
    span = (num_frames - 1) * stride + 1
    if t < span:
        raise ValueError(f"video has {t} frames, need {span} for {num_frames} at stride {stride}")
    start = int(rng.integers(0, t - span + 1))
    idx = start + stride * np.arange(num_frames)
    return RawVideo(video.frames[idx].copy(), video.label)


def normalize_clip(video: RawVideo) -> Clip:
    """Map pixel values affinely from [0, 255] to [-1, 1]."""
    frames = video.frames.astype(np.float32) / 127.5 - 1.0
    return Clip(frames, video.label)


def _class_direction(label: int, num_classes: int) -> tuple[float, float]:
    # class 0 moves rightward (+x); classes sweep the circle counterclockwise
    angle = 2.0 * math.pi * label / num_classes
    return math.cos(angle), math.sin(angle)


def _render_shape(frame: np.ndarray, kind: int, cx: float, cy: float, radius: float,
                  color: np.ndarray) -> None:
    # soft (anti-aliased) coverage so sub-pixel motion moves the centroid
    h, w, _ = frame.shape
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:  # square
        cov_x = np.clip(radius + 0.5 - np.abs(xx - cx), 0.0, 1.0)
        cov_y = np.clip(radius + 0.5 - np.abs(yy - cy), 0.0, 1.0)
        coverage = cov_x * cov_y
    elif kind == 1:  # disc
        dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
        coverage = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    else:  # diamond
        dist = np.abs(xx - cx) + np.abs(yy - cy)
        coverage = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    alpha = coverage[..., None]
    frame[:] = frame * (1.0 - alpha) + color * alpha


def _sample_start(rng: np.random.Generator, lo: float, hi: float, v: float,
                  length: int) -> float:
    """Start coordinate uniform over positions that avoid a wall for `length`
    frames when such positions exist; uniform over the full range otherwise."""
    travel = v * length
    clear_lo = lo + max(0.0, -travel)
    clear_hi = hi - max(0.0, travel)
    if clear_hi > clear_lo:
        return rng.uniform(clear_lo, clear_hi)
    return rng.uniform(lo, hi)


def _synthesize_video(config: SyntheticDatasetConfig, label: int,
                      rng: np.random.Generator) -> RawVideo:
    res = config.raw_resolution
    length = config.raw_length
    dx, dy = _class_direction(label, config.num_classes)
    frames = np.zeros((length, res, res, 3), dtype=np.float64)
    background = rng.uniform(0.0, 60.0, size=3)
    frames[:] = background

    for _ in range(config.shapes_per_video):
        speed = rng.uniform(*config.velocity_range)
        radius = rng.uniform(0.10, 0.16) * res
        kind = int(rng.integers(0, 3))
        color = rng.uniform(120.0, 255.0, size=3)
        vx, vy = dx * speed, dy * speed
        cx = _sample_start(rng, radius, res - 1 - radius, vx, length)
        cy = _sample_start(rng, radius, res - 1 - radius, vy, length)
        for t in range(length):
            _render_shape(frames[t], kind, cx, cy, radius, color)
            cx += vx
            cy += vy
            if cx < radius or cx > res - 1 - radius:  # bounce off walls
                vx = -vx
                cx = min(max(cx, radius), res - 1 - radius)
            if cy < radius or cy > res - 1 - radius:
                vy = -vy
                cy = min(max(cy, radius), res - 1 - radius)

    return RawVideo(np.clip(frames, 0.0, 255.0).astype(np.uint8), label)


def generate_synthetic_dataset(config: SyntheticDatasetConfig) -> list[RawVideo]:
    """Render colored shapes whose motion direction is determined by the class.

    Labels are balanced by construction and the output is bit-identical for a
    fixed config. Position, size, color and shape kind are randomized per video
    so single frames carry no class signal; only the temporal dynamics do.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.dataset_size)
    videos = []
    for i in range(config.dataset_size):
        label = i % config.num_classes
        videos.append(_synthesize_video(config, label, np.random.default_rng(seeds[i])))
    return videos


def preprocess(video: RawVideo, resolution: int, clip_length: int, stride: int,
               rng: np.random.Generator) -> Clip:
    """Full pipeline: aspect-preserving resize, random crop, clip sampling, scaling."""
    video = resize_preserve_aspect(video, resolution)
    video = random_crop(video, resolution, rng)
    video = sample_clip(video, clip_length, stride, rng)
    return normalize_clip(video)


@dataclass
class Batch:
    frames: np.ndarray  # [B, T, R, R, 3] float32 in [-1, 1]
    labels: np.ndarray  # [B] int64


class ClipBatcher:
    """Epoch-shuffled batch stream with full preprocessing per access.

    Crops and temporal offsets are resampled every time a video is visited.
    Each replica should construct its own batcher with an independent seed.
    """

    def __init__(self, dataset: list[RawVideo], batch_size: int, resolution: int,
                 clip_length: int, stride: int, seed: int = 0):
        if not dataset:
            raise ValueError("dataset is empty")
        self.dataset = dataset
        self.batch_size = batch_size
        self.resolution = resolution
        self.clip_length = clip_length
        self.stride = stride
        self.rng = np.random.default_rng(seed)
        self._order: list[int] = []

    def _next_index(self) -> int:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.dataset)))
        return self._order.pop()

    def next_batch(self) -> Batch:
        frames, labels = [], []
        for _ in range(self.batch_size):
            clip = preprocess(self.dataset[self._next_index()], self.resolution,
                              self.clip_length, self.stride, self.rng)
            frames.append(clip.frames)
            labels.append(clip.label)
        return Batch(np.stack(frames), np.asarray(labels, dtype=np.int64))

    def state(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "order": list(self._order)}

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
        self._order = list(state["order"])


def make_batch(dataset: list[RawVideo], batch_size: int, rng: np.random.Generator,
               resolution: int, clip_length: int, stride: int = 2) -> Batch:
    """One-shot batch assembly from a shuffled dataset (no epoch bookkeeping)."""
    if not dataset:
        raise ValueError("dataset is empty")
    if batch_size <= len(dataset):
        order = rng.permutation(len(dataset))[:batch_size]
    else:
        order = rng.integers(0, len(dataset), size=batch_size)
    frames, labels = [], []
    for i in order:
        clip = preprocess(dataset[int(i)], resolution, clip_length, stride, rng)
        frames.append(clip.frames)
        labels.append(clip.label)
    return Batch(np.stack(frames), np.asarray(labels, dtype=np.int64))


def dataset_fingerprint(videos: list[RawVideo]) -> str:
    """Content hash of a dataset (labels, shapes, pixel bytes)."""
    import hashlib

    digest = hashlib.sha256()
    for video in videos:
        digest.update(str(video.label).encode())
        digest.update(str(video.frames.shape).encode())
        digest.update(np.ascontiguousarray(video.frames, dtype=np.uint8).tobytes())
    return digest.hexdigest()


INDEX_FILE = "index.tsv"


def save_dataset(videos: list[RawVideo], directory: str) -> None:
    """Write per-video raw tensor files plus a tab-separated index.

    Byte layout per file: unsigned 8-bit pixels, frame-major ([T, H, W, 3] C order).
    """
    os.makedirs(directory, exist_ok=True)
    lines = []
    for i, video in enumerate(videos):
        name = f"video_{i:06d}.raw"
        data = np.ascontiguousarray(video.frames, dtype=np.uint8)
        with open(os.path.join(directory, name), "wb") as f:
            f.write(data.tobytes())
        t, h, w, _ = video.frames.shape
        lines.append(f"{name}\t{video.label}\t{t}\t{h}\t{w}")
    with open(os.path.join(directory, INDEX_FILE), "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(directory: str) -> list[RawVideo]:
    index = os.path.join(directory, INDEX_FILE)
    if not os.path.isfile(index):
        raise FileNotFoundError(f"no {INDEX_FILE} in {directory}")
    videos = []
    with open(index) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            path, label, t, h, w = line.split("\t")
            shape = (int(t), int(h), int(w), 3)
            raw = np.fromfile(os.path.join(directory, path), dtype=np.uint8)
            if raw.size != math.prod(shape):
                raise ValueError(f"{path}: expected {math.prod(shape)} bytes, got {raw.size}")
            videos.append(RawVideo(raw.reshape(shape), int(label)))
    return videos
