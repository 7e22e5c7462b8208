"""FID and Inception Score over features from a pluggable video classifier.

A small 3-D convolutional classifier trained on the synthetic motion classes
stands in for a large pretrained video network: it exposes pre-logit pooled
features (default) or logits, and refuses to freeze below an accuracy gate so
metric numbers always cite a meaningful extractor (by checkpoint hash).
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import ClipBatcher, RawVideo, preprocess
from .serialize import to_plain

NEG_EIGENVALUE_TOL = 1e-10


@dataclass
class ClassifierConfig:
    base_channels: int = 16
    lr: float = 2e-3
    batch_size: int = 32
    max_epochs: int = 30
    accuracy_threshold: float = 0.9
    holdout_fraction: float = 0.2
    seed: int = 0


@dataclass
class EvalConfig:
    num_samples: int = 2048
    is_splits: int = 10
    feature_source: str = "avgpool"  # or "logits"
    batch_size: int = 32
    stddev_sweep: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        if self.feature_source not in ("avgpool", "logits"):
            raise ValueError("feature_source must be 'avgpool' or 'logits'")


class VideoClassifier(nn.Module):
    """3-D convnet: three conv/pool stages, global average pool, linear head."""

    def __init__(self, num_classes: int, base_channels: int = 16):
        super().__init__()
        c = base_channels
        self.stem = nn.Sequential(
            nn.Conv3d(3, c, 3, padding=1), nn.ReLU(),
            nn.AvgPool3d((1, 2, 2)),
            nn.Conv3d(c, 2 * c, 3, padding=1), nn.ReLU(),
            nn.AvgPool3d(2),
            nn.Conv3d(2 * c, 4 * c, 3, padding=1), nn.ReLU(),
        )
        self.feature_dim = 4 * c
        self.fc = nn.Linear(self.feature_dim, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-logit pooled features for [B, 3, T, H, W] input."""
        h = self.stem(x)
        return h.mean(dim=(2, 3, 4))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.features(x))


class FeatureExtractor:
    """Frozen classifier exposing (features, class probabilities) per video."""

    def __init__(self, model: VideoClassifier, feature_source: str = "avgpool"):
        if feature_source not in ("avgpool", "logits"):
            raise ValueError("feature_source must be 'avgpool' or 'logits'")
        self.model = model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.feature_source = feature_source
        self.checkpoint_hash = self._hash_weights()

    def _hash_weights(self) -> str:
        digest = hashlib.sha256()
        for name, value in sorted(to_plain(self.model.state_dict()).items()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(value).tobytes())
        return digest.hexdigest()

    @property
    def feature_dim(self) -> int:
        if self.feature_source == "logits":
            return self.model.fc.out_features
        return self.model.feature_dim

    def extract(self, videos: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
        """[B, T, 3, H, W] in [-1, 1] -> (features [B, d], probabilities [B, K])."""
        with torch.no_grad():
            x = videos.permute(0, 2, 1, 3, 4)
            feats = self.model.features(x)
            logits = self.model.fc(feats)
            probs = torch.softmax(logits, dim=-1)
        out = logits if self.feature_source == "logits" else feats
        return out.numpy().astype(np.float64), probs.numpy().astype(np.float64)

    def save(self, path: str) -> None:
        torch.save({"state_dict": self.model.state_dict(),
                    "num_classes": self.model.fc.out_features,
                    "base_channels": self.model.feature_dim // 4,
                    "feature_source": self.feature_source}, path)

    @staticmethod
    def load(path: str) -> "FeatureExtractor":
        payload = torch.load(path, weights_only=True)
        model = VideoClassifier(payload["num_classes"], payload["base_channels"])
        model.load_state_dict(payload["state_dict"])
        return FeatureExtractor(model, payload["feature_source"])


def split_holdout(dataset: list[RawVideo], fraction: float) -> tuple[list, list]:
    """Deterministic stratified split (labels cycle, so striding stratifies)."""
    stride = max(2, int(round(1.0 / max(fraction, 1e-9))))
    held = [v for i, v in enumerate(dataset) if i % stride == 0]
    train = [v for i, v in enumerate(dataset) if i % stride != 0]
    return train, held


def _accuracy(model: VideoClassifier, videos: list[RawVideo], resolution: int,
              clip_length: int, stride: int, seed: int, batch_size: int = 32) -> float:
    rng = np.random.default_rng(seed)
    correct = 0
    model.eval()
    for start in range(0, len(videos), batch_size):
        chunk = videos[start:start + batch_size]
        clips = [preprocess(v, resolution, clip_length, stride, rng) for v in chunk]
        x = torch.from_numpy(np.stack([c.frames for c in clips]))
        x = x.permute(0, 4, 1, 2, 3)  # [B, 3, T, H, W]
        labels = torch.tensor([c.label for c in clips])
        with torch.no_grad():
            pred = model(x).argmax(dim=-1)
        correct += (pred == labels).sum().item()
    return correct / len(videos)


def train_eval_classifier(dataset: list[RawVideo], config: ClassifierConfig,
                          num_classes: int, resolution: int, clip_length: int,
                          stride: int = 2, feature_source: str = "avgpool",
                          verbose: bool = False) -> FeatureExtractor:
    """Train the metric classifier to the held-out accuracy gate, then freeze it.

    Raises if the gate is never reached: FID/IS numbers from an extractor that
    cannot separate the classes would be meaningless.
    """
    torch.manual_seed(config.seed)
    train, held = split_holdout(dataset, config.holdout_fraction)
    model = VideoClassifier(num_classes, config.base_channels)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    batcher = ClipBatcher(train, config.batch_size, resolution, clip_length,
                          stride, seed=config.seed + 1)
    steps_per_epoch = max(1, len(train) // config.batch_size)
    accuracy = 0.0
    for epoch in range(config.max_epochs):
        model.train()
        for _ in range(steps_per_epoch):
            batch = batcher.next_batch()
            x = torch.from_numpy(batch.frames).permute(0, 4, 1, 2, 3)
            loss = F.cross_entropy(model(x), torch.from_numpy(batch.labels))
            opt.zero_grad()
            loss.backward()
            opt.step()
        accuracy = _accuracy(model, held, resolution, clip_length, stride,
                             seed=config.seed + 2, batch_size=config.batch_size)
        if verbose:
            print(f"classifier epoch {epoch}: held-out accuracy {accuracy:.3f}")
        if accuracy >= config.accuracy_threshold:
            return FeatureExtractor(model, feature_source)
    raise RuntimeError(
        f"classifier reached only {accuracy:.3f} held-out accuracy "
        f"(< {config.accuracy_threshold}); refusing to freeze a useless extractor")


@dataclass
class EvalStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    @property
    def well_conditioned(self) -> bool:
        return self.n >= self.mu.shape[0]


def compute_stats(features: np.ndarray) -> EvalStats:
    """Sample mean and unbiased covariance of [n, d] features."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError("need a [n >= 2, d] feature matrix")
    mu = features.mean(axis=0)
    sigma = np.cov(features, rowvar=False, ddof=1)
    sigma = np.atleast_2d(sigma)
    sigma = (sigma + sigma.T) / 2.0
    return EvalStats(mu, sigma, features.shape[0])


def sqrtm_psd(mat: np.ndarray, neg_tol: float = NEG_EIGENVALUE_TOL) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, clamping tiny negative
    eigenvalues at zero; errors if the matrix is non-PSD beyond tolerance."""
    mat = np.asarray(mat, dtype=np.float64)
    sym = (mat + mat.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    scale = max(1.0, float(np.max(np.abs(eigvals), initial=0.0)))
    if eigvals.min(initial=0.0) < -neg_tol * scale:
        raise ValueError(f"matrix is not PSD: min eigenvalue {eigvals.min():.3e}")
    root = eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T
    return (root + root.T) / 2.0


def fid(a: EvalStats, b: EvalStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), clamped at zero.

    Tr (S_a S_b)^{1/2} is computed as Tr (S_a^{1/2} S_b S_a^{1/2})^{1/2}, which
    is symmetric PSD and matches the product square root's trace.
    """
    if a.mu.shape != b.mu.shape:
        raise ValueError(f"feature dims differ: {a.mu.shape} vs {b.mu.shape}")
    diff = a.mu - b.mu
    root_a = sqrtm_psd(a.sigma)
    inner = root_a @ b.sigma @ root_a
    eigvals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    scale = max(1.0, float(np.max(np.abs(eigvals), initial=0.0)))
    if eigvals.min(initial=0.0) < -NEG_EIGENVALUE_TOL * scale:
        raise ValueError("covariance product is not PSD beyond tolerance")
    tr_sqrt = np.sqrt(np.clip(eigvals, 0.0, None)).sum()
    value = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * tr_sqrt)
    return max(value, 0.0)


def inception_score(probs: np.ndarray, splits: int = 10) -> tuple[float, float]:
    """exp(E_x KL(p(y|x) || p(y))) per split; returns (mean, std) over splits."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probs must be [n, num_classes]")
    if probs.min() < -1e-8 or np.abs(probs.sum(axis=1) - 1.0).max() > 1e-5:
        raise ValueError("rows of probs must be probability distributions")
    if probs.shape[0] < splits:
        raise ValueError(f"need at least {splits} samples for {splits} splits")
    scores = []
    for chunk in np.array_split(probs, splits):
        marginal = chunk.mean(axis=0)
        safe = np.where(chunk > 0, chunk, 1.0)  # 0 log 0 = 0
        kl = (chunk * (np.log(safe) - np.log(np.where(marginal > 0, marginal, 1.0)))).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores)), float(np.std(scores))


@dataclass
class EvalResult:
    fid: float
    is_mean: float
    is_std: float


def generate_for_eval(generator, num_samples: int, stddev: float, num_classes: int,
                      latent_dim: int, seed: int, batch_size: int = 32):
    """Yield [B, T, 3, R, R] video batches from a frozen generator snapshot."""
    rng = torch.Generator().manual_seed(seed)
    generator.eval()
    remaining = num_samples
    with torch.no_grad():
        while remaining > 0:
            b = min(batch_size, remaining)
            z = stddev * torch.randn(b, latent_dim, generator=rng)
            y = torch.randint(0, num_classes, (b,), generator=rng)
            yield generator(z, y=y)
            remaining -= b


def evaluate_model(generator, extractor: FeatureExtractor, dataset_stats: EvalStats,
                   num_samples: int, stddev: float, seed: int = 0,
                   batch_size: int = 32, is_splits: int = 10) -> EvalResult:
    """Generate at the given truncation level, extract features, score FID/IS.

    The generator should be the EMA snapshot; it is run in eval mode (running
    batch-norm statistics) and never mutated.
    """
    cfg = generator.config
    feats, probs = [], []
    for videos in generate_for_eval(generator, num_samples, stddev, cfg.num_classes,
                                    cfg.latent_dim, seed, batch_size):
        f, p = extractor.extract(videos)
        feats.append(f)
        probs.append(p)
    features = np.concatenate(feats)
    probabilities = np.concatenate(probs)
    value = fid(compute_stats(features), dataset_stats)
    is_mean, is_std = inception_score(probabilities, splits=min(is_splits, num_samples))
    return EvalResult(value, is_mean, is_std)


def extract_dataset_features(dataset: list[RawVideo], extractor: FeatureExtractor,
                             resolution: int, clip_length: int, stride: int = 2,
                             seed: int = 0, batch_size: int = 32
                             ) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    feats, probs = [], []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start:start + batch_size]
        clips = [preprocess(v, resolution, clip_length, stride, rng) for v in chunk]
        x = torch.from_numpy(np.stack([c.frames for c in clips])).permute(0, 1, 4, 2, 3)
        f, p = extractor.extract(x)
        feats.append(f)
        probs.append(p)
    return np.concatenate(feats), np.concatenate(probs)


def compute_dataset_stats(dataset: list[RawVideo], extractor: FeatureExtractor,
                          resolution: int, clip_length: int, stride: int = 2,
                          seed: int = 0, batch_size: int = 32) -> EvalStats:
    """Ground-truth feature statistics over the entire given set."""
    features, _ = extract_dataset_features(dataset, extractor, resolution,
                                           clip_length, stride, seed, batch_size)
    return compute_stats(features)


def save_stats(stats: EvalStats, path: str) -> None:
    np.savez(path, mu=stats.mu, sigma=stats.sigma, n=np.array(stats.n))


def load_stats(path: str) -> EvalStats:
    data = np.load(path)
    return EvalStats(data["mu"], data["sigma"], int(data["n"]))


def stats_cache_path(directory: str, dataset_hash: str, extractor_hash: str) -> str:
    return os.path.join(directory, f"stats_{dataset_hash[:16]}_{extractor_hash[:16]}.npz")


def truncation_curve(generator, extractor: FeatureExtractor, dataset_stats: EvalStats,
                     stddevs, num_samples: int, seed: int = 0, batch_size: int = 32,
                     is_splits: int = 10) -> list[dict]:
    """One (stddev, fid, is) row per truncation level."""
    rows = []
    for stddev in stddevs:
        result = evaluate_model(generator, extractor, dataset_stats, num_samples,
                                float(stddev), seed=seed, batch_size=batch_size,
                                is_splits=is_splits)
        rows.append({"stddev": float(stddev), "fid": result.fid,
                     "is": result.is_mean, "is_std": result.is_std})
    return rows


def write_truncation_csv(rows: list[dict], path: str, config_hash: str = "",
                         version: str = "") -> None:
    best = max(range(len(rows)), key=lambda i: rows[i]["is"]) if rows else -1
    with open(path, "w", newline="") as f:
        if config_hash:
            f.write(f"# config_hash={config_hash} version={version}\n")
        if best >= 0:
            f.write(f"# best_is_stddev={rows[best]['stddev']}\n")
        writer = csv.writer(f)
        writer.writerow(["stddev", "fid", "is"])
        for row in rows:
            writer.writerow([row["stddev"], row["fid"], row["is"]])


def plot_truncation_curve(rows: list[dict], path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    stddevs = [r["stddev"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(stddevs, [r["fid"] for r in rows], marker="o")
    ax1.set_xlabel("latent stddev")
    ax1.set_ylabel("FID")
    ax2.plot(stddevs, [r["is"] for r in rows], marker="o", color="tab:orange")
    ax2.set_xlabel("latent stddev")
    ax2.set_ylabel("IS")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def real_vs_real_fid(dataset: list[RawVideo], extractor: FeatureExtractor,
                     resolution: int, clip_length: int, stride: int = 2,
                     seed: int = 0) -> float:
    """FID between two disjoint halves of a real set: the sampling noise floor."""
    half = len(dataset) // 2
    stats_a = compute_dataset_stats(dataset[:half], extractor, resolution,
                                    clip_length, stride, seed)
    stats_b = compute_dataset_stats(dataset[half:], extractor, resolution,
                                    clip_length, stride, seed + 1)
    return fid(stats_a, stats_b)
