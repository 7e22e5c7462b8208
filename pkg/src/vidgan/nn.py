"""Shared neural building blocks.

Conventions: video feature tensors are [B, T, C, H, W]; per-frame convolutions
fold time into the batch axis; batch-norm statistics never reduce over time.
Discriminator weight layers carry spectral normalization with a persistent
power-iteration vector; one iteration advances per training-mode forward pass.
"""

from __future__ import annotations

import warnings

import torch
import torch.nn as nn
import torch.nn.functional as F

BN_EPS = 1e-4
BN_MOMENTUM = 0.99  # running = momentum * running + (1 - momentum) * batch
SN_EPS = 1e-12


def fold_time(x: torch.Tensor) -> torch.Tensor:
    """[B, T, C, H, W] -> [B*T, C, H, W]."""
    b, t, c, h, w = x.shape
    return x.reshape(b * t, c, h, w)


def unfold_time(x: torch.Tensor, t: int) -> torch.Tensor:
    """[B*T, C, H, W] -> [B, T, C, H, W]."""
    bt, c, h, w = x.shape
    return x.reshape(bt // t, t, c, h, w)


def orthogonal_(tensor: torch.Tensor, generator: torch.Generator | None = None,
                gain: float = 1.0) -> torch.Tensor:
    """Fill with a (semi-)orthogonal matrix drawn from the given generator.

    The tensor is treated as a matrix of shape (dim0, numel/dim0); the smaller
    side ends up orthonormal, so M^T M = I for tall matrices and M M^T = I for
    wide ones.
    """
    if tensor.ndim < 2:
        raise ValueError("orthogonal init needs at least 2 dims")
    rows = tensor.shape[0]
    cols = tensor.numel() // rows
    flat = torch.randn(rows, cols, generator=generator, dtype=torch.float64)
    if rows < cols:
        flat = flat.t()
    q, r = torch.linalg.qr(flat)
    q = q * torch.sign(torch.diagonal(r))  # make the factorization unique
    if rows < cols:
        q = q.t()
    with torch.no_grad():
        tensor.copy_(q.reshape(tensor.shape).to(tensor.dtype) * gain)
    return tensor


def spectral_normalize(weight: torch.Tensor, u: torch.Tensor, update: bool = True,
                       eps: float = SN_EPS) -> tuple[torch.Tensor, torch.Tensor, float]:
    """Divide `weight` by its power-iteration top-singular-value estimate.

    `u` is the persistent left singular vector estimate for the weight viewed
    as (dim0, numel/dim0). One iteration refines (u, v), then sigma = u^T W v.
    No gradient flows through sigma. Returns (normalized weight, new u, sigma);
    a zero weight is returned unchanged with sigma = 0.
    """
    w_mat = weight.reshape(weight.shape[0], -1)
    with torch.no_grad():
        v = F.normalize(w_mat.t().mv(u), dim=0, eps=eps)
        u_new = F.normalize(w_mat.mv(v), dim=0, eps=eps)
        sigma = torch.dot(u_new, w_mat.mv(v)).item()
    if sigma <= eps:
        warnings.warn("spectral_normalize: degenerate (zero) weight, returned unchanged")
        return weight, (u_new if update else u), sigma
    out_u = u_new if update else u
    return weight / sigma, out_u, sigma


class SpectralNorm:
    """Mixin for weight layers normalized by their top singular value."""

    def init_sn(self, num_outputs: int):
        self.register_buffer("sn_u", F.normalize(torch.randn(num_outputs), dim=0))

    def normalized_weight(self) -> torch.Tensor:
        w, u_new, _sigma = spectral_normalize(self.weight, self.sn_u, update=self.training)
        if self.training:
            with torch.no_grad():
                self.sn_u.copy_(u_new)
        return w


class SNConv2d(nn.Conv2d, SpectralNorm):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True):
        super().__init__(in_channels, out_channels, kernel_size, stride, padding, bias=bias)
        self.init_sn(out_channels)

    def forward(self, x):
        return F.conv2d(x, self.normalized_weight(), self.bias, self.stride, self.padding)


class SNConv3d(nn.Conv3d, SpectralNorm):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True):
        super().__init__(in_channels, out_channels, kernel_size, stride, padding, bias=bias)
        self.init_sn(out_channels)

    def forward(self, x):
        return F.conv3d(x, self.normalized_weight(), self.bias, self.stride, self.padding)


class SNLinear(nn.Linear, SpectralNorm):
    def __init__(self, in_features, out_features, bias=True):
        super().__init__(in_features, out_features, bias=bias)
        self.init_sn(out_features)

    def forward(self, x):
        return F.linear(x, self.normalized_weight(), self.bias)


class SNEmbedding(nn.Embedding, SpectralNorm):
    def __init__(self, num_embeddings, embedding_dim):
        super().__init__(num_embeddings, embedding_dim)
        self.init_sn(num_embeddings)

    def forward(self, x):
        return F.embedding(x, self.normalized_weight())


class TimeBatchNorm(nn.Module):
    """Batch normalization whose statistics never reduce over the time axis.

    For input [B, T, C, H, W], each (t, c) pair is normalized over (B, H, W)
    only, with running statistics kept per (t, c) for eval mode. This keeps
    the normalization from leaking information between frames.
    """

    def __init__(self, num_timesteps: int, num_channels: int, affine: bool = False,
                 eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        super().__init__()
        self.num_timesteps = num_timesteps
        self.num_channels = num_channels
        self.eps = eps
        self.momentum = momentum
        self.affine = affine
        self.register_buffer("running_mean", torch.zeros(num_timesteps, num_channels))
        self.register_buffer("running_var", torch.ones(num_timesteps, num_channels))
        if affine:
            self.weight = nn.Parameter(torch.ones(num_channels))
            self.bias = nn.Parameter(torch.zeros(num_channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5:
            raise ValueError(f"expected [B, T, C, H, W], got shape {tuple(x.shape)}")
        b, t, c, h, w = x.shape
        if t != self.num_timesteps or c != self.num_channels:
            raise ValueError(
                f"built for T={self.num_timesteps}, C={self.num_channels}; got T={t}, C={c}")
        if self.training:
            if b < 2:
                raise ValueError("per-timestep batch norm needs batch size >= 2 in train mode")
            mean = x.mean(dim=(0, 3, 4))
            var = x.var(dim=(0, 3, 4), unbiased=False)
            with torch.no_grad():
                n = b * h * w
                self.running_mean.mul_(self.momentum).add_((1 - self.momentum) * mean)
                self.running_var.mul_(self.momentum).add_((1 - self.momentum) * var * n / (n - 1))
        else:
            mean = self.running_mean
            var = self.running_var
        x = (x - mean.view(1, t, c, 1, 1)) / torch.sqrt(var.view(1, t, c, 1, 1) + self.eps)
        if self.affine:
            x = x * self.weight.view(1, 1, c, 1, 1) + self.bias.view(1, 1, c, 1, 1)
        return x


class ConditionalBatchNorm(nn.Module):
    """Per-timestep batch norm followed by an affine map driven by [z; e(y)].

    The normalization itself carries no learned scale or offset; the per-channel
    gain and offset are linear functions of the conditioning vector.
    """

    def __init__(self, num_timesteps: int, num_channels: int, cond_dim: int):
        super().__init__()
        self.cond_dim = cond_dim
        self.norm = TimeBatchNorm(num_timesteps, num_channels, affine=False)
        self.gain = nn.Linear(cond_dim, num_channels)
        self.offset = nn.Linear(cond_dim, num_channels)
        nn.init.ones_(self.gain.bias)
        nn.init.zeros_(self.offset.bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-1] != self.cond_dim:
            raise ValueError(f"conditioning dim {cond.shape[-1]} != expected {self.cond_dim}")
        normed = self.norm(x)
        g = self.gain(cond).view(cond.shape[0], 1, -1, 1, 1)
        b = self.offset(cond).view(cond.shape[0], 1, -1, 1, 1)
        return g * normed + b


class ConvGRUCell(nn.Module):
    """Convolutional GRU with 3x3 same-padded gates.

    r   = sigmoid(W_r * [h; x] + b_r)
    u   = sigmoid(W_u * [h; x] + b_u)
    c   = relu(W_c * [x; r.h] + b_c)
    h'  = u.h + (1 - u).c
    """

    def __init__(self, input_channels: int, hidden_channels: int):
        super().__init__()
        self.input_channels = input_channels
        self.hidden_channels = hidden_channels
        joint = input_channels + hidden_channels
        self.reset_gate = nn.Conv2d(joint, hidden_channels, 3, padding=1)
        self.update_gate = nn.Conv2d(joint, hidden_channels, 3, padding=1)
        self.candidate = nn.Conv2d(joint, hidden_channels, 3, padding=1)

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != h.shape[-2:] or x.shape[1] != self.input_channels \
                or h.shape[1] != self.hidden_channels:
            raise ValueError(f"shape mismatch: x {tuple(x.shape)}, h {tuple(h.shape)}")
        hx = torch.cat([h, x], dim=1)
        r = torch.sigmoid(self.reset_gate(hx))
        u = torch.sigmoid(self.update_gate(hx))
        c = F.relu(self.candidate(torch.cat([x, r * h], dim=1)))
        return u * h + (1.0 - u) * c

    def initial_state(self, batch: int, height: int, width: int, *, dtype=None,
                      device=None) -> torch.Tensor:
        return torch.zeros(batch, self.hidden_channels, height, width, dtype=dtype, device=device)


class GeneratorBlock(nn.Module):
    """Residual block for the generator: CCBN-ReLU-(up)-conv-CCBN-ReLU-conv.

    The skip path upsamples alongside and projects with a 1x1 convolution when
    the channel count changes. Upsampling is nearest-neighbor.
    """

    def __init__(self, num_timesteps: int, in_channels: int, out_channels: int,
                 cond_dim: int, upsample: bool, spectral_norm: bool = False):
        super().__init__()
        conv = SNConv2d if spectral_norm else nn.Conv2d
        self.upsample = upsample
        self.bn1 = ConditionalBatchNorm(num_timesteps, in_channels, cond_dim)
        self.conv1 = conv(in_channels, out_channels, 3, padding=1)
        self.bn2 = ConditionalBatchNorm(num_timesteps, out_channels, cond_dim)
        self.conv2 = conv(out_channels, out_channels, 3, padding=1)
        self.proj = conv(in_channels, out_channels, 1) if in_channels != out_channels else None

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        t = x.shape[1]
        h = F.relu(self.bn1(x, cond))
        h = fold_time(h)
        if self.upsample:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.conv1(h)
        h = self.bn2(unfold_time(h, t), cond)
        h = fold_time(F.relu(h))
        h = self.conv2(h)

        s = fold_time(x)
        if self.upsample:
            s = F.interpolate(s, scale_factor=2, mode="nearest")
        if self.proj is not None:
            s = self.proj(s)
        return unfold_time(h + s, t)


class DiscriminatorBlock(nn.Module):
    """Residual block for the discriminators: ReLU-conv-ReLU-conv, then 2x2
    average-pool downsampling; the skip path is a 1x1 projection (when channels
    change) followed by the same pooling. With `is_3d`, every convolution is
    3x3x3 and pooling is spatial only.
    """

    def __init__(self, in_channels: int, out_channels: int, downsample: bool,
                 is_3d: bool = False, spectral_norm: bool = True):
        super().__init__()
        self.downsample = downsample
        self.is_3d = is_3d
        if is_3d:
            conv = SNConv3d if spectral_norm else nn.Conv3d
        else:
            conv = SNConv2d if spectral_norm else nn.Conv2d
        self.conv1 = conv(in_channels, out_channels, 3, padding=1)
        self.conv2 = conv(out_channels, out_channels, 3, padding=1)
        self.proj = conv(in_channels, out_channels, 1) if in_channels != out_channels else None

    def _pool(self, x: torch.Tensor) -> torch.Tensor:
        if self.is_3d:
            return F.avg_pool3d(x, kernel_size=(1, 2, 2))  # preserve the time axis
        return F.avg_pool2d(x, kernel_size=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.relu(x))
        h = self.conv2(F.relu(h))
        s = self.proj(x) if self.proj is not None else x
        if self.downsample:
            h = self._pool(h)
            s = self._pool(s)
        return h + s


class ProjectionHead(nn.Module):
    """Class-conditional realness score: linear(features) + <embed(y), features>."""

    def __init__(self, feature_dim: int, num_classes: int, spectral_norm: bool = True):
        super().__init__()
        self.num_classes = num_classes
        self.linear = SNLinear(feature_dim, 1) if spectral_norm else nn.Linear(feature_dim, 1)
        self.embed = (SNEmbedding(num_classes, feature_dim) if spectral_norm
                      else nn.Embedding(num_classes, feature_dim))

    def forward(self, features: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"class id out of range [0, {self.num_classes})")
        out = self.linear(features).squeeze(-1)
        out = out + (self.embed(y) * features).sum(dim=-1)
        return out


def average_pool_2x2(video):
    """Mean over non-overlapping 2x2 spatial blocks of a channels-last video.

    Accepts numpy arrays or torch tensors shaped [..., H, W, C].
    """
    h, w = video.shape[-3], video.shape[-2]
    if h % 2 or w % 2:
        raise ValueError(f"spatial dims must be even, got ({h}, {w})")
    a = video[..., 0::2, 0::2, :]
    b = video[..., 0::2, 1::2, :]
    c = video[..., 1::2, 0::2, :]
    d = video[..., 1::2, 1::2, :]
    return (a + b + c + d) / 4.0


def init_parameters(module: nn.Module, seed: int) -> nn.Module:
    """Deterministically reinitialize a module: orthogonal weights, zero biases.

    Spectral-norm state vectors are redrawn as random unit vectors; conditional
    batch-norm gain maps keep a unit bias so they start as plain normalization.
    """
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.Linear)):
            orthogonal_(m.weight, generator=gen)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            orthogonal_(m.weight, generator=gen)
        if isinstance(m, SpectralNorm):
            with torch.no_grad():
                m.sn_u.copy_(F.normalize(torch.randn(m.sn_u.shape[0], generator=gen), dim=0))
    for m in module.modules():
        if isinstance(m, ConditionalBatchNorm):
            nn.init.ones_(m.gain.bias)
            nn.init.zeros_(m.offset.bias)
    return module
