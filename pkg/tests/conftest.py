import numpy as np
import pytest
import torch

from vidgan.data import RawVideo, SyntheticDatasetConfig, generate_synthetic_dataset


@pytest.fixture(scope="session")
def tiny_dataset():
    """16 px, 4-frame clips, 4 motion classes; small enough for fast training."""
    config = SyntheticDatasetConfig(num_classes=4, resolution=16, clip_length=4,
                                    dataset_size=48, seed=7)
    return generate_synthetic_dataset(config)


def finite_difference_grads(f, tensors, eps=1e-5):
    """Central-difference gradients of the scalar f() w.r.t. each tensor.

    The tensors are perturbed in place and restored; use float64 throughout.
    """
    grads = []
    with torch.no_grad():
        for t in tensors:
            grad = torch.zeros_like(t)
            flat, gflat = t.view(-1), grad.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                f_plus = float(f())
                flat[i] = orig - eps
                f_minus = float(f())
                flat[i] = orig
                gflat[i] = (f_plus - f_minus) / (2.0 * eps)
            grads.append(grad)
    return grads


def check_grads_against_fd(f, tensors, rtol=1e-4, eps=1e-5):
    """Compare autograd gradients of scalar f() to central finite differences.

    Relative error is measured against the largest gradient magnitude so that
    near-zero entries do not blow up the ratio.
    """
    for t in tensors:
        assert t.dtype == torch.float64, "gradient checks must run in float64"
        t.requires_grad_(True)
        if t.grad is not None:
            t.grad = None
    loss = f()
    analytic = torch.autograd.grad(loss, tensors, allow_unused=False)
    numeric = finite_difference_grads(f, tensors, eps=eps)
    for a, n in zip(analytic, numeric):
        scale = max(float(n.abs().max()), float(a.abs().max()), 1e-8)
        err = float((a - n).abs().max()) / scale
        assert err <= rtol, f"gradient mismatch: relative error {err:.3e} > {rtol}"
    return True


def brightness_centroid(frame: np.ndarray) -> tuple[float, float]:
    """Intensity-weighted centroid (x, y) of a [H, W, 3] frame above background."""
    gray = frame.astype(np.float64).sum(axis=-1)
    weights = np.clip(gray - np.median(gray), 0.0, None)
    total = weights.sum()
    if total <= 0:
        return (frame.shape[1] / 2.0, frame.shape[0] / 2.0)
    ys, xs = np.mgrid[0:frame.shape[0], 0:frame.shape[1]]
    return float((xs * weights).sum() / total), float((ys * weights).sum() / total)


def make_raw_video(t=4, h=16, w=16, label=0, seed=0) -> RawVideo:
    rng = np.random.default_rng(seed)
    return RawVideo(rng.integers(0, 256, size=(t, h, w, 3)).astype(np.uint8), label)
