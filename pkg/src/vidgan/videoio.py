"""Video artifact emission: raw tensor files and frame-grid PNG montages.

Raw files use the dataset byte layout (unsigned 8-bit, frame-major) so sampled
videos round-trip through the same loader as training data; montages lay frames
out in raster-scan order, one row per video.
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image
from PIL.PngImagePlugin import PngInfo


def video_to_uint8(video) -> np.ndarray:
    """[T, 3, H, W] in [-1, 1] (tensor or array) -> [T, H, W, 3] uint8."""
    if isinstance(video, torch.Tensor):
        video = video.detach().cpu().numpy()
    video = np.transpose(video, (0, 2, 3, 1))
    return np.clip((video + 1.0) * 127.5, 0.0, 255.0).round().astype(np.uint8)


def uint8_to_video(frames: np.ndarray) -> torch.Tensor:
    """[T, H, W, 3] uint8 -> [T, 3, H, W] float tensor in [-1, 1]."""
    x = frames.astype(np.float32) / 127.5 - 1.0
    return torch.from_numpy(x).permute(0, 3, 1, 2)


def save_video_tensor(video, path: str) -> None:
    data = video_to_uint8(video)
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(data).tobytes())
    with open(path + ".shape", "w") as f:
        t, h, w, c = data.shape
        f.write(f"{t}\t{h}\t{w}\t{c}\n")


def load_video_tensor(path: str) -> torch.Tensor:
    with open(path + ".shape") as f:
        shape = tuple(int(v) for v in f.read().split())
    raw = np.fromfile(path, dtype=np.uint8).reshape(shape)
    return uint8_to_video(raw)


def save_frame_grid(videos, path: str, metadata: dict | None = None,
                    pad: int = 2) -> None:
    """PNG montage: one row per video, frames left to right in time order."""
    if isinstance(videos, torch.Tensor) and videos.ndim == 4:
        videos = videos.unsqueeze(0)
    grids = [video_to_uint8(v) for v in videos]
    n, t = len(grids), grids[0].shape[0]
    h, w = grids[0].shape[1:3]
    canvas = np.full((n * (h + pad) - pad, t * (w + pad) - pad, 3), 255, dtype=np.uint8)
    for i, frames in enumerate(grids):
        for j in range(t):
            top, left = i * (h + pad), j * (w + pad)
            canvas[top:top + h, left:left + w] = frames[j]
    info = PngInfo()
    for key, value in (metadata or {}).items():
        info.add_text(str(key), str(value))
    Image.fromarray(canvas).save(path, pnginfo=info)


def sample_name(step: int, class_id: int, index: int) -> str:
    return f"sample_{step}_{class_id}_{index}"
