"""Deterministic on-disk serialization helpers.

Checkpoints are pickled trees of plain Python containers and numpy arrays so a
save -> load -> save round trip is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import pickle

import numpy as np
import torch

PICKLE_PROTOCOL = 4


def canonical_hash(obj) -> str:
    """sha256 over a canonical JSON rendering (sorted keys, no whitespace)."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


def to_plain(obj):
    """Recursively convert torch tensors to numpy arrays."""
    if isinstance(obj, torch.Tensor):
        return obj.detach().cpu().numpy()
    if isinstance(obj, dict):
        return {k: to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        seq = [to_plain(v) for v in obj]
        return seq if isinstance(obj, list) else tuple(seq)
    return obj


def to_tensors(obj):
    """Recursively convert numpy arrays back to torch tensors."""
    if isinstance(obj, np.ndarray):
        return torch.from_numpy(obj.copy())
    if isinstance(obj, dict):
        return {k: to_tensors(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        seq = [to_tensors(v) for v in obj]
        return seq if isinstance(obj, list) else tuple(seq)
    return obj


def write_pickle(payload: dict, path: str) -> None:
    data = pickle.dumps(payload, protocol=PICKLE_PROTOCOL)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def read_pickle(path: str) -> dict:
    with open(path, "rb") as f:
        return pickle.load(f)
