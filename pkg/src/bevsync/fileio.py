"""Images, flat-decimal tensor dumps and run manifests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError

__all__ = [
    "save_image",
    "load_image",
    "save_tensors",
    "load_tensors",
    "save_module",
    "load_module",
    "write_manifest",
    "read_manifest",
]


def save_image(path, image) -> Path:
    """Write a unit-range float image as 8-bit PNG (or PPM by suffix)."""
    path = Path(path)
    arr = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)
    return path


def load_image(path) -> np.ndarray:
    try:
        img = Image.open(path).convert("RGB")
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read image {path}: {exc}") from None
    return np.asarray(img, dtype=float) / 255.0


def save_tensors(tensors: dict, path) -> None:
    """One ``tensor <name> <dims...>`` header line then one line of values per tensor."""
    lines = []
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=float)
        if any(ch.isspace() for ch in name):
            raise ConfigError(f"tensor name {name!r} contains whitespace")
        lines.append(" ".join(["tensor", name, *map(str, arr.shape)]))
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_tensors(path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    out = {}
    i = 0
    while i < len(lines):
        head = lines[i].split()
        if not head:
            i += 1
            continue
        if head[0] != "tensor" or len(head) < 2:
            raise ConfigError(f"{path}:{i + 1}: expected a tensor header")
        shape = tuple(int(d) for d in head[2:])
        vals = np.array([float(v) for v in lines[i + 1].split()]) if i + 1 < len(lines) else np.array([])
        if vals.size != int(np.prod(shape)):
            raise ConfigError(f"{path}:{i + 2}: tensor {head[1]} needs {int(np.prod(shape))} values, got {vals.size}")
        out[head[1]] = vals.reshape(shape)
        i += 2
    return out


def save_module(module, path) -> None:
    save_tensors({k: v.detach().numpy() for k, v in module.state_dict().items()}, path)


def load_module(module, path):
    import torch

    state = {k: torch.as_tensor(v, dtype=torch.float64) for k, v in load_tensors(path).items()}
    module.load_state_dict(state)
    return module


def write_manifest(path, entries: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in entries.items()))


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            out[k] = v
    return out
