"""Image array conventions and file I/O.

Images cross module boundaries as numpy float arrays of shape (H, W, 3)
with values in [0, 1]; model code uses torch channel-first tensors.
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image

from .errors import ShapeError


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got {image.shape}")
    if not np.isfinite(image).all():
        raise ShapeError("image contains non-finite values")
    return image


def to_tensor(image: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(
        np.ascontiguousarray(check_image(image).transpose(2, 0, 1))).to(dtype)


def from_tensor(tensor: torch.Tensor) -> np.ndarray:
    if tensor.ndim != 3 or tensor.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) tensor, got {tuple(tensor.shape)}")
    return tensor.detach().cpu().numpy().transpose(1, 2, 0)


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def save_image(image: np.ndarray, path) -> None:
    arr = np.clip(check_image(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)
