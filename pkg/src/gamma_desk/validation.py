"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np

from .tensor import ContractError, NonFiniteError


def check_image(image, size: int | None = None) -> np.ndarray:
    """Validate one H x W x 3 image in [-1, 1]; optionally require a square ``size``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"expected an H x W x 3 image, got shape {img.shape}")
    if size is not None and img.shape[:2] != (size, size):
        raise ContractError(f"expected a {size}x{size} image, got {img.shape[0]}x{img.shape[1]}")
    if not np.all(np.isfinite(img)):
        raise NonFiniteError("image contains non-finite values")
    return img


def check_images(images, size: int | None = None, min_size: int = 1) -> np.ndarray:
    """Stack a batch into an (N, H, W, 3) float64 array."""
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = images[None]
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ContractError(f"expected a batch of H x W x 3 images, got shape {arr.shape}")
    if len(arr) == 0:
        raise ContractError("empty image batch")
    if size is not None and arr.shape[1:3] != (size, size):
        raise ContractError(f"expected {size}x{size} images, got {arr.shape[1]}x{arr.shape[2]}")
    if min(arr.shape[1:3]) < min_size:
        raise ContractError(f"images must be at least {min_size} pixels per side")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("image batch contains non-finite values")
    return arr


def check_annotations(ann, height: int, width: int, num_classes: int | None = None) -> np.ndarray:
    """Validate an (m, 5) array of ``x_min, y_min, x_max, y_max, class_id`` rows."""
    a = np.asarray(ann, dtype=np.float64).reshape(-1, 5)
    for k, (x0, y0, x1, y1, c) in enumerate(a):
        if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
            raise ContractError(f"annotation {k} box {[x0, y0, x1, y1]} outside a {width}x{height} image")
        if c != int(c) or c < 0 or (num_classes is not None and c >= num_classes):
            raise ContractError(f"annotation {k} has invalid class id {c}")
    return a
