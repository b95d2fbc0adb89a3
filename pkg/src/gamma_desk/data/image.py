"""Image file I/O and resampling. Images are H x W x 3 float64 arrays in [-1, 1]."""

from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np
from PIL import Image

from ..tensor import ContractError


class IngestionError(IOError):
    pass


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round((np.clip(image, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64) / 127.5 - 1.0


def load_image(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() not in (".png", ".ppm"):
        raise IngestionError(f"{path}: only PNG and PPM files are supported")
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise IngestionError(f"{path}: expected 3-channel 8-bit RGB, got mode {im.mode}")
            pixels = np.asarray(im, dtype=np.uint8)
    except IngestionError:
        raise
    except Exception as exc:  # PIL raises a zoo of types for corrupt files
        raise IngestionError(f"{path}: unreadable image ({exc})") from exc
    return from_uint8(pixels)


def save_image(path: str | os.PathLike, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = np.asarray(image)
    pixels = to_uint8(img) if img.dtype != np.uint8 else img
    mode = "L" if pixels.ndim == 2 else "RGB"
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    Image.fromarray(pixels, mode=mode).save(path, format=fmt)
    return path


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centres (edges clamped); works on H x W or H x W x C."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    if img.ndim == 3:
        wy, wx = wy[..., None], wx[..., None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def shorter_side_shape(h: int, w: int, target: int) -> tuple[int, int]:
    scale = target / min(h, w)
    if h <= w:
        return target, max(1, int(math.floor(w * scale + 0.5)))
    return max(1, int(math.floor(h * scale + 0.5))), target


def resize_shorter_side(image: np.ndarray, target: int = 600) -> np.ndarray:
    if target < 1:
        raise ContractError("target size must be >= 1")
    img = np.asarray(image, dtype=np.float64)
    out_h, out_w = shorter_side_shape(img.shape[0], img.shape[1], target)
    return bilinear_resize(img, out_h, out_w)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge replication, on H x W x C images."""
    if sigma <= 0:
        return np.asarray(image, dtype=np.float64).copy()
    radius = max(1, int(math.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    img = np.asarray(image, dtype=np.float64)
    padded = np.pad(img, ((radius, radius), (0, 0), (0, 0)), mode="edge")
    img = sum(k[i] * padded[i:i + img.shape[0]] for i in range(len(k)))
    padded = np.pad(img, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    return sum(k[i] * padded[:, i:i + img.shape[1]] for i in range(len(k)))
