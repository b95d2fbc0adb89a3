"""Self-attention over backbone feature maps with a learnable residual gain.

Shapes follow the engine's NCHW convention: ``f1`` is (N, C, H, W), the
projections are flattened row-major over space to (N, HW, d).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.image import bilinear_resize, save_image, to_uint8
from .tensor import ContractError, Module, NonFiniteError, Parameter, ShapeError, Tensor, ops


class AttentionParams(Module):
    """1x1 query/key projections to C/8 channels, value projection to C, scalar gain at 0."""

    def __init__(self, rng: np.random.Generator, channels: int, init_std: float | None = None):
        if channels % 8:
            raise ContractError(f"channel count {channels} is not divisible by 8")
        d = channels // 8
        std = np.sqrt(1.0 / channels) if init_std is None else init_std
        self.w_q = Parameter(rng.normal(0.0, std, size=(d, channels, 1, 1)))
        self.w_k = Parameter(rng.normal(0.0, std, size=(d, channels, 1, 1)))
        self.w_v = Parameter(rng.normal(0.0, std, size=(channels, channels, 1, 1)))
        self.gamma = Parameter(np.array(0.0))
        self.channels = channels


@dataclass
class AttentionOutput:
    scores: Tensor   # (N, HW, HW), rows sum to 1
    at_map: Tensor   # (N, C, H, W)
    sa_map: Tensor   # (N, C, H, W)


def _flatten(t: Tensor) -> Tensor:
    n, c, h, w = t.shape
    return ops.transpose(ops.reshape(t, (n, c, h * w)), (0, 2, 1))


def project_qkv(f1, params: AttentionParams):
    f1 = f1 if isinstance(f1, Tensor) else Tensor(f1)
    if f1.ndim != 4 or f1.shape[1] != params.channels:
        raise ShapeError(f"expected (N, {params.channels}, H, W) features, got {f1.shape}")
    q = _flatten(ops.conv2d(f1, params.w_q))
    k = _flatten(ops.conv2d(f1, params.w_k))
    v = _flatten(ops.conv2d(f1, params.w_v))
    return q, k, v


def attention_scores(q, k, scaled: bool = False) -> Tensor:
    """softmax over keys of q k^T; rows are probability distributions."""
    q = q if isinstance(q, Tensor) else Tensor(q)
    k = k if isinstance(k, Tensor) else Tensor(k)
    if q.shape[-1] != k.shape[-1] or q.shape[-2] != k.shape[-2]:
        raise ShapeError(f"query {q.shape} and key {k.shape} disagree")
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    logits = ops.matmul(q, ops.transpose(k, axes))
    if scaled:
        logits = logits * (1.0 / np.sqrt(q.shape[-1]))
    return ops.softmax(logits, axis=-1)


def attention_map(scores, v, spatial: tuple[int, int]) -> Tensor:
    """scores @ v reshaped back to (N, C, H, W)."""
    scores = scores if isinstance(scores, Tensor) else Tensor(scores)
    v = v if isinstance(v, Tensor) else Tensor(v)
    if scores.shape[-1] != v.shape[-2] or scores.shape[-2] != v.shape[-2]:
        raise ShapeError(f"scores {scores.shape} do not route values {v.shape}")
    h, w = spatial
    if h * w != v.shape[-2]:
        raise ShapeError(f"spatial shape {spatial} does not match {v.shape[-2]} positions")
    out = ops.matmul(scores, v)
    if out.ndim == 2:
        out = ops.reshape(out, (1,) + out.shape)
    n, _, c = out.shape
    return ops.reshape(ops.transpose(out, (0, 2, 1)), (n, c, h, w))


def sea_forward(f1, params: AttentionParams, scaled: bool = False) -> AttentionOutput:
    f1 = f1 if isinstance(f1, Tensor) else Tensor(f1)
    if not np.all(np.isfinite(f1.data)):
        raise NonFiniteError("attention input contains non-finite values")
    q, k, v = project_qkv(f1, params)
    scores = attention_scores(q, k, scaled)
    at = attention_map(scores, v, f1.shape[2:])
    sa = params.gamma * at + f1
    return AttentionOutput(scores, at, sa)


class SelfAttention(Module):
    """Module form used inside the detector; keeps the last output for visualisation."""

    def __init__(self, rng: np.random.Generator, channels: int, scaled: bool = False):
        self.params = AttentionParams(rng, channels)
        self.scaled = scaled
        self.last_output: AttentionOutput | None = None

    def forward(self, f1: Tensor) -> Tensor:
        out = sea_forward(f1, self.params, self.scaled)
        self.last_output = out
        return out.sa_map


def heatmap(at_map: np.ndarray, height: int, width: int) -> np.ndarray:
    """Channel-mean of one (C, h, w) attention map, min-max scaled to 0..255 and resized."""
    m = np.asarray(at_map, dtype=np.float64).mean(axis=0)
    lo, hi = m.min(), m.max()
    if hi - lo <= 0:
        norm = np.full(m.shape, 128.0)
    else:
        norm = (m - lo) / (hi - lo) * 255.0
    return bilinear_resize(norm, height, width)


def export_attention_heatmap(output: AttentionOutput, source_image: np.ndarray, path: str | Path,
                             index: int = 0, alpha: float = 0.5) -> tuple[Path, Path]:
    """Write ``<path>`` (grayscale heatmap) and ``<stem>_overlay.png`` (alpha blend on the image)."""
    path = Path(path)
    img = np.asarray(source_image, dtype=np.float64)
    h, w = img.shape[:2]
    heat = heatmap(output.at_map.data[index], h, w)
    gray = np.clip(np.round(heat), 0, 255).astype(np.uint8)
    save_image(path, gray)
    colour = np.stack([heat, 0.3 * heat, 255.0 - heat], axis=-1)
    blended = (1 - alpha) * to_uint8(img).astype(np.float64) + alpha * colour
    overlay = path.with_name(path.stem + "_overlay.png")
    save_image(overlay, np.clip(np.round(blended), 0, 255).astype(np.uint8))
    return path, overlay


ATTN_MAGIC = b"GDATTN\x00\x00"


def dump_scores(path: str | Path, scores) -> Path:
    """Flat little-endian f64 dump prefixed by a shape header."""
    arr = np.asarray(getattr(scores, "data", scores), dtype="<f8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(ATTN_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
                     + np.ascontiguousarray(arr).tobytes())
    return path


def load_scores(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:8] != ATTN_MAGIC:
        raise ValueError(f"{path}: not an attention score dump")
    (ndim,) = struct.unpack_from("<I", blob, 8)
    dims = struct.unpack_from(f"<{ndim}Q", blob, 12)
    return np.frombuffer(blob, dtype="<f8", offset=12 + 8 * ndim).reshape(dims).astype(np.float64)
