"""Quantisation-free RoI pooling by bilinear sampling."""

from __future__ import annotations

import numpy as np

from ..tensor import ContractError, Tensor, record_op


def _sample_grid(rois: np.ndarray, out_h: int, out_w: int, spatial_scale: float, sampling: int):
    """Continuous feature-map coordinates of every sample point, shape (R, out_h*s, out_w*s)."""
    x0 = rois[:, 1] * spatial_scale - 0.5
    y0 = rois[:, 2] * spatial_scale - 0.5
    x1 = rois[:, 3] * spatial_scale - 0.5
    y1 = rois[:, 4] * spatial_scale - 0.5
    bin_w = (x1 - x0) / out_w
    bin_h = (y1 - y0) / out_h
    fy = (np.arange(out_h * sampling) + 0.5) / sampling  # bin units
    fx = (np.arange(out_w * sampling) + 0.5) / sampling
    ys = y0[:, None] + fy[None, :] * bin_h[:, None]
    xs = x0[:, None] + fx[None, :] * bin_w[:, None]
    return np.broadcast_to(ys[:, :, None], (len(rois), len(fy), len(fx))), \
        np.broadcast_to(xs[:, None, :], (len(rois), len(fy), len(fx)))


def roi_align(features, rois, output_size=(4, 4), spatial_scale: float = 1.0, sampling: int = 2) -> Tensor:
    """Pool (R, C, out_h, out_w) from (N, C, H, W) features.

    ``rois`` rows are ``(batch_index, x_min, y_min, x_max, y_max)`` in input
    pixels; ``spatial_scale`` maps them onto the feature grid. Each bin
    averages ``sampling**2`` bilinear samples at regularly spaced points.
    """
    features = features if isinstance(features, Tensor) else Tensor(features)
    rois = np.asarray(rois, dtype=np.float64).reshape(-1, 5)
    out_h, out_w = output_size
    if out_h < 1 or out_w < 1:
        raise ContractError("output size must be positive")
    bad = np.nonzero((rois[:, 3] <= rois[:, 1]) | (rois[:, 4] <= rois[:, 2]))[0]
    if len(bad):
        raise ContractError(f"RoI {int(bad[0])} has zero area: {rois[bad[0], 1:].tolist()}")
    n, c, h, w = features.shape
    r = len(rois)
    ys, xs = _sample_grid(rois, out_h, out_w, spatial_scale, sampling)
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    y_lo = np.floor(ys).astype(np.int64)
    x_lo = np.floor(xs).astype(np.int64)
    y_hi = np.minimum(y_lo + 1, h - 1)
    x_hi = np.minimum(x_lo + 1, w - 1)
    ly, lx = ys - y_lo, xs - x_lo
    hy, hx = 1.0 - ly, 1.0 - lx
    b = rois[:, 0].astype(np.int64)[:, None, None]
    base = b * (h * w)
    corners = [(y_lo, x_lo, hy * hx), (y_lo, x_hi, hy * lx), (y_hi, x_lo, ly * hx), (y_hi, x_hi, ly * lx)]
    flat = features.data.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    sampled = np.zeros((r, ys.shape[1], ys.shape[2], c))
    indices = []
    for yy, xx, wt in corners:
        idx = base + yy * w + xx
        indices.append((idx, wt))
        sampled += flat[idx] * wt[..., None]
    s = sampling
    pooled = sampled.reshape(r, out_h, s, out_w, s, c).mean(axis=(2, 4))
    out = pooled.transpose(0, 3, 1, 2)

    def back(g):
        # spread each bin's gradient evenly over its samples, then to the four corners
        gs = np.repeat(np.repeat(g.transpose(0, 2, 3, 1), s, axis=1), s, axis=2) / (s * s)
        gflat = np.zeros(n * h * w * c)
        channel = np.arange(c)
        for idx, wt in indices:
            slots = (idx.reshape(-1, 1) * c + channel).ravel()
            gflat += np.bincount(slots, (gs * wt[..., None]).ravel(), minlength=gflat.size)
        return (gflat.reshape(n, h, w, c).transpose(0, 3, 1, 2),)

    return record_op(np.ascontiguousarray(out), (features,), back)
