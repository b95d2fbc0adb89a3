"""Box parameterisation, clipping, anchors and greedy NMS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..metrics import iou_matrix

BBOX_CLIP = np.log(1000.0 / 16)


def encode_deltas(boxes: np.ndarray, targets: np.ndarray, weights=(1.0, 1.0, 1.0, 1.0)) -> np.ndarray:
    """(dx, dy, dw, dh) taking ``boxes`` onto ``targets``."""
    wx, wy, ww, wh = weights
    bw = boxes[:, 2] - boxes[:, 0]
    bh = boxes[:, 3] - boxes[:, 1]
    bx = boxes[:, 0] + 0.5 * bw
    by = boxes[:, 1] + 0.5 * bh
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    tx = targets[:, 0] + 0.5 * tw
    ty = targets[:, 1] + 0.5 * th
    return np.stack([wx * (tx - bx) / bw, wy * (ty - by) / bh, ww * np.log(tw / bw), wh * np.log(th / bh)], axis=1)


def decode_deltas(boxes: np.ndarray, deltas: np.ndarray, weights=(1.0, 1.0, 1.0, 1.0)) -> np.ndarray:
    wx, wy, ww, wh = weights
    bw = boxes[:, 2] - boxes[:, 0]
    bh = boxes[:, 3] - boxes[:, 1]
    bx = boxes[:, 0] + 0.5 * bw
    by = boxes[:, 1] + 0.5 * bh
    dx, dy = deltas[:, 0] / wx, deltas[:, 1] / wy
    dw = np.minimum(deltas[:, 2] / ww, BBOX_CLIP)
    dh = np.minimum(deltas[:, 3] / wh, BBOX_CLIP)
    cx, cy = bx + dx * bw, by + dy * bh
    w, h = bw * np.exp(dw), bh * np.exp(dh)
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def clip_boxes(boxes: np.ndarray, height: int, width: int) -> np.ndarray:
    out = boxes.copy()
    out[:, [0, 2]] = np.clip(out[:, [0, 2]], 0, width)
    out[:, [1, 3]] = np.clip(out[:, [1, 3]], 0, height)
    return out


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Indices kept by greedy suppression, in visiting order.

    Ties in score are broken by the box coordinates (lexicographic), so the
    result does not depend on input order.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    if not len(boxes):
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -scores))
    overlaps = iou_matrix(boxes[order], boxes[order])
    suppressed = np.zeros(len(order), dtype=bool)
    keep = []
    for pos in range(len(order)):
        if suppressed[pos]:
            continue
        keep.append(order[pos])
        suppressed |= overlaps[pos] > iou_threshold
    return np.asarray(keep, dtype=np.int64)


def batched_nms(boxes: np.ndarray, scores: np.ndarray, classes: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Per-class NMS; returned indices are sorted by descending score."""
    keep = []
    for c in np.unique(classes):
        idx = np.nonzero(classes == c)[0]
        keep.extend(idx[nms(boxes[idx], scores[idx], iou_threshold)])
    keep = np.asarray(keep, dtype=np.int64)
    if not len(keep):
        return keep
    b = boxes[keep]
    order = np.lexsort((b[:, 3], b[:, 2], b[:, 1], b[:, 0], classes[keep], -scores[keep]))
    return keep[order]


@dataclass(frozen=True)
class Anchor:
    cx: float
    cy: float
    width: float
    height: float
    scale_index: int
    aspect_index: int


def generate_anchors(feat_h: int, feat_w: int, stride: int, scales=(12.0, 20.0, 32.0),
                     aspects=(0.5, 1.0, 2.0), origin=(0.0, 0.0)) -> np.ndarray:
    """(feat_h * feat_w * A, 4) anchors ordered by (row, column, scale, aspect).

    ``aspects`` are height/width ratios; each anchor keeps area ``scale**2``
    and is centred on its cell centre offset by ``origin``.
    """
    shapes = []
    for s in scales:
        for a in aspects:
            w = s / np.sqrt(a)
            shapes.append((w, s * np.sqrt(a)))
    shapes = np.asarray(shapes)
    ys = origin[1] + (np.arange(feat_h) + 0.5) * stride
    xs = origin[0] + (np.arange(feat_w) + 0.5) * stride
    cy, cx = np.meshgrid(ys, xs, indexing="ij")
    centres = np.stack([cx.ravel(), cy.ravel()], axis=1)
    half = shapes / 2.0
    lo = centres[:, None, :] - half[None]
    hi = centres[:, None, :] + half[None]
    return np.concatenate([lo, hi], axis=2).reshape(-1, 4)


def anchor_records(feat_h: int, feat_w: int, stride: int, scales=(12.0, 20.0, 32.0),
                   aspects=(0.5, 1.0, 2.0), origin=(0.0, 0.0)) -> list[Anchor]:
    boxes = generate_anchors(feat_h, feat_w, stride, scales, aspects, origin)
    n_a = len(aspects)
    out = []
    for i, b in enumerate(boxes):
        k = i % (len(scales) * n_a)
        out.append(Anchor((b[0] + b[2]) / 2, (b[1] + b[3]) / 2, b[2] - b[0], b[3] - b[1], k // n_a, k % n_a))
    return out
