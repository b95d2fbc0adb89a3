"""Image-set distance (FID) and detection scoring (IoU, AP, mAP)."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .tensor import ContractError, ShapeError, generator, ops
from .validation import check_images


class NumericDomainError(ArithmeticError):
    pass


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int


def fit_gaussian(features) -> GaussianStats:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"features must be an (n, d) array, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ContractError(f"need at least 2 feature vectors, got {x.shape[0]}")
    mu = x.mean(axis=0)
    centered = x - mu
    cov = centered.T @ centered / (x.shape[0] - 1)
    return GaussianStats(mu, (cov + cov.T) / 2.0, x.shape[0])


def matrix_sqrt(m) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"matrix_sqrt needs a square matrix, got {m.shape}")
    sym = (m + m.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    scale = np.linalg.norm(sym)
    if vals.size and vals.min() < -1e-6 * max(scale, 1e-300):
        raise NumericDomainError(f"matrix is not PSD: smallest eigenvalue {vals.min():.3e}")
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return (root + root.T) / 2.0


def fid(x_stats: GaussianStats, g_stats: GaussianStats) -> float:
    """Frechet distance between two Gaussians; cross term uses sqrt(Sx^1/2 Sg Sx^1/2)."""
    if x_stats.mean.shape != g_stats.mean.shape or x_stats.cov.shape != g_stats.cov.shape:
        raise ContractError(f"dimension mismatch: {x_stats.mean.shape} vs {g_stats.mean.shape}")
    diff = x_stats.mean - g_stats.mean
    sx_half = matrix_sqrt(x_stats.cov)
    cross = matrix_sqrt(sx_half @ g_stats.cov @ sx_half)
    value = float(diff @ diff + np.trace(x_stats.cov) + np.trace(g_stats.cov) - 2.0 * np.trace(cross))
    return max(value, 0.0)


class RandomConvEncoder(TransformerMixin, BaseEstimator):
    """Frozen random-weight conv features for FID at desk scale.

    Three stride-2 3x3 conv+ReLU layers; the embedding is the global average
    of each of the last two layers concatenated with per-channel colour means.
    """

    def __init__(self, width: int = 16, random_state: int = 1234):
        self.width = width
        self.random_state = random_state

    def fit(self, X=None, y=None):
        rng = generator(self.random_state, "fid-encoder")
        w = self.width
        shapes = [(w, 3, 3, 3), (2 * w, w, 3, 3), (2 * w, 2 * w, 3, 3)]
        self.kernels_ = [rng.normal(0.0, np.sqrt(2.0 / (s[1] * 9)), size=s) for s in shapes]
        self.n_features_out_ = 3 + 4 * w
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "kernels_"):
            self.fit()
        images = check_images(X, min_size=8)
        out = []
        for start in range(0, len(images), 32):
            h = images[start:start + 32].transpose(0, 3, 1, 2)
            feats = [h.mean(axis=(2, 3))]
            for k, kern in enumerate(self.kernels_):
                h = np.maximum(ops.conv2d(h, kern, stride=2, padding=1).data, 0.0)
                if k >= 1:
                    feats.append(h.mean(axis=(2, 3)))
            out.append(np.concatenate(feats, axis=1))
        return np.concatenate(out, axis=0)


def embed_images(images, encoder=None) -> np.ndarray:
    encoder = RandomConvEncoder() if encoder is None else encoder
    return encoder.transform(images)


def fid_between(images_a, images_b, encoder=None) -> float:
    encoder = RandomConvEncoder().fit() if encoder is None else encoder
    return fid(fit_gaussian(embed_images(images_a, encoder)), fit_gaussian(embed_images(images_b, encoder)))


# boxes -----------------------------------------------------------------

def _check_box(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (4,) or not (b[0] < b[2] and b[1] < b[3]):
        raise ContractError(f"degenerate or malformed box {b.tolist()}")
    return b


def iou(a, b) -> float:
    a, b = _check_box(a), _check_box(b)
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between (n, 4) and (m, 4) box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


# average precision ---------------------------------------------------------

@dataclass
class ClassScore:
    ap: float | None
    tp: int
    fp: int
    fn: int
    flag: str | None = None


def match_detections(detections, ground_truth, iou_threshold: float = 0.5):
    """Greedy matching in descending confidence; returns (order, is_tp, n_gt).

    ``detections`` is a sequence of ``(image_id, score, box)``;
    ``ground_truth`` maps image_id to an (m, 4) box array.
    """
    dets = list(detections)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    taken = {k: np.zeros(len(np.reshape(v, (-1, 4))), dtype=bool) for k, v in ground_truth.items()}
    gts = {k: np.asarray(v, dtype=np.float64).reshape(-1, 4) for k, v in ground_truth.items()}
    is_tp = np.zeros(len(dets), dtype=bool)
    for rank, i in enumerate(order):
        img, _, box = dets[i]
        g = gts.get(img)
        if g is None or not len(g):
            continue
        overlaps = iou_matrix(np.asarray(box)[None], g)[0]
        overlaps[taken[img]] = -1.0
        j = int(np.argmax(overlaps))
        if overlaps[j] >= iou_threshold:
            taken[img][j] = True
            is_tp[rank] = True
    n_gt = int(sum(len(v) for v in gts.values()))
    return order, is_tp, n_gt


def _all_point_ap(is_tp: np.ndarray, n_gt: int) -> float:
    tp = np.cumsum(is_tp)
    fp = np.cumsum(~is_tp)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def class_score(detections, ground_truth, iou_threshold: float = 0.5) -> ClassScore:
    _, is_tp, n_gt = match_detections(detections, ground_truth, iou_threshold)
    tp = int(is_tp.sum())
    fp = int(len(is_tp) - tp)
    if n_gt == 0:
        if len(is_tp):
            return ClassScore(0.0, 0, fp, 0, flag="no ground truth, detections present")
        return ClassScore(None, 0, 0, 0, flag="no ground truth and no detections")
    if not len(is_tp):
        return ClassScore(0.0, 0, 0, n_gt)
    return ClassScore(_all_point_ap(is_tp, n_gt), tp, fp, n_gt - tp)


def average_precision(detections, ground_truth, iou_threshold: float = 0.5) -> float | None:
    """All-point interpolated AP for one class.

    Accepts ``detections`` as ``(score, box)`` pairs with ``ground_truth``
    an (m, 4) array for a single image, or the multi-image form of
    :func:`match_detections`. Returns None when there is neither ground
    truth nor detections.
    """
    dets = list(detections)
    if not isinstance(ground_truth, Mapping):
        dets = [(0, d[0], d[1]) for d in dets]
        ground_truth = {0: ground_truth}
    return class_score(dets, ground_truth, iou_threshold).ap


def mean_ap(per_class: Mapping) -> float:
    """Unweighted mean over classes whose AP is defined, correctly rounded."""
    values = [float(v) for v in per_class.values() if v is not None]
    if not values:
        raise ContractError("mean_ap needs at least one defined class AP")
    return float(statistics.mean(values))


@dataclass
class EvalResult:
    per_class_ap: dict[int, float | None]
    mAP: float
    counts: dict[int, dict[str, int]]
    iou_threshold: float
    flags: dict[int, str] = field(default_factory=dict)

    def to_dict(self, class_names: Sequence[str] | None = None) -> dict:
        def label(c):
            return class_names[c] if class_names else str(c)

        return {
            "iou_threshold": self.iou_threshold,
            "mAP": self.mAP,
            "per_class_ap": {label(c): ap for c, ap in self.per_class_ap.items()},
            "counts": {label(c): v for c, v in self.counts.items()},
            "flags": {label(c): v for c, v in self.flags.items()},
        }


def evaluate_detections(predictions, annotations, num_classes: int, iou_threshold: float = 0.5) -> EvalResult:
    """Score per-image predictions against per-image annotations.

    ``predictions[i]`` is a list of detections (objects with ``box``,
    ``class_id``, ``confidence``); ``annotations[i]`` an (m, 5) array of
    ``x_min, y_min, x_max, y_max, class_id`` rows.
    """
    if len(predictions) != len(annotations):
        raise ContractError(f"{len(predictions)} prediction lists for {len(annotations)} images")
    per_class, counts, flags = {}, {}, {}
    for c in range(num_classes):
        dets = [(i, d.confidence, d.box) for i, preds in enumerate(predictions) for d in preds if d.class_id == c]
        gts = {}
        for i, ann in enumerate(annotations):
            ann = np.asarray(ann, dtype=np.float64).reshape(-1, 5)
            gts[i] = ann[ann[:, 4] == c, :4]
        score = class_score(dets, gts, iou_threshold)
        per_class[c] = score.ap
        counts[c] = {"tp": score.tp, "fp": score.fp, "fn": score.fn}
        if score.flag:
            flags[c] = score.flag
    return EvalResult(per_class, mean_ap(per_class), counts, iou_threshold, flags)
