"""Two-stage attentive detector: conv backbone, self-attention, RPN, RoI-Align, box head."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..attention import SelfAttention
from ..data.synth import CLASS_NAMES, DetectionSample
from ..metrics import evaluate_detections, iou_matrix
from ..tensor import (SGD, ContractError, Conv2d, GradTape, Linear, Module, NonFiniteError, Tensor,
                      generator, load_checkpoint, ops, save_checkpoint)
from ..validation import check_annotations, check_image
from .boxes import batched_nms, clip_boxes, decode_deltas, encode_deltas, generate_anchors, nms
from .roi_align import roi_align

logger = logging.getLogger(__name__)

HEAD_DELTA_WEIGHTS = (10.0, 10.0, 5.0, 5.0)


class DetectorTrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]
    class_id: int
    confidence: float

    def to_dict(self) -> dict:
        return {"box": [float(v) for v in self.box], "class_id": int(self.class_id),
                "confidence": float(self.confidence)}


@dataclass
class DetectorConfig:
    image_size: int = 64
    class_names: tuple[str, ...] = CLASS_NAMES
    channels: tuple[int, ...] = (16, 16, 32, 32, 32, 32)
    use_sea: bool = True
    scaled_attention: bool = False
    anchor_scales: tuple[float, ...] = (12.0, 20.0, 32.0)
    anchor_aspects: tuple[float, ...] = (0.5, 1.0, 2.0)
    rpn_positive_iou: float = 0.7
    rpn_negative_iou: float = 0.3
    rpn_batch: int = 64
    rpn_nms: float = 0.7
    pre_nms_top: int = 256
    train_proposals: int = 128
    test_proposals: int = 64
    roi_size: int = 4
    roi_sampling: int = 2
    head_batch: int = 32
    head_fg_fraction: float = 0.25
    head_fg_iou: float = 0.5
    fc_dim: int = 128
    lr: float = 1e-3
    lr_after: float = 1e-4
    lr_boundary: int = 1600
    iterations: int = 3600
    batch_size: int = 4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    hflip: bool = True
    seed: int = 0
    checkpoint_every: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def stride(self) -> int:
        return 8

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        self.channels = tuple(int(c) for c in self.channels)
        self.anchor_scales = tuple(float(s) for s in self.anchor_scales)
        self.anchor_aspects = tuple(float(a) for a in self.anchor_aspects)
        if len(self.channels) != 6:
            raise ContractError("the backbone has exactly six conv layers")
        if self.channels[-1] % 8:
            raise ContractError(f"backbone output channels {self.channels[-1]} must be divisible by 8")
        if self.image_size % 8:
            raise ContractError("image size must be a multiple of the backbone stride 8")
        if not 0 <= self.lr_boundary <= self.iterations:
            raise ContractError("lr boundary must lie within the iteration budget")
        if self.batch_size < 1 or self.iterations < 0:
            raise ContractError("batch size must be positive and iterations non-negative")


def lr_at(iteration: int, config: DetectorConfig) -> float:
    """Step schedule: ``lr`` before the boundary iteration, ``lr_after`` from it on."""
    return config.lr if iteration < config.lr_boundary else config.lr_after


class Backbone(Module):
    """Six 3x3 convs with ReLU; layers 2, 4 and 6 have stride 2 (total stride 8)."""

    def __init__(self, rng: np.random.Generator, channels: Sequence[int]):
        c_in = 3
        self.layers = []
        for i, c in enumerate(channels):
            self.layers.append(Conv2d(rng, c_in, c, 3, stride=2 if i % 2 else 1, padding=1))
            c_in = c

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = ops.relu(layer(x))
        return x


class RPN(Module):
    def __init__(self, rng: np.random.Generator, channels: int, num_anchors: int):
        self.conv = Conv2d(rng, channels, channels, 3, padding=1)
        self.objectness = Conv2d(rng, channels, num_anchors, 1, init_std=0.01)
        self.deltas = Conv2d(rng, channels, 4 * num_anchors, 1, init_std=0.01)
        self.num_anchors = num_anchors

    def forward(self, feats: Tensor) -> tuple[Tensor, Tensor]:
        """Logits (N, H*W*A) and deltas (N, H*W*A, 4) in anchor order (row, column, anchor)."""
        n, _, h, w = feats.shape
        a = self.num_anchors
        hidden = ops.relu(self.conv(feats))
        logits = ops.reshape(ops.transpose(self.objectness(hidden), (0, 2, 3, 1)), (n, h * w * a))
        d = ops.reshape(self.deltas(hidden), (n, a, 4, h, w))
        deltas = ops.reshape(ops.transpose(d, (0, 3, 4, 1, 2)), (n, h * w * a, 4))
        return logits, deltas


class BoxHead(Module):
    def __init__(self, rng: np.random.Generator, in_dim: int, fc_dim: int, num_classes: int):
        self.fc = Linear(rng, in_dim, fc_dim)
        self.cls = Linear(rng, fc_dim, num_classes + 1, init_std=0.01)
        self.reg = Linear(rng, fc_dim, 4 * num_classes, init_std=0.001)
        self.num_classes = num_classes

    def forward(self, pooled: Tensor) -> tuple[Tensor, Tensor]:
        """Class logits (R, K+1) with background at column 0, and deltas (R, K, 4)."""
        r = pooled.shape[0]
        hidden = ops.relu(self.fc(ops.reshape(pooled, (r, -1))))
        return self.cls(hidden), ops.reshape(self.reg(hidden), (r, self.num_classes, 4))


class DetectorModel(Module):
    """Backbone F1, optional self-attention, RPN and box head.

    Every component draws its initial weights from its own named random
    stream, so building with or without attention leaves the remaining
    weights identical.
    """

    def __init__(self, config: DetectorConfig):
        self.config = config
        c = config.channels[-1]
        a = len(config.anchor_scales) * len(config.anchor_aspects)
        self.backbone = Backbone(generator(config.seed, "detector", "backbone"), config.channels)
        self.sea = SelfAttention(generator(config.seed, "detector", "sea"), c, config.scaled_attention) \
            if config.use_sea else None
        self.rpn = RPN(generator(config.seed, "detector", "rpn"), c, a)
        self.head = BoxHead(generator(config.seed, "detector", "head"), c * config.roi_size ** 2,
                            config.fc_dim, config.num_classes)
        f = config.image_size // config.stride
        self.anchors = generate_anchors(f, f, config.stride, config.anchor_scales, config.anchor_aspects)

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.config.class_names


def _nchw(images: np.ndarray) -> Tensor:
    return Tensor(np.ascontiguousarray(np.asarray(images, dtype=np.float64).transpose(0, 3, 1, 2)))


def backbone_forward(images, model: DetectorModel) -> Tensor:
    """f1 features (N, C, H/8, W/8) of (N, H, W, 3) or (H, W, 3) images."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    size = model.config.image_size
    if arr.ndim != 4 or arr.shape[1:] != (size, size, 3):
        raise ContractError(f"expected ({size}, {size}, 3) images, got {arr.shape[1:]}")
    return model.backbone(_nchw(arr))


def attend(f1: Tensor, model: DetectorModel) -> Tensor:
    return model.sea(f1) if model.sea is not None else f1


# --- RPN ------------------------------------------------------------------

def label_anchors(anchors: np.ndarray, gt: np.ndarray, config: DetectorConfig, rng: np.random.Generator):
    """Sampled anchor labels (1 positive, 0 negative, -1 ignored) and regression targets."""
    labels = np.full(len(anchors), -1, dtype=np.int64)
    targets = np.zeros((len(anchors), 4))
    if len(gt) == 0:
        labels[:] = 0
    else:
        ious = iou_matrix(anchors, gt[:, :4])
        best = ious.argmax(axis=1)
        best_iou = ious.max(axis=1)
        labels[best_iou < config.rpn_negative_iou] = 0
        # every ground-truth box claims the anchors that overlap it most
        top = ious.max(axis=0)
        claimed = np.nonzero((ious == top[None, :]) & (top[None, :] > 0))[0]
        labels[claimed] = 1
        labels[best_iou >= config.rpn_positive_iou] = 1
        targets = encode_deltas(anchors, gt[best, :4])
    pos = np.nonzero(labels == 1)[0]
    max_pos = config.rpn_batch // 2
    if len(pos) > max_pos:
        labels[rng.choice(pos, len(pos) - max_pos, replace=False)] = -1
    neg = np.nonzero(labels == 0)[0]
    max_neg = config.rpn_batch - min(len(pos), max_pos)
    if len(neg) > max_neg:
        labels[rng.choice(neg, len(neg) - max_neg, replace=False)] = -1
    return labels, targets


def rpn_losses(logits: Tensor, deltas: Tensor, anchors: np.ndarray, gts: Sequence[np.ndarray],
               config: DetectorConfig, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    labels, targets = zip(*(label_anchors(anchors, g, config, rng) for g in gts))
    labels = np.stack(labels)
    targets = np.stack(targets)
    sampled = labels >= 0
    cls_loss = ops.bce_with_logits(logits, (labels == 1).astype(np.float64), sampled.astype(np.float64))
    pos = labels == 1
    if not pos.any():
        logger.info("no positive anchors in batch; RPN regression contributes 0")
    rows, cols = np.nonzero(pos)
    reg = ops.smooth_l1(ops.index(deltas, (rows, cols)), targets[rows, cols], beta=1.0 / 9.0,
                        normalizer=float(sampled.sum()))
    return cls_loss, reg


def propose(logits: np.ndarray, deltas: np.ndarray, anchors: np.ndarray, config: DetectorConfig,
            top_k: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per image: (boxes, objectness) after decoding, clipping and NMS, at most ``top_k``."""
    size = config.image_size
    out = []
    for lg, dl in zip(logits, deltas):
        boxes = clip_boxes(decode_deltas(anchors, dl), size, size)
        scores = 1.0 / (1.0 + np.exp(-lg))
        ok = ((boxes[:, 2] - boxes[:, 0]) >= 1.0) & ((boxes[:, 3] - boxes[:, 1]) >= 1.0)
        boxes, scores = boxes[ok], scores[ok]
        if len(scores) > config.pre_nms_top:
            top = np.sort(np.argsort(-scores, kind="stable")[:config.pre_nms_top])
            boxes, scores = boxes[top], scores[top]
        keep = nms(boxes, scores, config.rpn_nms)[:top_k]
        out.append((boxes[keep], scores[keep]))
    return out


def rpn_forward(sa_map: Tensor, anchors: np.ndarray, gt: Sequence[np.ndarray] | None, model: DetectorModel,
                rng: np.random.Generator | None = None, top_k: int | None = None):
    """Proposals per image and, when ``gt`` is given, the RPN loss (classification + regression)."""
    cfg = model.config
    n, _, h, w = sa_map.shape
    if len(anchors) != h * w * model.rpn.num_anchors:
        raise ContractError(f"{len(anchors)} anchors do not match a {h}x{w} grid")
    logits, deltas = model.rpn(sa_map)
    top_k = top_k or (cfg.train_proposals if gt is not None else cfg.test_proposals)
    proposals = propose(logits.data, deltas.data, anchors, cfg, top_k)
    if gt is None:
        return proposals, None
    cls_loss, reg_loss = rpn_losses(logits, deltas, anchors, gt, cfg, rng or generator(cfg.seed, "rpn-sampler"))
    return proposals, cls_loss + reg_loss


# --- second stage ----------------------------------------------------------

def sample_rois(proposals: np.ndarray, gt: np.ndarray, config: DetectorConfig, rng: np.random.Generator):
    """RoIs with class labels (0 background) and head regression targets."""
    rois = np.concatenate([proposals, gt[:, :4]]) if len(gt) else proposals
    if len(gt):
        ious = iou_matrix(rois, gt[:, :4])
        best = ious.argmax(axis=1)
        best_iou = ious.max(axis=1)
    else:
        best = np.zeros(len(rois), dtype=np.int64)
        best_iou = np.zeros(len(rois))
    fg = np.nonzero(best_iou >= config.head_fg_iou)[0]
    bg = np.nonzero(best_iou < config.head_fg_iou)[0]
    n_fg = min(len(fg), int(round(config.head_batch * config.head_fg_fraction)))
    fg = rng.choice(fg, n_fg, replace=False) if len(fg) > n_fg else fg
    n_bg = min(len(bg), config.head_batch - len(fg))
    bg = rng.choice(bg, n_bg, replace=False) if len(bg) > n_bg else bg
    keep = np.concatenate([fg, bg]).astype(np.int64)
    labels = np.zeros(len(keep), dtype=np.int64)
    targets = np.zeros((len(keep), 4))
    if len(fg):
        labels[:len(fg)] = gt[best[fg], 4].astype(np.int64) + 1
        targets[:len(fg)] = encode_deltas(rois[fg], gt[best[fg], :4], HEAD_DELTA_WEIGHTS)
    return rois[keep], labels, targets


def _roi_rows(boxes_per_image: Sequence[np.ndarray]) -> np.ndarray:
    rows = [np.concatenate([np.full((len(b), 1), float(i)), b], axis=1) for i, b in enumerate(boxes_per_image)]
    return np.concatenate(rows) if rows else np.zeros((0, 5))


def detection_head(pooled: Tensor, model: DetectorModel) -> tuple[Tensor, Tensor]:
    """Softmax class scores (R, K+1) and per-class deltas (R, K, 4)."""
    if pooled.shape[0] == 0:
        raise ContractError("detection head needs at least one RoI")
    logits, deltas = model.head(pooled)
    return ops.softmax(logits, axis=1), deltas


def pool(features: Tensor, boxes_per_image: Sequence[np.ndarray], model: DetectorModel) -> Tensor:
    cfg = model.config
    return roi_align(features, _roi_rows(boxes_per_image), (cfg.roi_size, cfg.roi_size),
                     spatial_scale=1.0 / cfg.stride, sampling=cfg.roi_sampling)


def detection_loss(model: DetectorModel, images: np.ndarray, annotations: Sequence[np.ndarray],
                   rng: np.random.Generator) -> dict[str, Tensor]:
    """RPN and head losses for one batch; must run under a GradTape to train."""
    cfg = model.config
    f1 = backbone_forward(images, model)
    sa = attend(f1, model)
    logits, deltas = model.rpn(sa)
    proposals = propose(logits.data, deltas.data, model.anchors, cfg, cfg.train_proposals)
    rpn_cls, rpn_reg = rpn_losses(logits, deltas, model.anchors, annotations, cfg, rng)
    sampled = [sample_rois(p[0], g, cfg, rng) for p, g in zip(proposals, annotations)]
    rois = [s[0] for s in sampled]
    labels = np.concatenate([s[1] for s in sampled])
    targets = np.concatenate([s[2] for s in sampled])
    cls_logits, box_deltas = model.head(pool(sa, rois, model))
    head_cls = ops.cross_entropy(cls_logits, labels)
    fg = np.nonzero(labels > 0)[0]
    head_reg = ops.smooth_l1(ops.index(box_deltas, (fg, labels[fg] - 1)), targets[fg], beta=1.0,
                             normalizer=float(len(labels)))
    total = rpn_cls + rpn_reg + head_cls + head_reg
    return {"total": total, "rpn_cls": rpn_cls, "rpn_reg": rpn_reg, "head_cls": head_cls, "head_reg": head_reg}


def infer(image, model: DetectorModel, score_threshold: float = 0.5, nms_threshold: float = 0.3,
          max_detections: int = 100) -> list[Detection]:
    """Detections for one (H, W, 3) image, sorted by descending confidence."""
    return infer_batch(np.asarray(image)[None], model, score_threshold, nms_threshold, max_detections)[0]


def infer_batch(images, model: DetectorModel, score_threshold: float = 0.5, nms_threshold: float = 0.3,
                max_detections: int = 100) -> list[list[Detection]]:
    cfg = model.config
    size = cfg.image_size
    sa = attend(backbone_forward(images, model), model)
    proposals, _ = rpn_forward(sa, model.anchors, None, model)
    boxes = [p[0] for p in proposals]
    results: list[list[Detection]] = [[] for _ in boxes]
    if sum(len(b) for b in boxes) == 0:
        return results
    probs, deltas = detection_head(pool(sa, boxes, model), model)
    probs, deltas = probs.data, deltas.data
    start = 0
    k = cfg.num_classes
    for i, props in enumerate(boxes):
        p = probs[start:start + len(props)]
        d = deltas[start:start + len(props)]
        start += len(props)
        all_boxes, all_scores, all_classes = [], [], []
        for c in range(k):
            scores = p[:, c + 1]
            sel = scores > score_threshold
            if not sel.any():
                continue
            b = clip_boxes(decode_deltas(props[sel], d[sel, c], HEAD_DELTA_WEIGHTS), size, size)
            ok = (b[:, 2] > b[:, 0]) & (b[:, 3] > b[:, 1])
            all_boxes.append(b[ok])
            all_scores.append(scores[sel][ok])
            all_classes.append(np.full(int(ok.sum()), c))
        if not all_boxes:
            continue
        b, s, c = np.concatenate(all_boxes), np.concatenate(all_scores), np.concatenate(all_classes)
        keep = batched_nms(b, s, c, nms_threshold)[:max_detections]
        results[i] = [Detection(tuple(float(v) for v in b[j]), int(c[j]), float(s[j])) for j in keep]
    return results


# --- training ----------------------------------------------------------------

@dataclass
class TrainTrace:
    lr: list[float] = field(default_factory=list)
    loss: list[dict[str, float]] = field(default_factory=list)


def _flip(image: np.ndarray, ann: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = image.shape[1]
    out = ann.copy()
    out[:, 0] = w - ann[:, 2]
    out[:, 2] = w - ann[:, 0]
    return image[:, ::-1], out


def train_detector(samples: Sequence[DetectionSample], model: DetectorModel,
                   checkpoint_dir: str | Path | None = None, max_iterations: int | None = None) -> TrainTrace:
    """Momentum-SGD over batches of ``config.batch_size`` images; returns the lr and loss trace.

    Each step computes f1, the attended map, and the summed RPN and head
    losses. A non-finite loss aborts before the update, leaving the last
    written checkpoint untouched.
    """
    cfg = model.config
    if not samples:
        raise ContractError("need at least one annotated sample")
    size = cfg.image_size
    images = np.stack([check_image(s.image, size) for s in samples])
    anns = [check_annotations(s.annotations, size, size, cfg.num_classes) for s in samples]
    params = model.parameters()
    names = list(params)
    opt = SGD(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    order_rng = generator(cfg.seed, "detector", "batches")
    sample_rng = generator(cfg.seed, "detector", "sampling")
    flip_rng = generator(cfg.seed, "detector", "flip")
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    trace = TrainTrace()
    order = np.zeros(0, dtype=np.int64)
    total = cfg.iterations if max_iterations is None else min(cfg.iterations, max_iterations)
    for it in range(total):
        while len(order) < cfg.batch_size:
            order = np.concatenate([order, order_rng.permutation(len(samples))])
        idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
        batch_imgs, batch_anns = [], []
        flips = flip_rng.random(len(idx)) < 0.5
        for j, flip in zip(idx, flips):
            img, ann = images[j], anns[j]
            if cfg.hflip and flip:
                img, ann = _flip(img, ann)
            batch_imgs.append(img)
            batch_anns.append(ann)
        lr = lr_at(it, cfg)
        with GradTape() as tape:
            losses = detection_loss(model, np.stack(batch_imgs), batch_anns, sample_rng)
        values = {k: float(v.data) for k, v in losses.items()}
        if not np.isfinite(values["total"]):
            raise DetectorTrainingAborted(f"non-finite detection loss at iteration {it}; last checkpoint kept")
        grads = dict(zip(names, tape.gradient(losses["total"], [params[k] for k in names])))
        opt.step(grads, lr=lr)
        trace.lr.append(lr)
        trace.loss.append(values)
        if ckpt_dir and cfg.checkpoint_every and ((it + 1) % cfg.checkpoint_every == 0 or it + 1 == total):
            save_checkpoint(ckpt_dir / f"iter_{it + 1:06d}.ckpt", model.state_dict())
    return trace


def _samples(X, y=None) -> list[DetectionSample]:
    if y is None:
        if not all(isinstance(s, DetectionSample) for s in X):
            raise ContractError("fit expects DetectionSample items or (images, annotations)")
        return list(X)
    if len(X) != len(y):
        raise ContractError(f"{len(X)} images but {len(y)} annotation sets")
    return [DetectionSample(np.asarray(img), np.asarray(a, dtype=np.float64).reshape(-1, 5)) for img, a in zip(X, y)]


class AttentiveDetector(BaseEstimator):
    """Estimator wrapper; ``fit`` trains, ``predict`` returns per-image Detection lists, ``score`` is mAP@0.5."""

    def __init__(self, class_names=CLASS_NAMES, image_size=64, use_sea=True, scaled_attention=False,
                 iterations=3600, lr_boundary=1600, lr=1e-3, lr_after=1e-4, batch_size=4, momentum=0.9,
                 weight_decay=5e-4, hflip=True, channels=(16, 16, 32, 32, 32, 32), fc_dim=128,
                 score_threshold=0.05, nms_threshold=0.3, checkpoint_every=0, checkpoint_dir=None,
                 random_state=0):
        self.class_names = class_names
        self.image_size = image_size
        self.use_sea = use_sea
        self.scaled_attention = scaled_attention
        self.iterations = iterations
        self.lr_boundary = lr_boundary
        self.lr = lr
        self.lr_after = lr_after
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.hflip = hflip
        self.channels = channels
        self.fc_dim = fc_dim
        self.score_threshold = score_threshold
        self.nms_threshold = nms_threshold
        self.checkpoint_every = checkpoint_every
        self.checkpoint_dir = checkpoint_dir
        self.random_state = random_state

    _INFERENCE_ONLY = ("score_threshold", "nms_threshold", "checkpoint_dir")

    def config(self) -> DetectorConfig:
        p = self.get_params()
        for k in self._INFERENCE_ONLY:
            p.pop(k)
        p["seed"] = p.pop("random_state")
        return DetectorConfig(**p)

    def build(self) -> "AttentiveDetector":
        """Initialise the untrained model without fitting."""
        self.model_ = DetectorModel(self.config())
        self.lr_trace_, self.loss_trace_ = [], []
        return self

    def fit(self, X, y=None, max_iterations: int | None = None):
        self.build()
        trace = train_detector(_samples(X, y), self.model_, self.checkpoint_dir, max_iterations)
        self.lr_trace_, self.loss_trace_ = trace.lr, trace.loss
        return self

    def predict(self, X) -> list[list[Detection]]:
        check_is_fitted(self, "model_")
        items = list(X) if isinstance(X, (list, tuple)) else None
        if items and isinstance(items[0], DetectionSample):
            X = [s.image for s in items]
        imgs = np.asarray(X, dtype=np.float64)
        if imgs.ndim == 3:
            imgs = imgs[None]
        if not np.all(np.isfinite(imgs)):
            raise NonFiniteError("input images contain non-finite values")
        out = []
        for start in range(0, len(imgs), 16):
            out.extend(infer_batch(imgs[start:start + 16], self.model_, self.score_threshold, self.nms_threshold))
        return out

    def evaluate(self, X, y=None, iou_threshold: float = 0.5):
        samples = _samples(X, y)
        preds = self.predict([s.image for s in samples])
        return evaluate_detections(preds, [s.annotations for s in samples], len(self.class_names), iou_threshold)

    def score(self, X, y=None) -> float:
        return self.evaluate(X, y).mAP

    def save(self, directory: str | Path) -> Path:
        check_is_fitted(self, "model_")
        directory = Path(directory)
        save_checkpoint(directory / "detector.ckpt", self.model_.state_dict())
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()}
        params.pop("checkpoint_dir")
        (directory / "detector.json").write_text(json.dumps(params, sort_keys=True, indent=1))
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "AttentiveDetector":
        directory = Path(directory)
        params = json.loads((directory / "detector.json").read_text())
        params["class_names"] = tuple(params["class_names"])
        params["channels"] = tuple(params["channels"])
        est = cls(**params).build()
        est.model_.load_state_dict(load_checkpoint(directory / "detector.ckpt"))
        return est

    def config_dict(self) -> dict:
        return asdict(self.config())
