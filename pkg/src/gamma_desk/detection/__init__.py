"""Two-stage attentive object detector."""

from .boxes import (Anchor, anchor_records, batched_nms, clip_boxes, decode_deltas, encode_deltas,
                    generate_anchors, nms)
from .model import (AttentiveDetector, Backbone, BoxHead, Detection, DetectorConfig, DetectorModel,
                    DetectorTrainingAborted, RPN, attend, backbone_forward, detection_head, detection_loss,
                    infer, infer_batch, label_anchors, lr_at, pool, propose, rpn_forward, sample_rois,
                    train_detector)
from .roi_align import roi_align

__all__ = [
    "Anchor", "AttentiveDetector", "Backbone", "BoxHead", "Detection", "DetectorConfig", "DetectorModel",
    "DetectorTrainingAborted", "RPN", "anchor_records", "attend", "backbone_forward", "batched_nms",
    "clip_boxes", "decode_deltas", "detection_head", "detection_loss", "encode_deltas", "generate_anchors",
    "infer", "infer_batch", "label_anchors", "lr_at", "nms", "pool", "propose", "roi_align", "rpn_forward",
    "sample_rois", "train_detector",
]
