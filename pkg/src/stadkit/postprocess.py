"""Turning raw prediction grids into scored, deduplicated detections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import decode_box, iou, sigmoid
from .validation import check_anchors, check_fraction, check_prediction_grid


@dataclass(frozen=True)
class Detection:
    """One scored box, tagged with the frame and video it came from."""

    box: np.ndarray
    class_id: int
    score: float
    frame_index: int = 0
    video_id: str = ""

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float).reshape(4)
        box.setflags(write=False)
        object.__setattr__(self, "box", box)
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    def as_dict(self):
        return {
            "video_id": self.video_id,
            "frame_index": int(self.frame_index),
            "class_id": int(self.class_id),
            "score": float(self.score),
            "box": [float(v) for v in self.box],
        }


def decode_grid(preds, anchors, stride, num_classes, conf_threshold=0.005, image_size=None,
                frame_index=0, video_id=""):
    """Decode a (S, S, B, 5 + C) grid into per-class detections.

    Detection score is sigmoid(confidence) * sigmoid(class logit); one
    candidate is emitted per (cell, anchor, class) whose score is strictly
    above ``conf_threshold``. Boxes are clipped to ``image_size`` when
    given (defaults to the grid extent S * stride).
    """
    anchors = check_anchors(anchors)
    preds = np.asarray(preds, dtype=float)
    preds = check_prediction_grid(preds, preds.shape[0] if preds.ndim == 4 else 0, anchors.shape[0], num_classes)
    check_fraction(conf_threshold, "conf_threshold", 0.0, 1.0, inclusive_low=True, inclusive_high=True)
    s = preds.shape[0]
    b = anchors.shape[0]
    extent = float(s * stride) if image_size is None else float(image_size)

    conf = sigmoid(preds[..., 4])
    cls_prob = sigmoid(preds[..., 5:])
    scores = conf[..., None] * cls_prob

    detections = []
    # row-major walk keeps ordering deterministic before the sort inside nms
    for gy in range(s):
        for gx in range(s):
            for anchor_idx in range(b):
                cell_scores = scores[gy, gx, anchor_idx]
                if not np.any(cell_scores > conf_threshold):
                    continue
                box = decode_box(preds[gy, gx, anchor_idx, :4], gx, gy, anchors[anchor_idx], stride)
                box = np.clip(box, 0.0, extent)
                for cid in range(num_classes):
                    sc = float(cell_scores[cid])
                    if sc > conf_threshold:
                        detections.append(
                            Detection(
                                box=box.copy(),
                                class_id=cid,
                                score=sc,
                                frame_index=frame_index,
                                video_id=video_id,
                            )
                        )
    return detections


def nms(detections, iou_threshold=0.5):
    """Greedy per-class non-maximum suppression.

    Within each class, detections are visited in order of descending
    score (ties broken by box x_min then y_min); a detection is kept iff
    its IoU with every already kept box of the class is at or below the
    threshold.
    """
    check_fraction(iou_threshold, "iou_threshold", 0.0, 1.0, inclusive_low=False, inclusive_high=True)
    by_class = {}
    for det in detections:
        by_class.setdefault(int(det.class_id), []).append(det)

    kept = []
    for cid in sorted(by_class):
        pool = sorted(by_class[cid], key=lambda d: (-d.score, d.box[0], d.box[1]))
        chosen = []
        for det in pool:
            if all(iou(det.box, other.box) <= iou_threshold for other in chosen):
                chosen.append(det)
        kept.extend(chosen)
    return kept
