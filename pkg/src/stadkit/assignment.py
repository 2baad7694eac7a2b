"""Ground-truth to (cell, anchor) training-target assignment.

Two schemes are provided. The threshold scheme matches each ground truth
against the anchor shapes (placed on a common center) and marks every
anchor whose shape IoU exceeds the threshold as positive, falling back to
the single best anchor when none clears it, so one ground truth can own
several positives. The best-prediction scheme marks exactly the decoded
predicted box with the highest IoU against the ground truth, so positives
move as the predictions move.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .boxes import corner_to_center, decode_box, encode_box, grid_cell, iou, shape_iou
from .validation import check_anchors, check_boxes, check_prediction_grid


@dataclass(frozen=True)
class GroundTruth:
    """One annotated object instance on one frame.

    ``box`` is corner-form pixels. ``class_id`` may be a single id or a
    sequence of ids for multi-label data.
    """

    box: np.ndarray
    class_id: int | Sequence[int]
    frame_index: int = 0
    video_id: str = ""
    instance_id: str | None = None

    def __post_init__(self):
        box = check_boxes(self.box, "box").reshape(4)
        if (box[2] - box[0]) * (box[3] - box[1]) <= 0:
            raise ValueError("ground-truth box must have positive area")
        box.setflags(write=False)
        object.__setattr__(self, "box", box)

    def class_ids(self):
        if isinstance(self.class_id, (int, np.integer)):
            return (int(self.class_id),)
        return tuple(int(c) for c in self.class_id)

    def primary_class(self):
        return self.class_ids()[0]


@dataclass(frozen=True)
class AssignmentMap:
    """Dense per-(cell, anchor) training targets for one frame.

    ``positive`` flags the entries responsible for a ground truth,
    ``gt_index`` holds the matched ground-truth index (-1 for negatives),
    and the target tables carry the regression / class / confidence
    targets at positive entries (zeros elsewhere). ``candidate_ious`` keeps
    the per-anchor matching scores of every ground truth for diagnostics.
    """

    positive: np.ndarray
    gt_index: np.ndarray
    box_targets: np.ndarray
    gt_boxes: np.ndarray
    class_targets: np.ndarray
    conf_targets: np.ndarray
    n_gt: int
    n_dropped: int = 0
    candidate_ious: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        for arr in (
            self.positive,
            self.gt_index,
            self.box_targets,
            self.gt_boxes,
            self.class_targets,
            self.conf_targets,
            self.candidate_ious,
        ):
            arr.setflags(write=False)

    @property
    def shape(self):
        return self.positive.shape


def count_positives(amap: AssignmentMap) -> int:
    """Number of positive (cell, anchor) entries in the map."""
    return int(np.count_nonzero(amap.positive))


def _resolve_cell(order, iou_rows, candidate_rows):
    """Give each ground truth in one cell a disjoint set of anchors.

    ``order`` lists ground-truth indices in input order. Contested anchors
    go to the claimant with the higher matching IoU (earlier ground truth
    on ties); a ground truth left with nothing falls back to its best
    still-unclaimed anchor, and is dropped only when every anchor is taken.
    """
    num_anchors = iou_rows[0].shape[0]
    owner = {}
    for b in range(num_anchors):
        best = None
        for j in range(len(order)):
            if candidate_rows[j][b] and (best is None or iou_rows[j][b] > iou_rows[best][b]):
                best = j
        if best is not None:
            owner[b] = best
    assigned = {j: [b for b, o in owner.items() if o == j] for j in range(len(order))}
    dropped = []
    for j in range(len(order)):
        if assigned[j]:
            continue
        free = [b for b in range(num_anchors) if b not in owner]
        if not free:
            dropped.append(j)
            continue
        pick = max(free, key=lambda b: (iou_rows[j][b], -b))
        owner[pick] = j
        assigned[j] = [pick]
    return assigned, dropped


def _build_map(gts, anchors, grid_size, stride, num_classes, iou_per_gt, candidates_per_gt):
    """Materialize the dense target tables from per-gt anchor choices."""
    num_anchors = anchors.shape[0]
    shape = (grid_size, grid_size, num_anchors)
    positive = np.zeros(shape, dtype=bool)
    gt_index = np.full(shape, -1, dtype=np.int64)
    box_targets = np.zeros(shape + (4,))
    gt_boxes = np.zeros(shape + (4,))
    class_targets = np.zeros(shape + (num_classes,))
    conf_targets = np.zeros(shape)

    cells = {}
    centers = []
    for i, gt in enumerate(gts):
        center = corner_to_center(gt.box)
        gx, gy = grid_cell(center[0], center[1], stride, grid_size)
        cell = (int(gy), int(gx))
        centers.append((center, int(gx), int(gy)))
        cells.setdefault(cell, []).append(i)

    n_dropped = 0
    for (gy, gx), members in cells.items():
        assigned, dropped = _resolve_cell(
            members,
            [iou_per_gt[i] for i in members],
            [candidates_per_gt[i] for i in members],
        )
        n_dropped += len(dropped)
        for j, gt_idx in enumerate(members):
            gt = gts[gt_idx]
            center = centers[gt_idx][0]
            for b in assigned[j]:
                positive[gy, gx, b] = True
                gt_index[gy, gx, b] = gt_idx
                box_targets[gy, gx, b] = encode_box(center, gx, gy, anchors[b], stride)
                gt_boxes[gy, gx, b] = gt.box
                for c in gt.class_ids():
                    if not 0 <= c < num_classes:
                        raise ValueError(f"class id {c} out of range for {num_classes} classes")
                    class_targets[gy, gx, b, c] = 1.0
                conf_targets[gy, gx, b] = 1.0

    ious = np.stack(iou_per_gt) if gts else np.zeros((0, num_anchors))
    return AssignmentMap(
        positive=positive,
        gt_index=gt_index,
        box_targets=box_targets,
        gt_boxes=gt_boxes,
        class_targets=class_targets,
        conf_targets=conf_targets,
        n_gt=len(gts),
        n_dropped=n_dropped,
        candidate_ious=ious,
    )


def assign_plus(gts, anchors, grid_size, stride, num_classes, threshold=0.5):
    """Threshold-based anchor-shape assignment (possibly several per gt).

    Every anchor whose co-centered shape IoU with the ground truth exceeds
    ``threshold`` becomes positive in the gt's cell; if none does, the
    single highest-IoU anchor is used. Independent of any predictions.
    """
    anchors = check_anchors(anchors)
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    iou_per_gt = []
    candidates_per_gt = []
    for gt in gts:
        wh = corner_to_center(gt.box)[2:]
        ious = shape_iou(anchors, wh)
        cand = ious > threshold
        if not cand.any():
            cand = np.zeros_like(cand)
            cand[int(np.argmax(ious))] = True
        iou_per_gt.append(ious)
        candidates_per_gt.append(cand)
    return _build_map(list(gts), anchors, grid_size, stride, num_classes, iou_per_gt, candidates_per_gt)


def assign_yowo_baseline(gts, preds, anchors, grid_size, stride, num_classes):
    """Best-decoded-prediction assignment (exactly one positive per gt).

    For each ground truth, only the decoded predicted box with the highest
    IoU at the gt's cell becomes positive (lowest anchor index on ties).
    """
    anchors = check_anchors(anchors)
    preds = check_prediction_grid(preds, grid_size, anchors.shape[0], num_classes)
    iou_per_gt = []
    candidates_per_gt = []
    for gt in gts:
        center = corner_to_center(gt.box)
        gx, gy = grid_cell(center[0], center[1], stride, grid_size)
        gx, gy = int(gx), int(gy)
        decoded = decode_box(preds[gy, gx, :, :4], gx, gy, anchors, stride)
        ious = iou(decoded, gt.box[None, :])
        cand = np.zeros(anchors.shape[0], dtype=bool)
        cand[int(np.argmax(ious))] = True
        iou_per_gt.append(ious)
        candidates_per_gt.append(cand)
    return _build_map(list(gts), anchors, grid_size, stride, num_classes, iou_per_gt, candidates_per_gt)


def with_live_iou_conf(amap, preds, anchors, stride):
    """Replace the positive confidence targets by the live prediction IoU.

    Alternative to the default constant-1 target: each positive entry's
    target becomes the IoU between its currently decoded box and its
    ground-truth box.
    """
    anchors = check_anchors(anchors)
    conf = amap.conf_targets.copy()
    for gy, gx, b in np.argwhere(amap.positive):
        decoded = decode_box(preds[gy, gx, b, :4], gx, gy, anchors[b], stride)
        conf[gy, gx, b] = float(iou(decoded, amap.gt_boxes[gy, gx, b]))
    return replace(amap, conf_targets=conf)
