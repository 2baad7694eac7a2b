"""Frame-level and video-level average precision for action detection.

Frame AP follows the usual protocol: detections of a class are ranked by
score across all frames, each is matched greedily to the highest-IoU
still-unmatched ground truth of its own frame, and precision is
integrated over recall with all-point interpolation. Video AP does the
same at the tube level, using spatio-temporal IoU between linked
detection tubes and ground-truth tubes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import iou
from .validation import check_fraction


@dataclass
class PRCurve:
    """Precision/recall points plus the interpolated average precision.

    ``n_gt`` doubles as the no-ground-truth flag: when it is zero the AP
    is reported as 0 and the class is excluded from mAP averages.
    """

    precision: np.ndarray
    recall: np.ndarray
    ap: float
    n_gt: int


def _interpolated_ap(precision, recall):
    """All-point interpolation: area under the monotone precision envelope."""
    if len(recall) == 0:
        return 0.0
    mrec = np.concatenate(([0.0], recall))
    mpre = np.concatenate(([0.0], precision))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changes = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))


def _curve_from_flags(tp, fp, n_gt):
    if n_gt == 0:
        return PRCurve(precision=np.zeros(0), recall=np.zeros(0), ap=0.0, n_gt=0)
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(fp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-12)
    return PRCurve(
        precision=precision,
        recall=recall,
        ap=_interpolated_ap(precision, recall),
        n_gt=n_gt,
    )


def frame_ap(detections, ground_truths, class_id, iou_threshold=0.5):
    """AP of one class over per-frame detections.

    ``detections`` is a flat list of Detection objects, ``ground_truths``
    a flat list of GroundTruth objects; both are keyed internally by
    (video_id, frame_index). Detections are processed in order of
    descending score (ties broken by box x_min, then y_min); each matches
    the still-unmatched ground truth of its frame with the highest IoU,
    counting as a true positive when that IoU exceeds the threshold.
    """
    check_fraction(iou_threshold, "iou_threshold", 0.0, 1.0, inclusive_low=True)

    gt_by_frame = {}
    for gt in ground_truths:
        if class_id in gt.class_ids():
            key = (gt.video_id, gt.frame_index)
            gt_by_frame.setdefault(key, []).append(np.asarray(gt.box, dtype=float).reshape(4))
    n_gt = sum(len(v) for v in gt_by_frame.values())

    ranked = [d for d in detections if int(d.class_id) == class_id]
    ranked.sort(key=lambda d: (-d.score, d.box[0], d.box[1]))

    matched = {key: np.zeros(len(v), dtype=bool) for key, v in gt_by_frame.items()}
    tp = np.zeros(len(ranked))
    fp = np.zeros(len(ranked))
    for rank, det in enumerate(ranked):
        key = (det.video_id, det.frame_index)
        best_iou = 0.0
        best_idx = -1
        for gi, gt_box in enumerate(gt_by_frame.get(key, [])):
            if matched[key][gi]:
                continue
            overlap = float(iou(det.box, gt_box))
            if overlap > best_iou:
                best_iou = overlap
                best_idx = gi
        if best_idx >= 0 and best_iou > iou_threshold:
            matched[key][best_idx] = True
            tp[rank] = 1.0
        else:
            fp[rank] = 1.0
    return _curve_from_flags(tp, fp, n_gt)


def per_class_frame_ap(detections, ground_truths, classes, iou_threshold=0.5):
    return {
        cid: frame_ap(detections, ground_truths, cid, iou_threshold)
        for cid in sorted(classes)
    }


def frame_map(detections, ground_truths, classes, iou_threshold=0.5):
    """Unweighted mean of frame AP over the classes that have ground truth.

    Raises when no class has any ground truth, since the mean is undefined.
    """
    curves = per_class_frame_ap(detections, ground_truths, classes, iou_threshold)
    aps = [c.ap for c in curves.values() if c.n_gt > 0]
    if not aps:
        raise ValueError("no class has ground truth; frame mAP is undefined")
    return float(np.mean(aps))


@dataclass
class ActionTube:
    """A per-frame box track for one class within one video."""

    video_id: str
    class_id: int
    frames: dict = field(default_factory=dict)
    score: float = 0.0

    @property
    def start(self):
        return min(self.frames)

    @property
    def end(self):
        return max(self.frames)

    def __len__(self):
        return len(self.frames)


def tube_iou(a, b):
    """Spatio-temporal IoU: per-frame box IoU summed over the temporal union.

    Frames present in only one tube contribute zero overlap but still
    count in the denominator, so temporal misalignment is penalized.
    """
    frames = set(a.frames) | set(b.frames)
    if not frames:
        return 0.0
    total = 0.0
    for f in sorted(frames):
        if f in a.frames and f in b.frames:
            total += float(
                iou(np.asarray(a.frames[f], dtype=float), np.asarray(b.frames[f], dtype=float))
            )
    return total / len(frames)


def gt_tubes(ground_truths):
    """Group ground-truth boxes into tubes keyed by (video, instance, class).

    Instances lacking an instance_id collapse into one tube per
    (video, class) pair.
    """
    tubes = {}
    for gt in ground_truths:
        for cid in gt.class_ids():
            key = (gt.video_id, gt.instance_id, cid)
            if key not in tubes:
                tubes[key] = ActionTube(video_id=gt.video_id, class_id=cid)
            tubes[key].frames[gt.frame_index] = np.asarray(gt.box, dtype=float).reshape(4)
    return list(tubes.values())


def link_tubes(detections, link_iou=0.3, max_gap=1):
    """Greedy online linking of one video's same-class detections into tubes.

    Frames are visited in order. Each live tube (in creation order) is
    extended by the unclaimed detection whose IoU with the tube's last
    box is highest, provided that IoU is at least ``link_iou``; IoU ties
    go to the higher-scoring detection. Detections left unclaimed start
    new tubes. A tube that skips more than ``max_gap`` consecutive frames
    is closed. Tube score is the mean score of its member detections.
    """
    check_fraction(link_iou, "link_iou", 0.0, 1.0, inclusive_low=True)
    if max_gap < 0:
        raise ValueError(f"max_gap must be non-negative, got {max_gap}")
    if not detections:
        return []
    video_ids = {d.video_id for d in detections}
    class_ids = {int(d.class_id) for d in detections}
    if len(video_ids) > 1 or len(class_ids) > 1:
        raise ValueError(
            f"link_tubes expects one video and one class, got videos {sorted(video_ids)} "
            f"classes {sorted(class_ids)}"
        )
    video_id = video_ids.pop()
    class_id = class_ids.pop()

    by_frame = {}
    for det in detections:
        by_frame.setdefault(int(det.frame_index), []).append(det)

    open_tubes = []  # entries: [tube, last_frame, score_sum, n]
    closed = []
    for frame_index in sorted(by_frame):
        live = []
        for entry in open_tubes:
            if frame_index - entry[1] > max_gap + 1:
                closed.append(entry)
            else:
                live.append(entry)
        open_tubes = live

        # sorted so IoU ties resolve toward the higher score, then stably
        pool = sorted(by_frame[frame_index], key=lambda d: (-d.score, d.box[0], d.box[1]))
        claimed = set()
        for entry in open_tubes:
            last_box = entry[0].frames[entry[1]]
            best_idx = -1
            best_iou = -1.0
            for di, det in enumerate(pool):
                if di in claimed:
                    continue
                overlap = float(iou(det.box, last_box))
                if overlap >= link_iou and overlap > best_iou:
                    best_iou = overlap
                    best_idx = di
            if best_idx >= 0:
                det = pool[best_idx]
                entry[0].frames[frame_index] = np.asarray(det.box, dtype=float)
                entry[1] = frame_index
                entry[2] += det.score
                entry[3] += 1
                claimed.add(best_idx)
        for di, det in enumerate(pool):
            if di not in claimed:
                tube = ActionTube(video_id=video_id, class_id=class_id)
                tube.frames[int(frame_index)] = np.asarray(det.box, dtype=float)
                open_tubes.append([tube, int(frame_index), det.score, 1])
    closed.extend(open_tubes)

    tubes = []
    for tube, _, score_sum, n in closed:
        tube.score = score_sum / n
        tubes.append(tube)
    return tubes


def build_pred_tubes(detections, link_iou=0.3, max_gap=1):
    """Link a mixed detection list into tubes, per (video, class) group."""
    groups = {}
    for det in detections:
        groups.setdefault((det.video_id, int(det.class_id)), []).append(det)
    tubes = []
    for key in sorted(groups):
        tubes.extend(link_tubes(groups[key], link_iou, max_gap))
    return tubes


def video_ap(pred_tubes, truth_tubes, class_id, iou_threshold=0.5):
    """AP over one class's tubes, greedy matching by spatio-temporal IoU."""
    check_fraction(iou_threshold, "iou_threshold", 0.0, 1.0, inclusive_low=True)
    truths = [t for t in truth_tubes if int(t.class_id) == class_id]
    ranked = sorted(
        (t for t in pred_tubes if int(t.class_id) == class_id),
        key=lambda t: (-t.score, t.video_id, t.start),
    )
    matched = np.zeros(len(truths), dtype=bool)
    tp = np.zeros(len(ranked))
    fp = np.zeros(len(ranked))
    for rank, tube in enumerate(ranked):
        best_iou = 0.0
        best_idx = -1
        for gi, gt_tube in enumerate(truths):
            if matched[gi] or gt_tube.video_id != tube.video_id:
                continue
            overlap = tube_iou(tube, gt_tube)
            if overlap > best_iou:
                best_iou = overlap
                best_idx = gi
        if best_idx >= 0 and best_iou > iou_threshold:
            matched[best_idx] = True
            tp[rank] = 1.0
        else:
            fp[rank] = 1.0
    return _curve_from_flags(tp, fp, len(truths))


def per_class_video_ap(pred_tubes, truth_tubes, classes, iou_threshold=0.5):
    return {
        cid: video_ap(pred_tubes, truth_tubes, cid, iou_threshold)
        for cid in sorted(classes)
    }


def video_map(pred_tubes, truth_tubes, classes, iou_threshold=0.5):
    """Unweighted mean of video AP over classes that have ground-truth tubes."""
    curves = per_class_video_ap(pred_tubes, truth_tubes, classes, iou_threshold)
    aps = [c.ap for c in curves.values() if c.n_gt > 0]
    if not aps:
        raise ValueError("no class has ground-truth tubes; video mAP is undefined")
    return float(np.mean(aps))
