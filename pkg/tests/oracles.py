"""Independent reference implementations used to check the library.

Everything here is deliberately written with different algorithms than
the library code: pixel counting instead of closed-form areas, explicit
threshold sweeps instead of cumulative-sum AP, a scalar textbook Adam
trace, and finite differences for gradients. Keep this module free of
imports from stadkit internals beyond plain data access.
"""

from __future__ import annotations

import numpy as np


def raster_fill(box, canvas):
    """Mark the unit pixels covered by an integer-coordinate box."""
    x1, y1, x2, y2 = (int(round(v)) for v in box)
    canvas[max(y1, 0) : max(y2, 0), max(x1, 0) : max(x2, 0)] = True


def raster_iou_giou(box_a, box_b, bound=160):
    """IoU and GIoU by counting unit pixels on a canvas.

    Exact for integer-coordinate boxes that fit inside the canvas.
    Returns (iou, giou, union_pixels).
    """
    a = np.zeros((bound, bound), dtype=bool)
    b = np.zeros((bound, bound), dtype=bool)
    raster_fill(box_a, a)
    raster_fill(box_b, b)
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    iou = inter / union if union else 0.0

    ex1 = min(box_a[0], box_b[0])
    ey1 = min(box_a[1], box_b[1])
    ex2 = max(box_a[2], box_b[2])
    ey2 = max(box_a[3], box_b[3])
    enclose = np.zeros((bound, bound), dtype=bool)
    raster_fill((ex1, ey1, ex2, ey2), enclose)
    n_enclose = int(np.count_nonzero(enclose))
    if n_enclose == 0:
        raise ValueError("degenerate enclosing box")
    giou = iou - (n_enclose - union) / n_enclose
    return iou, giou, union


def central_difference(fn, x, h=1e-6):
    """Elementwise central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x)
        flat[i] = orig - h
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def box_iou_plain(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1])
    area_b = max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def frame_ap_oracle(dets, gts, iou_threshold):
    """Brute-force frame AP for one class.

    ``dets`` is a list of (frame_key, box, score), ``gts`` a list of
    (frame_key, box). Greedy matching re-derived from scratch; the AP is
    computed with an O(n^2) max-scan over the ranked list instead of a
    cumulative envelope, so a library bug cannot hide in shared code.
    """
    order = sorted(
        range(len(dets)),
        key=lambda i: (-dets[i][2], dets[i][1][0], dets[i][1][1]),
    )
    n_gt = len(gts)
    used = [False] * n_gt
    flags = []
    for i in order:
        frame, box, _ = dets[i]
        best_j = -1
        best_iou = 0.0
        for j, (gframe, gbox) in enumerate(gts):
            if gframe != frame or used[j]:
                continue
            ov = box_iou_plain(box, gbox)
            if ov > best_iou:
                best_iou = ov
                best_j = j
        if best_j >= 0 and best_iou > iou_threshold:
            used[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    if n_gt == 0:
        return 0.0

    precisions = []
    recalls = []
    tp = 0
    for k, flag in enumerate(flags, start=1):
        if flag:
            tp += 1
        precisions.append(tp / k)
        recalls.append(tp / n_gt)

    ap = 0.0
    prev_recall = 0.0
    for k in range(len(flags)):
        if recalls[k] > prev_recall:
            best_later = max(precisions[k:])
            ap += (recalls[k] - prev_recall) * best_later
            prev_recall = recalls[k]
    return ap


def adam_reference_trace(x0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                         weight_decay=0.0):
    """Textbook scalar AdamW trace, one value per step, for oracle checks."""
    x = float(x0)
    m = 0.0
    v = 0.0
    history = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        x = x - lr * weight_decay * x - lr * m_hat / (np.sqrt(v_hat) + eps)
        history.append(x)
    return history


def chain_linker_oracle(dets_by_frame, link_iou, max_gap):
    """Tube decomposition for single-candidate chains.

    Valid only on instances where every detection has at most one
    plausible predecessor and vice versa (the regime where greedy linking
    is provably optimal); asserts that property, then follows chains.
    Returns a list of {frame: box} dicts.
    """
    frames = sorted(dets_by_frame)
    chains = []  # each: {"frames": {f: box}, "last": f}
    for f in frames:
        candidates = list(dets_by_frame[f])
        # predecessor sets must be unambiguous
        links = []
        for di, det_box in enumerate(candidates):
            preds = [
                ci for ci, chain in enumerate(chains)
                if f - chain["last"] <= max_gap + 1
                and box_iou_plain(det_box, chain["frames"][chain["last"]]) >= link_iou
            ]
            assert len(preds) <= 1, "instance is not a single-candidate chain"
            links.append(preds[0] if preds else None)
        taken = [l for l in links if l is not None]
        assert len(taken) == len(set(taken)), "instance is not a single-candidate chain"
        for di, det_box in enumerate(candidates):
            if links[di] is None:
                chains.append({"frames": {f: det_box}, "last": f})
            else:
                chain = chains[links[di]]
                chain["frames"][f] = det_box
                chain["last"] = f
    return [c["frames"] for c in chains]
