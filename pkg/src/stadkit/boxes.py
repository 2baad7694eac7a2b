"""Axis-aligned box geometry and the grid-cell box parameterization.

Boxes are float64 arrays in corner form ``[x_min, y_min, x_max, y_max]``;
center form is ``[c_x, c_y, w, h]``. All functions broadcast over leading
dimensions. The raw-to-pixel decode uses the usual sigmoid-offset /
exponential-scale form: the center offset within a cell goes through a
sigmoid, the sides scale an anchor shape by ``exp``.
"""

from __future__ import annotations

import numpy as np

from .validation import as_float_array, check_anchors, check_boxes, check_center_boxes

# exp() inputs are clipped here so oversized raw scales saturate to a large
# finite box instead of overflowing
EXP_CLIP = 50.0

# keeps encode finite when a center sits exactly on a cell edge
_OFFSET_EPS = 1e-9


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def box_area(boxes):
    boxes = check_boxes(boxes)
    return (boxes[..., 2] - boxes[..., 0]) * (boxes[..., 3] - boxes[..., 1])


def center_to_corner(boxes):
    """Convert ``[c_x, c_y, w, h]`` boxes to corner form."""
    boxes = check_center_boxes(boxes)
    cx, cy, w, h = (boxes[..., i] for i in range(4))
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)


def corner_to_center(boxes):
    """Convert corner-form boxes to ``[c_x, c_y, w, h]``."""
    boxes = check_boxes(boxes)
    x1, y1, x2, y2 = (boxes[..., i] for i in range(4))
    return np.stack([0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1], axis=-1)


def grid_cell(cx, cy, stride, grid_size):
    """Map box centers to integer grid cells.

    Cells are ``floor(c / stride)`` clamped to ``[0, grid_size - 1]``, so a
    center sitting exactly on the right or bottom image border still lands
    in the last cell.
    """
    if stride <= 0 or grid_size <= 0:
        raise ValueError("stride and grid_size must be positive")
    cx = as_float_array(cx, "cx")
    cy = as_float_array(cy, "cy")
    gx = np.clip(np.floor(cx / stride).astype(np.int64), 0, grid_size - 1)
    gy = np.clip(np.floor(cy / stride).astype(np.int64), 0, grid_size - 1)
    return gx, gy


def iou(a, b):
    """Elementwise intersection-over-union of corner-form boxes.

    Returns 0 where the union is empty (two degenerate boxes).
    """
    a = check_boxes(a, "a")
    b = check_boxes(b, "b")
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0.0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0.0, None)
    inter = iw * ih
    union = box_area(a) + box_area(b) - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def giou(a, b):
    """Elementwise generalized IoU: IoU minus the enclosing-box penalty.

    Requires the smallest enclosing box to have positive area; two boxes
    degenerate to the same point are rejected.
    """
    a = check_boxes(a, "a")
    b = check_boxes(b, "b")
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0.0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0.0, None)
    inter = iw * ih
    union = box_area(a) + box_area(b) - inter
    cw = np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])
    ch = np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])
    enclose = cw * ch
    if np.any(enclose <= 0):
        raise ValueError("giou undefined: enclosing box has zero area")
    iou_val = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    return iou_val - (enclose - union) / enclose


def iou_matrix(a, b):
    """Pairwise IoU between (N, 4) and (M, 4) corner boxes, as (N, M)."""
    a = check_boxes(a, "a")
    b = check_boxes(b, "b")
    a = a.reshape(-1, 4)
    b = b.reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return iou(a[:, None, :], b[None, :, :])


def shape_iou(wh_a, wh_b):
    """IoU of two box shapes placed on a common center.

    Inputs are ``(w, h)`` pairs (broadcastable); only the shapes matter, so
    the overlap along each axis is just the smaller side.
    """
    wh_a = as_float_array(wh_a, "wh_a")
    wh_b = as_float_array(wh_b, "wh_b")
    inter = np.minimum(wh_a[..., 0], wh_b[..., 0]) * np.minimum(wh_a[..., 1], wh_b[..., 1])
    union = wh_a[..., 0] * wh_a[..., 1] + wh_b[..., 0] * wh_b[..., 1] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def decode_box(raw, grid_x, grid_y, anchor, stride):
    """Decode raw ``(t_x, t_y, t_w, t_h)`` values into a corner-form box.

    ``c = (sigmoid(t_xy) + grid_xy) * stride`` and
    ``wh = anchor_wh * exp(t_wh)``; the exponent is clipped at
    ``+-EXP_CLIP`` so extreme raws saturate rather than overflow.
    Broadcasts over leading dimensions of ``raw`` / ``grid_x`` / ``grid_y``.
    """
    raw = as_float_array(raw, "raw")
    anchor = as_float_array(anchor, "anchor")
    if np.any(anchor <= 0):
        raise ValueError("anchor sides must be strictly positive")
    cx = (sigmoid(raw[..., 0]) + grid_x) * stride
    cy = (sigmoid(raw[..., 1]) + grid_y) * stride
    w = anchor[..., 0] * np.exp(np.clip(raw[..., 2], -EXP_CLIP, EXP_CLIP))
    h = anchor[..., 1] * np.exp(np.clip(raw[..., 3], -EXP_CLIP, EXP_CLIP))
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)


def encode_box(center_box, grid_x, grid_y, anchor, stride):
    """Invert :func:`decode_box` for a center-form box in a given cell.

    The center must lie inside the cell and the box must have positive
    size. An offset exactly on a cell edge is nudged by ``1e-9`` so the
    logit stays finite.
    """
    cb = check_center_boxes(center_box, "center_box")
    anchor = as_float_array(anchor, "anchor")
    if np.any(anchor <= 0):
        raise ValueError("anchor sides must be strictly positive")
    if np.any(cb[..., 2] <= 0) or np.any(cb[..., 3] <= 0):
        raise ValueError("cannot encode a zero-size box")
    off_x = cb[..., 0] / stride - grid_x
    off_y = cb[..., 1] / stride - grid_y
    if np.any(off_x < 0) or np.any(off_x > 1) or np.any(off_y < 0) or np.any(off_y > 1):
        raise ValueError("box center lies outside the target cell")
    off_x = np.clip(off_x, _OFFSET_EPS, 1.0 - _OFFSET_EPS)
    off_y = np.clip(off_y, _OFFSET_EPS, 1.0 - _OFFSET_EPS)
    tx = np.log(off_x / (1.0 - off_x))
    ty = np.log(off_y / (1.0 - off_y))
    tw = np.log(cb[..., 2] / anchor[..., 0])
    th = np.log(cb[..., 3] / anchor[..., 1])
    return np.stack([tx, ty, tw, th], axis=-1)


def decode_box_with_grad(raw, grid_x, grid_y, anchor, stride):
    """Decode one raw 4-vector and return the corner Jacobian.

    Returns ``(box, jac)`` where ``box`` is the corner-form box and
    ``jac[i, j] = d box[i] / d raw[j]``. Inside the saturation clip the
    size derivatives are the sides themselves; outside they are zero.
    """
    raw = as_float_array(raw, "raw").reshape(4)
    anchor = as_float_array(anchor, "anchor").reshape(2)
    if np.any(anchor <= 0):
        raise ValueError("anchor sides must be strictly positive")
    sx = float(sigmoid(raw[0]))
    sy = float(sigmoid(raw[1]))
    cx = (sx + grid_x) * stride
    cy = (sy + grid_y) * stride
    w = anchor[0] * np.exp(np.clip(raw[2], -EXP_CLIP, EXP_CLIP))
    h = anchor[1] * np.exp(np.clip(raw[3], -EXP_CLIP, EXP_CLIP))
    dcx = stride * sx * (1.0 - sx)
    dcy = stride * sy * (1.0 - sy)
    dw = w if abs(raw[2]) < EXP_CLIP else 0.0
    dh = h if abs(raw[3]) < EXP_CLIP else 0.0
    box = np.array([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h])
    jac = np.array(
        [
            [dcx, 0.0, -0.5 * dw, 0.0],
            [0.0, dcy, 0.0, -0.5 * dh],
            [dcx, 0.0, 0.5 * dw, 0.0],
            [0.0, dcy, 0.0, 0.5 * dh],
        ]
    )
    return box, jac


def giou_with_grad(pred, target):
    """Generalized IoU of one box pair plus its gradient w.r.t. ``pred``.

    ``target`` is treated as a constant with positive area. At the
    non-smooth points (a predicted edge coinciding with a target edge, or
    boxes exactly touching) the gradient follows the branch taken by the
    forward evaluation.
    """
    p = check_boxes(pred, "pred").reshape(4)
    t = check_boxes(target, "target").reshape(4)
    px1, py1, px2, py2 = p
    tx1, ty1, tx2, ty2 = t

    iw = min(px2, tx2) - max(px1, tx1)
    ih = min(py2, ty2) - max(py1, ty1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    area_p = (px2 - px1) * (py2 - py1)
    area_t = (tx2 - tx1) * (ty2 - ty1)
    if area_t <= 0:
        raise ValueError("target box must have positive area")
    union = area_p + area_t - inter
    cw = max(px2, tx2) - min(px1, tx1)
    ch = max(py2, ty2) - min(py1, ty1)
    enclose = cw * ch
    if enclose <= 0:
        raise ValueError("giou undefined: enclosing box has zero area")

    # d inter / d pred, following the min/max branches actually taken
    d_inter = np.zeros(4)
    if iw > 0 and ih > 0:
        if px1 > tx1:
            d_inter[0] = -ih
        if px2 < tx2:
            d_inter[2] = ih
        if py1 > ty1:
            d_inter[1] = -iw
        if py2 < ty2:
            d_inter[3] = iw
    d_area_p = np.array([-(py2 - py1), -(px2 - px1), py2 - py1, px2 - px1])
    d_union = d_area_p - d_inter

    d_enclose = np.zeros(4)
    if px1 < tx1:
        d_enclose[0] = -ch
    if px2 > tx2:
        d_enclose[2] = ch
    if py1 < ty1:
        d_enclose[1] = -cw
    if py2 > ty2:
        d_enclose[3] = cw

    iou_val = inter / union
    d_iou = (d_inter * union - inter * d_union) / union**2
    # giou = iou - 1 + union / enclose
    value = iou_val - (enclose - union) / enclose
    d_ratio = (d_union * enclose - union * d_enclose) / enclose**2
    return float(value), d_iou + d_ratio
