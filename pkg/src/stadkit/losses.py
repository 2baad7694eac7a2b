"""Composite detection loss and its analytic gradients.

Four terms over a raw prediction grid of shape (S, S, B, 5 + C): a
sigmoid-MSE confidence term split over positive and negative entries, a
per-class sigmoid focal loss on positives, and a box term on positives
that is either a generalized-IoU loss through the full decode chain or an
optional per-coordinate smooth-L1 alternative. Every operation returns the
scalar value together with the gradient w.r.t. the raw grid, and the batch
reduction divides both by the batch size.

Values are accumulated in float64 in a fixed order, so results do not
depend on how work is distributed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import decode_box_with_grad, giou_with_grad, sigmoid
from .validation import check_anchors

# channel layout of the last grid axis
CH_TX, CH_TY, CH_TW, CH_TH, CH_CONF = range(5)
N_BOX_CHANNELS = 5


@dataclass(frozen=True)
class LossWeights:
    """Term weights and focal-loss parameters; all must be non-negative."""

    lambda_act: float = 5.0
    lambda_noact: float = 1.0
    lambda_cls: float = 1.0
    lambda_coord: float = 5.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25

    def __post_init__(self):
        for name in ("lambda_act", "lambda_noact", "lambda_cls", "lambda_coord", "focal_gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.focal_alpha <= 1.0:
            raise ValueError("focal_alpha must lie in [0, 1]")


@dataclass
class LossBreakdown:
    """Per-term values (weighted, batch-normalized) and the raw gradients.

    ``total`` is the exact sum of the four stored terms; ``gradients`` has
    the same shape as the prediction-grid batch.
    """

    conf_act: float
    conf_noact: float
    cls: float
    coord: float
    total: float
    gradients: np.ndarray

    def as_dict(self):
        return {
            "conf_act": self.conf_act,
            "conf_noact": self.conf_noact,
            "cls": self.cls,
            "coord": self.coord,
            "total": self.total,
        }


def _check_shapes(preds, amap):
    if preds.ndim != 4 or preds.shape[:3] != amap.positive.shape:
        raise ValueError(
            f"prediction grid shape {preds.shape} does not match assignment map {amap.positive.shape}"
        )
    if preds.shape[3] != N_BOX_CHANNELS + amap.class_targets.shape[3]:
        raise ValueError(
            f"prediction grid has {preds.shape[3]} channels, targets expect "
            f"{N_BOX_CHANNELS + amap.class_targets.shape[3]}"
        )


def _confidence_parts(preds, amap, weights):
    raw = preds[..., CH_CONF]
    s = sigmoid(raw)
    pos = amap.positive
    diff = s - amap.conf_targets
    act = weights.lambda_act * float(np.sum(np.where(pos, diff, 0.0) ** 2))
    noact = weights.lambda_noact * float(np.sum(np.where(pos, 0.0, s) ** 2))
    scale = np.where(pos, 2.0 * weights.lambda_act * diff, 2.0 * weights.lambda_noact * s)
    grad = np.zeros_like(preds)
    grad[..., CH_CONF] = scale * s * (1.0 - s)
    return act, noact, grad


def confidence_loss(preds, amap, weights):
    """Sigmoid-MSE confidence term over positives and negatives.

    Positives pull ``sigmoid(raw)`` toward their confidence target,
    negatives toward zero. Returns ``(value, gradient)``.
    """
    _check_shapes(preds, amap)
    act, noact, grad = _confidence_parts(preds, amap, weights)
    return act + noact, grad


def focal_cls_loss(preds, amap, weights):
    """Alpha-balanced sigmoid focal loss on positive entries only.

    Per-class binary form, so multi-hot class targets are supported.
    Returns ``(value, gradient)``.
    """
    _check_shapes(preds, amap)
    grad = np.zeros_like(preds)
    pos = amap.positive
    if not pos.any():
        return 0.0, grad
    x = preds[pos][:, N_BOX_CHANNELS:]
    t = amap.class_targets[pos]
    gamma = weights.focal_gamma
    alpha = weights.focal_alpha

    p = sigmoid(x)
    log_p = -np.logaddexp(0.0, -x)
    log_1mp = -np.logaddexp(0.0, x)
    q = t * p + (1.0 - t) * (1.0 - p)
    log_q = t * log_p + (1.0 - t) * log_1mp
    a_t = t * alpha + (1.0 - t) * (1.0 - alpha)

    value = weights.lambda_cls * float(np.sum(-a_t * (1.0 - q) ** gamma * log_q))

    dq_dx = (2.0 * t - 1.0) * p * (1.0 - p)
    # (1-q)^gamma * dq_dx / q written without the division: the q cancels
    ratio = np.where(t > 0.5, 1.0 - p, -p)
    if gamma == 0.0:
        modulating = np.zeros_like(q)
    else:
        modulating = gamma * (1.0 - q) ** (gamma - 1.0) * log_q * dq_dx
    dx = weights.lambda_cls * a_t * (modulating - (1.0 - q) ** gamma * ratio)

    scatter = np.zeros((x.shape[0], preds.shape[3]))
    scatter[:, N_BOX_CHANNELS:] = dx
    grad[pos] = scatter
    return value, grad


def giou_loss(preds, amap, anchors, stride, weights):
    """Box regression term ``1 - GIoU`` summed over positive entries.

    The gradient flows analytically through the generalized IoU, the
    corner conversion, and the raw-to-pixel decode into the four raw box
    channels. Returns ``(value, gradient)``.
    """
    _check_shapes(preds, amap)
    anchors = check_anchors(anchors)
    grad = np.zeros_like(preds)
    total = 0.0
    for gy, gx, b in np.argwhere(amap.positive):
        box, jac = decode_box_with_grad(preds[gy, gx, b, :4], int(gx), int(gy), anchors[b], stride)
        value, d_box = giou_with_grad(box, amap.gt_boxes[gy, gx, b])
        total += 1.0 - value
        grad[gy, gx, b, :4] = -weights.lambda_coord * (d_box @ jac)
    return weights.lambda_coord * total, grad


def smooth_l1_box_loss(preds, amap, weights, beta=1.0):
    """Optional per-coordinate smooth-L1 alternative on the raw targets.

    Operates directly in raw (encoded) space against the stored regression
    targets. Returns ``(value, gradient)``.
    """
    _check_shapes(preds, amap)
    grad = np.zeros_like(preds)
    pos = amap.positive
    if not pos.any():
        return 0.0, grad
    d = preds[pos][:, :4] - amap.box_targets[pos]
    absd = np.abs(d)
    quadratic = absd < beta
    value = weights.lambda_coord * float(
        np.sum(np.where(quadratic, 0.5 * d**2 / beta, absd - 0.5 * beta))
    )
    dx = weights.lambda_coord * np.where(quadratic, d / beta, np.sign(d))
    scatter = np.zeros((d.shape[0], preds.shape[3]))
    scatter[:, :4] = dx
    grad[pos] = scatter
    return value, grad


def total_loss(preds_batch, maps, anchors, stride, weights, box_mode="giou",
               smooth_l1_beta=1.0):
    """Full composite loss over a batch, normalized by the batch size.

    ``preds_batch`` is (N, S, S, B, 5 + C) and ``maps`` a matching list of
    assignment maps. ``box_mode`` selects the regression term: "giou"
    (default) or the "smooth_l1" alternative.
    """
    preds_batch = np.asarray(preds_batch, dtype=np.float64)
    if preds_batch.ndim == 4:
        preds_batch = preds_batch[None]
    n = preds_batch.shape[0]
    if n == 0 or len(maps) == 0:
        raise ValueError("batch must contain at least one sample")
    if len(maps) != n:
        raise ValueError(f"got {n} prediction grids but {len(maps)} assignment maps")
    if box_mode not in ("giou", "smooth_l1"):
        raise ValueError(f"unknown box_mode {box_mode!r}")

    conf_act = conf_noact = cls = coord = 0.0
    gradients = np.zeros_like(preds_batch)
    for i in range(n):
        preds = preds_batch[i]
        amap = maps[i]
        _check_shapes(preds, amap)
        act_i, noact_i, conf_grad = _confidence_parts(preds, amap, weights)
        cls_i, cls_grad = focal_cls_loss(preds, amap, weights)
        if box_mode == "giou":
            coord_i, coord_grad = giou_loss(preds, amap, anchors, stride, weights)
        else:
            coord_i, coord_grad = smooth_l1_box_loss(preds, amap, weights, beta=smooth_l1_beta)
        conf_act += act_i
        conf_noact += noact_i
        cls += cls_i
        coord += coord_i
        gradients[i] = conf_grad + cls_grad + coord_grad

    conf_act /= n
    conf_noact /= n
    cls /= n
    coord /= n
    gradients /= n
    total = conf_act + conf_noact + cls + coord
    return LossBreakdown(
        conf_act=conf_act,
        conf_noact=conf_noact,
        cls=cls,
        coord=coord,
        total=total,
        gradients=gradients,
    )
