"""Deterministic per-cell clip features and the affine detection head.

The feature extractor stands in for a video backbone: from the recorded
object boxes of a clip window it builds, per grid cell, keyframe presence
and geometry channels, per-class coverage averaged across the frames, mean
center offsets, and fixed positional encodings. The head is a single
affine map from the cell feature vector to the per-cell raw outputs, so
its parameter gradients are exact outer products.

Feature layout per cell (C = number of classes, F = 9 + 2C):
  0         keyframe center-presence flag
  1, 2      logit of the keyframe center offset within the cell (x, y)
  3, 4      log keyframe box width / height (pixels)
  5 .. 5+C  keyframe class indicator of the cell's object
  5+C..5+2C per-class cell coverage averaged over the clip frames
  5+2C      mean center offset x over the frames (relative to cell center)
  5+2C+1    mean center offset y over the frames
  5+2C+2, 3 normalized cell position (x, y)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import corner_to_center, grid_cell
from .validation import as_float_array, check_positive_int

_GEOM_EPS = 1e-6


def feature_dim(num_classes):
    return 9 + 2 * num_classes


def head_output_dim(num_anchors, num_classes):
    return num_anchors * (5 + num_classes)


def extract_features(clip, keyframe, grid_size, stride, num_classes, clip_length):
    """Per-cell features for the clip window ending at ``keyframe``.

    The window covers the ``clip_length`` frames up to and including the
    keyframe (fewer near the start of the clip). The clip's frame size
    must equal ``grid_size * stride`` in both dimensions.
    """
    check_positive_int(grid_size, "grid_size")
    check_positive_int(stride, "stride")
    check_positive_int(clip_length, "clip_length")
    if clip.width != grid_size * stride or clip.height != grid_size * stride:
        raise ValueError(
            f"clip frame size {clip.width}x{clip.height} does not match "
            f"grid {grid_size} x stride {stride}"
        )
    if not 0 <= keyframe < len(clip.frames):
        raise ValueError(f"keyframe {keyframe} out of range for {len(clip.frames)} frames")

    s = grid_size
    c = num_classes
    feats = np.zeros((s, s, feature_dim(c)))
    window = clip.frames[max(0, keyframe - clip_length + 1) : keyframe + 1]

    # keyframe channels: the object whose center falls in the cell owns it
    # (largest area on a collision)
    owner = {}
    for gt in clip.frames[keyframe]:
        center = corner_to_center(gt.box)
        gx, gy = grid_cell(center[0], center[1], stride, s)
        cell = (int(gy), int(gx))
        area = center[2] * center[3]
        if cell not in owner or area > owner[cell][0]:
            owner[cell] = (area, gt, center, int(gx), int(gy))
    for (gy, gx), (_, gt, center, cgx, cgy) in owner.items():
        off_x = np.clip(center[0] / stride - cgx, _GEOM_EPS, 1.0 - _GEOM_EPS)
        off_y = np.clip(center[1] / stride - cgy, _GEOM_EPS, 1.0 - _GEOM_EPS)
        feats[gy, gx, 0] = 1.0
        feats[gy, gx, 1] = np.log(off_x / (1.0 - off_x))
        feats[gy, gx, 2] = np.log(off_y / (1.0 - off_y))
        feats[gy, gx, 3] = np.log(max(center[2], _GEOM_EPS))
        feats[gy, gx, 4] = np.log(max(center[3], _GEOM_EPS))
        for cid in gt.class_ids():
            feats[gy, gx, 5 + cid] = 1.0

    # temporal channels: coverage per class, mean offsets of center cells
    coverage = np.zeros((s, s, c))
    off_sum = np.zeros((s, s, 2))
    off_count = np.zeros((s, s))
    edges = np.arange(s + 1) * float(stride)
    for frame in window:
        for gt in frame:
            x1, y1, x2, y2 = gt.box
            ox = np.clip(np.minimum(x2, edges[1:]) - np.maximum(x1, edges[:-1]), 0.0, None)
            oy = np.clip(np.minimum(y2, edges[1:]) - np.maximum(y1, edges[:-1]), 0.0, None)
            frac = np.outer(oy, ox) / float(stride) ** 2
            for cid in gt.class_ids():
                coverage[:, :, cid] += frac
            center = corner_to_center(gt.box)
            gx, gy = grid_cell(center[0], center[1], stride, s)
            off_sum[gy, gx, 0] += center[0] / stride - int(gx) - 0.5
            off_sum[gy, gx, 1] += center[1] / stride - int(gy) - 0.5
            off_count[gy, gx] += 1.0
    coverage = np.clip(coverage / len(window), 0.0, 1.0)
    feats[:, :, 5 + c : 5 + 2 * c] = coverage
    with np.errstate(invalid="ignore"):
        mean_off = np.where(off_count[..., None] > 0, off_sum / np.maximum(off_count, 1.0)[..., None], 0.0)
    feats[:, :, 5 + 2 * c : 7 + 2 * c] = mean_off

    denom = max(s - 1, 1)
    gx_grid, gy_grid = np.meshgrid(np.arange(s), np.arange(s))
    feats[:, :, 7 + 2 * c] = gx_grid / denom
    feats[:, :, 8 + 2 * c] = gy_grid / denom
    return feats


@dataclass
class ToyHead:
    """Affine per-cell head: ``output = features @ weight + bias``."""

    weight: np.ndarray
    bias: np.ndarray

    @property
    def n_params(self):
        return self.weight.size + self.bias.size


def init_head(n_features, num_anchors, num_classes, rng, scale=0.01):
    """Small-Gaussian head initialization, deterministic given ``rng``."""
    d = head_output_dim(num_anchors, num_classes)
    return ToyHead(
        weight=rng.normal(0.0, scale, size=(n_features, d)),
        bias=np.zeros(d),
    )


def forward(head, features, num_anchors, num_classes):
    """Apply the head to (S, S, F) features, giving (S, S, B, 5 + C).

    Exactly linear in the head parameters.
    """
    features = as_float_array(features, "features")
    if features.ndim != 3 or features.shape[2] != head.weight.shape[0]:
        raise ValueError(
            f"features shape {features.shape} does not match head input dim {head.weight.shape[0]}"
        )
    d = head_output_dim(num_anchors, num_classes)
    if head.weight.shape[1] != d:
        raise ValueError(
            f"head output dim {head.weight.shape[1]} does not match grid layout {d}"
        )
    out = features @ head.weight + head.bias
    return out.reshape(features.shape[0], features.shape[1], num_anchors, 5 + num_classes)


def head_param_grad(features, grid_grad):
    """Backpropagate a grid gradient into (d_weight, d_bias).

    ``grid_grad`` has shape (S, S, B, 5 + C); because the head is affine
    the weight gradient is the feature / output-gradient outer product.
    """
    features = as_float_array(features, "features")
    flat = grid_grad.reshape(grid_grad.shape[0], grid_grad.shape[1], -1)
    d_weight = np.einsum("ijf,ijd->fd", features, flat)
    d_bias = flat.sum(axis=(0, 1))
    return d_weight, d_bias
