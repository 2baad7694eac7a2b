"""The trainable action detector, presented as a scikit-learn estimator.

``fit`` consumes a list of synthetic clips (the ground truth rides along
inside them), trains the affine head with AdamW under the configured
label-assignment scheme, and records a per-step history. ``predict``
returns per-frame detections for new clips; ``score`` reports frame mAP
against the clips' own ground truth.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .assignment import assign_plus, assign_yowo_baseline, count_positives, with_live_iou_conf
from .config import parse_anchors, parse_milestones
from .exceptions import ConfigError, NumericalDivergenceError
from .losses import LossWeights, total_loss
from .metrics import frame_map
from .model import extract_features, forward, head_param_grad, init_head
from .optim import adamw_step, init_adamw, lr_schedule
from .postprocess import nms as run_nms
from .postprocess import decode_grid

_ASSIGNERS = ("plus", "yowo")
_BOX_LOSSES = ("giou", "smooth_l1")
_CONF_TARGETS = ("one", "live_iou")


def worker_count(n_tasks):
    """Worker cap from STADKIT_THREADS (default 1, never above n_tasks)."""
    raw = os.environ.get("STADKIT_THREADS")
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"STADKIT_THREADS must be an integer, got {raw!r}") from exc
    return max(1, min(value, max(n_tasks, 1)))


def _map_ordered(fn, items):
    """Apply fn over items, fanned out to threads, results in input order."""
    workers = worker_count(len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class ActionDetector(BaseEstimator):
    """Grid detector with anchor-based label assignment and composite loss.

    Parameters mirror the configuration file. ``anchors`` accepts either
    the \"WxH,WxH,...\" string form or an (B, 2) array-like; ``milestones``
    accepts \"8,10\" or a sequence of ints.
    """

    def __init__(self, grid_size=7, stride=32, anchors="28x28,42x42,64x64,72x36,36x72",
                 num_classes=4, clip_length=16, assigner="plus", box_loss="giou",
                 conf_target="one", lambda_act=5.0, lambda_noact=1.0, lambda_cls=1.0,
                 lambda_coord=5.0, focal_gamma=2.0, focal_alpha=0.25, smooth_l1_beta=1.0,
                 lr=0.05, weight_decay=0.0005, beta1=0.9, beta2=0.999, eps=1e-8,
                 batch_size=8, epochs=12, milestones=(8, 10), lr_decay_factor=0.1,
                 head_init_scale=0.01, seed=0, conf_threshold=0.005, nms_iou=0.5):
        self.grid_size = grid_size
        self.stride = stride
        self.anchors = anchors
        self.num_classes = num_classes
        self.clip_length = clip_length
        self.assigner = assigner
        self.box_loss = box_loss
        self.conf_target = conf_target
        self.lambda_act = lambda_act
        self.lambda_noact = lambda_noact
        self.lambda_cls = lambda_cls
        self.lambda_coord = lambda_coord
        self.focal_gamma = focal_gamma
        self.focal_alpha = focal_alpha
        self.smooth_l1_beta = smooth_l1_beta
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.batch_size = batch_size
        self.epochs = epochs
        self.milestones = milestones
        self.lr_decay_factor = lr_decay_factor
        self.head_init_scale = head_init_scale
        self.seed = seed
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou

    # ------------------------------------------------------------------

    def _validate_params(self):
        if self.assigner not in _ASSIGNERS:
            raise ValueError(f"assigner must be one of {_ASSIGNERS}, got {self.assigner!r}")
        if self.box_loss not in _BOX_LOSSES:
            raise ValueError(f"box_loss must be one of {_BOX_LOSSES}, got {self.box_loss!r}")
        if self.conf_target not in _CONF_TARGETS:
            raise ValueError(
                f"conf_target must be one of {_CONF_TARGETS}, got {self.conf_target!r}"
            )
        for name in ("grid_size", "stride", "num_classes", "clip_length", "batch_size", "epochs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")

    def _weights(self):
        return LossWeights(
            lambda_act=self.lambda_act,
            lambda_noact=self.lambda_noact,
            lambda_cls=self.lambda_cls,
            lambda_coord=self.lambda_coord,
            focal_gamma=self.focal_gamma,
            focal_alpha=self.focal_alpha,
        )

    def _features_for(self, clips, samples):
        def one(sample):
            clip_idx, frame = sample
            return extract_features(
                clips[clip_idx], frame, self.grid_size, self.stride,
                self.num_classes, self.clip_length,
            )
        return _map_ordered(one, samples)

    def _assign(self, gts, preds):
        if self.assigner == "plus":
            return assign_plus(
                gts, self.anchors_, self.grid_size, self.stride, self.num_classes
            )
        return assign_yowo_baseline(
            gts, preds, self.anchors_, self.grid_size, self.stride, self.num_classes
        )

    # ------------------------------------------------------------------

    def fit(self, X, y=None):
        """Train the head on a list of SyntheticClip objects.

        ``y`` is ignored; supervision comes from the ground truth stored
        in the clips themselves.
        """
        self._validate_params()
        clips = list(X)
        if not clips:
            raise ValueError("fit needs at least one clip")
        anchors = parse_anchors(self.anchors)
        milestones = parse_milestones(self.milestones)
        weights = self._weights()
        rng = np.random.default_rng(self.seed)

        self.anchors_ = anchors
        self.head_ = init_head(
            9 + 2 * self.num_classes, anchors.shape[0], self.num_classes,
            rng, scale=self.head_init_scale,
        )
        self.optimizer_state_ = init_adamw([self.head_.weight, self.head_.bias])

        samples = [
            (clip_idx, frame)
            for clip_idx, clip in enumerate(clips)
            for frame in range(clip.n_frames)
        ]
        features = self._features_for(clips, samples)
        static_maps = None
        if self.assigner == "plus":
            static_maps = [
                self._assign(clips[ci].frames[f], None) for ci, f in samples
            ]

        self.history_ = []
        step = 0
        n = len(samples)
        for epoch in range(int(self.epochs)):
            lr = lr_schedule(self.lr, epoch, milestones, factor=self.lr_decay_factor)
            order = rng.permutation(n)
            for start in range(0, n, int(self.batch_size)):
                batch = order[start : start + int(self.batch_size)]
                preds = np.stack([
                    forward(self.head_, features[i], anchors.shape[0], self.num_classes)
                    for i in batch
                ])
                if not np.all(np.isfinite(preds)):
                    raise NumericalDivergenceError(
                        f"non-finite predictions at step {step}"
                    )
                maps = []
                for k, i in enumerate(batch):
                    if static_maps is not None:
                        amap = static_maps[i]
                    else:
                        ci, f = samples[i]
                        amap = self._assign(clips[ci].frames[f], preds[k])
                    if self.conf_target == "live_iou":
                        amap = with_live_iou_conf(amap, preds[k], anchors, self.stride)
                    maps.append(amap)

                breakdown = total_loss(
                    preds, maps, anchors, self.stride, weights, box_mode=self.box_loss,
                    smooth_l1_beta=self.smooth_l1_beta,
                )
                if not np.isfinite(breakdown.total):
                    raise NumericalDivergenceError(
                        f"non-finite loss {breakdown.total} at step {step}"
                    )
                d_weight = np.zeros_like(self.head_.weight)
                d_bias = np.zeros_like(self.head_.bias)
                for k, i in enumerate(batch):
                    dw, db = head_param_grad(features[i], breakdown.gradients[k])
                    d_weight += dw
                    d_bias += db
                if not (np.all(np.isfinite(d_weight)) and np.all(np.isfinite(d_bias))):
                    raise NumericalDivergenceError(f"non-finite gradient at step {step}")
                adamw_step(
                    [self.head_.weight, self.head_.bias], [d_weight, d_bias],
                    self.optimizer_state_, lr=lr, weight_decay=self.weight_decay,
                    beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                )

                n_pos = sum(count_positives(m) for m in maps)
                n_gt = sum(m.n_gt for m in maps)
                entry = {"step": step, "epoch": epoch, "lr": lr}
                entry.update(breakdown.as_dict())
                entry.update({
                    "n_positive": int(n_pos),
                    "n_gt": int(n_gt),
                    "positives_per_gt": float(n_pos / n_gt) if n_gt else 0.0,
                    "n_dropped": int(sum(m.n_dropped for m in maps)),
                })
                self.history_.append(entry)
                step += 1
        self.n_steps_ = step
        return self

    # ------------------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "head_"):
            raise NotFittedError(
                "this ActionDetector is not fitted yet; call fit before predict"
            )

    def predict(self, X):
        """Per-frame detections (decode + per-class NMS) for a list of clips."""
        self._check_fitted()
        clips = list(X)
        samples = [
            (clip_idx, frame)
            for clip_idx, clip in enumerate(clips)
            for frame in range(clip.n_frames)
        ]
        features = self._features_for(clips, samples)
        detections = []
        for (clip_idx, frame), feats in zip(samples, features):
            grid = forward(self.head_, feats, self.anchors_.shape[0], self.num_classes)
            dets = decode_grid(
                grid, self.anchors_, self.stride, self.num_classes,
                conf_threshold=self.conf_threshold,
                image_size=self.grid_size * self.stride,
                frame_index=frame, video_id=clips[clip_idx].video_id,
            )
            detections.extend(run_nms(dets, self.nms_iou))
        return detections

    def predict_grid(self, clip, frame):
        """Raw prediction grid for one frame of one clip."""
        self._check_fitted()
        feats = extract_features(
            clip, frame, self.grid_size, self.stride, self.num_classes, self.clip_length
        )
        return forward(self.head_, feats, self.anchors_.shape[0], self.num_classes)

    def score(self, X, y=None):
        """Frame mAP at IoU 0.5 against the clips' own ground truth."""
        detections = self.predict(X)
        gts = []
        for clip in X:
            gts.extend(clip.all_ground_truths())
        return frame_map(detections, gts, range(self.num_classes), 0.5)
