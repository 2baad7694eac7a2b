"""stadkit: spatio-temporal action detection at toy scale.

A grid detector with anchor-based label assignment, a composite detection
loss (confidence MSE, sigmoid focal classification, GIoU box regression)
with analytic gradients, frame- and video-level mAP evaluation, and a
synthetic moving-box dataset generator, all in plain NumPy.
"""

from .assignment import (
    AssignmentMap,
    GroundTruth,
    assign_plus,
    assign_yowo_baseline,
    count_positives,
    with_live_iou_conf,
)
from .bench import bench_fps, work_units_per_frame
from .boxes import (
    center_to_corner,
    corner_to_center,
    decode_box,
    encode_box,
    giou,
    grid_cell,
    iou,
    iou_matrix,
    shape_iou,
    sigmoid,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DEFAULTS, load_config, parse_anchors, parse_milestones
from .datasets import (
    DatasetManifest,
    SyntheticClip,
    generate_dataset,
    load_annotations,
    load_dataset,
    save_annotations,
)
from .detector import ActionDetector
from .exceptions import AnnotationParseError, ConfigError, NumericalDivergenceError
from .losses import (
    LossBreakdown,
    LossWeights,
    confidence_loss,
    focal_cls_loss,
    giou_loss,
    smooth_l1_box_loss,
    total_loss,
)
from .metrics import (
    ActionTube,
    PRCurve,
    build_pred_tubes,
    frame_ap,
    frame_map,
    gt_tubes,
    link_tubes,
    tube_iou,
    video_ap,
    video_map,
)
from .model import ToyHead, extract_features, feature_dim, forward, head_param_grad, init_head
from .optim import AdamWState, adamw_step, init_adamw, lr_schedule
from .postprocess import Detection, decode_grid, nms

__version__ = "0.1.0"

__all__ = [
    "ActionDetector",
    "ActionTube",
    "AdamWState",
    "AnnotationParseError",
    "AssignmentMap",
    "ConfigError",
    "DatasetManifest",
    "DEFAULTS",
    "Detection",
    "GroundTruth",
    "LossBreakdown",
    "LossWeights",
    "NumericalDivergenceError",
    "PRCurve",
    "SyntheticClip",
    "ToyHead",
    "adamw_step",
    "assign_plus",
    "assign_yowo_baseline",
    "bench_fps",
    "build_pred_tubes",
    "center_to_corner",
    "confidence_loss",
    "corner_to_center",
    "count_positives",
    "decode_box",
    "decode_grid",
    "encode_box",
    "extract_features",
    "feature_dim",
    "focal_cls_loss",
    "forward",
    "frame_ap",
    "frame_map",
    "generate_dataset",
    "giou",
    "giou_loss",
    "grid_cell",
    "gt_tubes",
    "head_param_grad",
    "init_adamw",
    "init_head",
    "iou",
    "iou_matrix",
    "link_tubes",
    "load_annotations",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "lr_schedule",
    "nms",
    "parse_anchors",
    "parse_milestones",
    "save_annotations",
    "save_checkpoint",
    "shape_iou",
    "sigmoid",
    "smooth_l1_box_loss",
    "tube_iou",
    "total_loss",
    "video_ap",
    "video_map",
    "with_live_iou_conf",
    "work_units_per_frame",
]
