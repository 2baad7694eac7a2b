"""Wall-clock throughput measurement for the inference pipeline."""

from __future__ import annotations

import platform
import time

import numpy as np


def work_units_per_frame(grid_size, num_anchors, num_classes):
    """Head outputs produced per frame; the cost proxy used in tests.

    Wall-clock comparisons are too flaky to assert on, so scaling claims
    are checked against this counter instead.
    """
    return grid_size * grid_size * num_anchors * (5 + num_classes)


def host_fingerprint():
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def bench_fps(pipeline, clips, warmup=1, iters=5):
    """Median/mean frames-per-second of ``pipeline(clips)`` after warmup.

    ``pipeline`` runs the full extract/forward/decode/NMS pass over the
    clip list; ``iters`` timed repetitions follow ``warmup`` untimed ones.
    """
    if iters < 1:
        raise ValueError(f"iters must be at least 1, got {iters}")
    if warmup < 0:
        raise ValueError(f"warmup must be non-negative, got {warmup}")
    clips = list(clips)
    n_frames = sum(clip.n_frames for clip in clips)
    if n_frames == 0:
        raise ValueError("benchmark needs at least one frame")

    for _ in range(warmup):
        pipeline(clips)
    fps_samples = []
    for _ in range(iters):
        t0 = time.perf_counter()
        pipeline(clips)
        elapsed = time.perf_counter() - t0
        fps_samples.append(n_frames / max(elapsed, 1e-12))
    return {
        "median_fps": float(np.median(fps_samples)),
        "mean_fps": float(np.mean(fps_samples)),
        "fps_samples": [float(v) for v in fps_samples],
        "n_frames": int(n_frames),
        "n_clips": len(clips),
        "iters": int(iters),
        "warmup": int(warmup),
        "host": host_fingerprint(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
