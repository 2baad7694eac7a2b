"""Input validation helpers shared across the package.

All checks raise ``ValueError`` with the offending argument named, and
return the validated value as a float64 numpy array so callers can rely
on dtype and layout.
"""

from __future__ import annotations

import numpy as np


def as_float_array(x, name="array"):
    """Convert to a float64 array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_boxes(boxes, name="boxes"):
    """Validate corner-form boxes ``[x_min, y_min, x_max, y_max]``.

    Accepts any leading shape; the last axis must have length 4 and every
    box must satisfy ``x_min <= x_max`` and ``y_min <= y_max``.
    """
    arr = as_float_array(boxes, name)
    if arr.shape[-1] != 4:
        raise ValueError(f"{name} must have 4 values per box, got shape {arr.shape}")
    if np.any(arr[..., 2] < arr[..., 0]) or np.any(arr[..., 3] < arr[..., 1]):
        raise ValueError(f"{name} must satisfy x_min <= x_max and y_min <= y_max")
    return arr


def check_center_boxes(boxes, name="boxes"):
    """Validate center-form boxes ``[c_x, c_y, w, h]`` (w, h >= 0)."""
    arr = as_float_array(boxes, name)
    if arr.shape[-1] != 4:
        raise ValueError(f"{name} must have 4 values per box, got shape {arr.shape}")
    if np.any(arr[..., 2] < 0) or np.any(arr[..., 3] < 0):
        raise ValueError(f"{name} must have non-negative width and height")
    return arr


def check_anchors(anchors, name="anchors"):
    """Validate an anchor set: shape (B, 2) with strictly positive sides."""
    arr = as_float_array(anchors, name)
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise ValueError(f"{name} must have shape (B, 2) with B >= 1, got {arr.shape}")
    if np.any(arr <= 0):
        raise ValueError(f"{name} sides must be strictly positive")
    return arr


def check_prediction_grid(grid, grid_size, num_anchors, num_classes, name="predictions"):
    """Validate a raw prediction grid of shape (S, S, B, 5 + C)."""
    arr = as_float_array(grid, name)
    expected = (grid_size, grid_size, num_anchors, 5 + num_classes)
    if arr.shape != expected:
        raise ValueError(f"{name} must have shape {expected}, got {arr.shape}")
    return arr


def check_positive_int(value, name):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value <= 0:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_fraction(value, name, low=0.0, high=1.0, inclusive_low=True, inclusive_high=True):
    v = float(value)
    ok_low = v >= low if inclusive_low else v > low
    ok_high = v <= high if inclusive_high else v < high
    if not (np.isfinite(v) and ok_low and ok_high):
        raise ValueError(f"{name} must lie in the range {low}..{high}, got {value!r}")
    return v
