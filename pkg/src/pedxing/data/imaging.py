"""Cropping, resizing and keypoint normalisation."""

from __future__ import annotations

import math
import warnings

import numpy as np

from ..heads import NUM_KEYPOINTS


class CropWarning(UserWarning):
    """A crop collapsed to zero area and its sample was skipped."""


def _axis_weights(n_in, n_out):
    # corner-aligned sampling positions: first and last pixels map exactly
    if n_out == 1 or n_in == 1:
        pos = np.full(n_out, (n_in - 1) / 2.0)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(pos).astype(np.int64), 0, max(n_in - 2, 0))
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def bilinear_resize(image, out_h, out_w):
    """Resize an [H,W] or [H,W,C] array with corner-aligned bilinear sampling."""
    img = np.asarray(image, dtype=np.float64)
    y0, y1, wy = _axis_weights(img.shape[0], out_h)
    x0, x1, wx = _axis_weights(img.shape[1], out_w)
    if img.ndim == 3:
        wy, wx = wy[:, None, None], wx[None, :, None]
    else:
        wy, wx = wy[:, None], wx[None, :]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def expand_box(bbox, context, image_size):
    """Grow ``bbox`` by ``context`` × its size on every side, clamp to the image."""
    W, H = image_size
    x1, y1, x2, y2 = bbox
    dx, dy = (x2 - x1) * context, (y2 - y1) * context
    return (max(x1 - dx, 0.0), max(y1 - dy, 0.0), min(x2 + dx, float(W)), min(y2 + dy, float(H)))


def crop_and_resize(image, bbox, out_size=(64, 64), context=0.1):
    """Crop around ``bbox`` (with context), resize, return float32 [3,h,w] in [0,1].

    Returns ``None`` (and warns) when the clamped box has zero area.
    """
    img = np.asarray(image)
    H, W = img.shape[:2]
    x1, y1, x2, y2 = expand_box(bbox, context, (W, H))
    ix1, iy1 = int(math.floor(x1)), int(math.floor(y1))
    ix2, iy2 = int(math.ceil(x2)), int(math.ceil(y2))
    if ix2 <= ix1 or iy2 <= iy1 or x2 <= x1 or y2 <= y1:
        warnings.warn(f"crop of bbox {tuple(bbox)} is empty after clamping; skipped",
                      CropWarning, stacklevel=2)
        return None
    crop = img[iy1:iy2, ix1:ix2]
    if crop.ndim == 2:
        crop = np.repeat(crop[:, :, None], 3, axis=2)
    out = bilinear_resize(crop, *out_size)
    if np.issubdtype(img.dtype, np.integer):
        out = out / 255.0
    return np.clip(out, 0.0, 1.0).transpose(2, 0, 1).astype(np.float32)


def normalize_keypoints(keypoints, image_size):
    """18 × (x, y, visible) pixels -> interleaved [36] ratios and a [36] mask.

    Invisible points get target 0 and mask 0.
    """
    W, H = image_size
    kp = np.asarray(keypoints, dtype=np.float64).reshape(NUM_KEYPOINTS, 3)
    visible = kp[:, 2] > 0
    ratios = np.stack([kp[:, 0] / W, kp[:, 1] / H], axis=1)
    ratios = np.clip(ratios, 0.0, 1.0)
    ratios[~visible] = 0.0
    mask = np.repeat(visible.astype(np.float64), 2)
    return ratios.reshape(-1), mask
