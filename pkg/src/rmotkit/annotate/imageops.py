"""Visual prompting primitives on HxWx3 uint8 frames."""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np

from ..geometry import MaybeBox


def pixel_rect(box: MaybeBox, width: int, height: int) -> Tuple[int, int, int, int]:
    """Integer pixel rectangle ``(x0, y0, x1, y1)`` covering ``box`` (outward rounding), clipped to the frame."""
    if box is None:
        raise ValueError("box is absent")
    x0 = min(max(math.floor(box.x1), 0), width)
    y0 = min(max(math.floor(box.y1), 0), height)
    x1 = min(max(math.ceil(box.x2), 0), width)
    y1 = min(max(math.ceil(box.y2), 0), height)
    return x0, y0, x1, y1


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian taps over ``[-r, r]`` with ``r = ceil(3 * sigma)``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = math.ceil(3 * sigma)
    x = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="edge")
    n = img.shape[axis]
    out = np.zeros(img.shape, dtype=float)
    for i, w in enumerate(kernel):
        out += w * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(frame: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    out = _convolve_axis(_convolve_axis(frame.astype(float), k, 0), k, 1)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def render_overlay(frame: np.ndarray, box: MaybeBox, color=(255, 0, 0), stroke: int = 3) -> np.ndarray:
    """Copy of ``frame`` with a rectangle outline drawn just inside the box's pixel rectangle."""
    if stroke < 1:
        raise ValueError("stroke must be >= 1")
    h, w = frame.shape[:2]
    x0, y0, x1, y1 = pixel_rect(box, w, h)
    out = frame.copy()
    if x1 <= x0 or y1 <= y0:
        return out
    c = np.asarray(color, dtype=np.uint8)
    out[y0:min(y0 + stroke, y1), x0:x1] = c
    out[max(y1 - stroke, y0):y1, x0:x1] = c
    out[y0:y1, x0:min(x0 + stroke, x1)] = c
    out[y0:y1, max(x1 - stroke, x0):x1] = c
    return out


def blur_outside(frame: np.ndarray, box: MaybeBox, sigma: float = 8.0) -> np.ndarray:
    """Gaussian-blur everything outside the box; the box's pixels are copied through unchanged."""
    h, w = frame.shape[:2]
    x0, y0, x1, y1 = pixel_rect(box, w, h)
    out = gaussian_blur(frame, sigma)
    out[y0:y1, x0:x1] = frame[y0:y1, x0:x1]
    return out


def crop_patch(frame: np.ndarray, box: MaybeBox) -> np.ndarray:
    h, w = frame.shape[:2]
    x0, y0, x1, y1 = pixel_rect(box, w, h)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"box {box} has no area inside the {w}x{h} frame")
    return frame[y0:y1, x0:x1].copy()
