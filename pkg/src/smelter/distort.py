"""Gaussian noise and Gaussian blur for robustness sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .imageproc import as_image, to_uint8

KINDS = ("noise", "blur")


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    sigmas: tuple = field(default=tuple(float(s) for s in range(1, 11)))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"distortion kind must be one of {KINDS}, got {self.kind!r}")
        s = np.asarray(self.sigmas, dtype=float)
        if s.size == 0 or np.any(s <= 0) or np.any(np.diff(s) <= 0):
            raise ValueError(f"sigmas must be positive and strictly increasing: {list(self.sigmas)}")


def add_gaussian_noise(img, sigma, rng):
    """Independent N(0, sigma^2) per channel per pixel on the 0..255 scale, rounded and clamped."""
    img = as_image(img)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img.copy()
    noise = rng.normal(0.0, sigma, size=img.shape)
    return to_uint8(img.astype(np.float64) + noise)


def kernel_window(sigma):
    """Four standard deviations, rounded, then bumped to odd."""
    n = int(math.floor(4.0 * sigma + 0.5))
    return n if n % 2 else n + 1


def gaussian_kernel_1d(sigma):
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    size = kernel_window(sigma)
    r = size // 2
    i = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-(i * i) / (2.0 * sigma * sigma))
    return w / w.sum()


def blur_float(values, sigma):
    """Separable blur of a float (H, W, C) array, edge-replicated; no rounding."""
    k = gaussian_kernel_1d(sigma)
    rows = kernels.convolve_rows(np.ascontiguousarray(values, dtype=np.float64), k)
    cols = kernels.convolve_rows(np.ascontiguousarray(rows.transpose(1, 0, 2)), k)
    return cols.transpose(1, 0, 2)


def gaussian_blur(img, sigma):
    """Horizontal then vertical Gaussian pass per channel; rounded and clamped to 0..255."""
    img = as_image(img)
    return to_uint8(blur_float(img, sigma))


def apply(img, kind, sigma, rng=None):
    if kind == "noise":
        return add_gaussian_noise(img, sigma, rng)
    if kind == "blur":
        return gaussian_blur(img, sigma) if sigma > 0 else as_image(img).copy()
    raise ValueError(f"unknown distortion kind {kind!r}")
