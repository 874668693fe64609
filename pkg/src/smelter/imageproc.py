"""Face alignment and the image-side preprocessing steps.

Images are ``uint8`` arrays shaped (H, W, C) with C in {1, 3}. Geometry uses
pixel-center coordinates: pixel (x, y) sits at integer position (x, y).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import kernels

FRAME = 256
CROP = 224
CANONICAL_LEFT = (74.0, 90.0)
CANONICAL_RIGHT = (182.0, 90.0)
BT601 = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class Landmarks:
    """Outer eye corners in source-image pixel coordinates."""

    left: tuple
    right: tuple


def as_image(arr):
    """Coerce to a (H, W, C) uint8 array."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected an (H, W, 1|3) image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)
    return arr


def to_uint8(values):
    """Round half up and clamp float pixel values to 0..255."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def canonical_targets(out_size=FRAME):
    s = out_size / FRAME
    return (
        (CANONICAL_LEFT[0] * s, CANONICAL_LEFT[1] * s),
        (CANONICAL_RIGHT[0] * s, CANONICAL_RIGHT[1] * s),
    )


def solve_alignment(lm: Landmarks, out_size=FRAME):
    """Similarity transform (2x3) taking output-frame coordinates to source coordinates.

    It sends the canonical eye targets of the ``out_size`` frame onto the
    source eye corners. Two point pairs fix exactly rotation, uniform scale and
    translation; we solve it as ``z_src = a * z_out + b`` over complex numbers.
    """
    sl = complex(*lm.left)
    sr = complex(*lm.right)
    if abs(sr - sl) < 1e-9:
        raise ValueError(f"eye corners coincide at {lm.left}")
    (dlx, dly), (drx, dry) = canonical_targets(out_size)
    dl = complex(dlx, dly)
    dr = complex(drx, dry)
    a = (sr - sl) / (dr - dl)
    b = sl - a * dl
    return np.array([[a.real, -a.imag, b.real], [a.imag, a.real, b.imag]])


def invert_affine(t):
    lin = t[:, :2]
    det = np.linalg.det(lin)
    if abs(det) <= 1e-9:
        raise ValueError("affine transform is not invertible")
    inv = np.linalg.inv(lin)
    return np.hstack([inv, -inv @ t[:, 2:]])


def apply_affine(t, points):
    pts = np.asarray(points, dtype=np.float64)
    return pts @ t[:, :2].T + t[:, 2]


def warp_affine(img, t, out_size=(FRAME, FRAME)):
    """Bilinear resample: ``out[y, x] = src(t @ (x, y, 1))``, black outside the source."""
    img = as_image(img)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (2, 3) or not np.all(np.isfinite(t)) or abs(np.linalg.det(t[:, :2])) <= 1e-9:
        raise ValueError(f"invalid affine transform {t.tolist()}")
    out_w, out_h = out_size
    vals = kernels.warp_bilinear(np.ascontiguousarray(img, dtype=np.float64), t, out_h, out_w)
    return to_uint8(vals)


def align_face(img, lm: Landmarks, out_size=FRAME):
    """Warp so the eye corners land on the canonical targets of an ``out_size`` square."""
    return warp_affine(img, solve_alignment(lm, out_size), (out_size, out_size))


def crop(img, top, left, size):
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {w}x{h} smaller than crop {size}")
    return img[top:top + size, left:left + size].copy()


def random_crop(img, rng, size=CROP):
    """Crop ``size`` square at offsets drawn uniformly from every valid position."""
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {w}x{h} smaller than crop {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return crop(img, top, left, size)


def center_crop(img, size=CROP):
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {w}x{h} smaller than crop {size}")
    return crop(img, (h - size) // 2, (w - size) // 2, size)


def hflip(img):
    return img[:, ::-1].copy()


def grayscale_replicate(img):
    """BT.601 luma copied into all three channels."""
    img = as_image(img)
    if img.shape[2] != 3:
        raise ValueError(f"grayscale_replicate needs 3 channels, got {img.shape[2]}")
    f = img.astype(np.float64)
    gray = to_uint8(BT601[0] * f[..., 0] + BT601[1] * f[..., 1] + BT601[2] * f[..., 2])
    return np.repeat(gray[..., None], 3, axis=2)


def normalize(img, channel_mean, scale=1.0):
    """Channel-planar float32 tensor ``(pixel - mean[c]) * scale``; ``scale`` defaults to 1."""
    mean = np.asarray(channel_mean, dtype=np.float32)
    if not np.all(np.isfinite(mean)):
        raise ValueError("channel means must be finite")
    out = img.transpose(2, 0, 1).astype(np.float32) - mean[:, None, None]
    if scale != 1.0:
        out *= np.float32(scale)
    return out


# -- file I/O ------------------------------------------------------------------

def read_image(path):
    """Load PNG / PPM / PGM as (H, W, C) uint8; grayscale stays single-channel."""
    with PILImage.open(path) as im:
        if im.mode in ("L", "1", "I", "I;16", "F"):
            return as_image(np.asarray(im.convert("L")))
        return as_image(np.asarray(im.convert("RGB")))


def write_image(path, img):
    """Write PGM (P5) for one channel or PPM (P6) for three, chosen by channel count."""
    img = as_image(img)
    path = Path(path)
    if img.shape[2] == 1:
        PILImage.fromarray(np.ascontiguousarray(img[:, :, 0])).save(path, format="PPM")
    else:
        PILImage.fromarray(np.ascontiguousarray(img)).save(path, format="PPM")
    return path
