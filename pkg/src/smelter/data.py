"""Dataset manifests, stratified folds, augmentation and the synthetic face generator."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import imageproc
from .imageproc import Landmarks

MANIFEST_HEADER = ["path", "label", "lx", "ly", "rx", "ry"]


class ManifestError(ValueError):
    """Raised with every offending line when a manifest fails to load."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ImageSample:
    path: Path
    label: int
    landmarks: Landmarks
    aligned: np.ndarray | None = field(default=None, repr=False)


@dataclass
class FoldPartition:
    folds: list
    seed: int

    @property
    def k(self):
        return len(self.folds)

    def train_indices(self, fold):
        return np.concatenate([f for i, f in enumerate(self.folds) if i != fold])


# -- manifests ---------------------------------------------------------------------

def load_manifest(path, check_files=True):
    """Read ``path,label,lx,ly,rx,ry`` rows; image paths resolve against the manifest's folder."""
    path = Path(path)
    base = path.parent
    problems = []
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        # lines starting with '#' are comments (provenance); line numbers stay physical
        rows = [(n, r) for n, r in enumerate(csv.reader(fh), start=1)
                if not (r and r[0].lstrip().startswith("#"))]
    if not rows or [c.strip() for c in rows[0][1]] != MANIFEST_HEADER:
        where = rows[0][0] if rows else 1
        raise ManifestError([f"{path}:{where}: missing header {','.join(MANIFEST_HEADER)}"])
    for lineno, row in rows[1:]:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(MANIFEST_HEADER):
            problems.append(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            continue
        img_path, label, *coords = (c.strip() for c in row)
        if label not in ("0", "1"):
            problems.append(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            continue
        try:
            lx, ly, rx, ry = (float(c) for c in coords)
        except ValueError:
            problems.append(f"{path}:{lineno}: non-numeric landmark in {coords}")
            continue
        if not all(math.isfinite(v) for v in (lx, ly, rx, ry)):
            problems.append(f"{path}:{lineno}: non-finite landmark in {coords}")
            continue
        full = base / img_path
        if check_files and not full.is_file():
            problems.append(f"{path}:{lineno}: image not readable: {full}")
            continue
        samples.append(ImageSample(full, int(label), Landmarks((lx, ly), (rx, ry))))
    if problems:
        raise ManifestError(problems)
    return samples


def _fmt(v):
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def write_manifest(samples, path, comment=None):
    """Write samples with paths relative to the manifest's folder when possible."""
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for s in samples:
            p = Path(s.path).resolve()
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            lm = s.landmarks
            w.writerow([p.as_posix(), s.label, _fmt(lm.left[0]), _fmt(lm.left[1]),
                        _fmt(lm.right[0]), _fmt(lm.right[1])])
    return path


# -- folds ---------------------------------------------------------------------------

def stratified_folds(samples_or_labels, k=4, seed=0) -> FoldPartition:
    """Shuffle each class by ``seed`` and deal the classes, in label order, round-robin.

    Dealing continues across the class boundary, so fold sizes differ by at
    most one as well as every per-class count.
    """
    labels = np.array([s.label if isinstance(s, ImageSample) else s for s in samples_or_labels])
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    pos = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k:
            raise ValueError(f"class {cls} has {len(idx)} samples, fewer than k={k}")
        idx = rng.permutation(idx)
        for i in idx:
            folds[pos % k].append(int(i))
            pos += 1
    return FoldPartition([np.array(sorted(f), dtype=np.int64) for f in folds], seed)


def stratified_split(indices, labels, fraction, seed):
    """Split ``indices`` into (rest, held-out) with ``fraction`` of each class held out."""
    indices = np.asarray(indices)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    held = []
    for cls in np.unique(labels[indices]):
        idx = rng.permutation(indices[labels[indices] == cls])
        held.extend(idx[:int(round(fraction * len(idx)))].tolist())
    held = np.array(sorted(held), dtype=np.int64)
    rest = np.setdiff1d(indices, held)
    return rest, held


# -- preprocessing and augmentation --------------------------------------------------

def sample_rng(seed, index, epoch=0, stream=0):
    """Independent generator per (seed, sample, epoch): augmentation never depends on visit order."""
    return np.random.default_rng([int(seed), int(index), int(epoch), int(stream)])


def prepare_image(sample: ImageSample, frame=imageproc.FRAME, align=True, grayscale=False):
    """Aligned (or plainly rescaled) ``frame`` x ``frame`` 3-channel image for a sample."""
    if sample.aligned is not None and sample.aligned.shape[0] == frame:
        img = sample.aligned
    else:
        src = imageproc.read_image(sample.path)
        if src.shape[2] == 1:
            src = np.repeat(src, 3, axis=2)
        if align:
            img = imageproc.align_face(src, sample.landmarks, frame)
        else:
            h, w = src.shape[:2]
            t = np.array([[(w - 1) / (frame - 1), 0, 0], [0, (h - 1) / (frame - 1), 0]])
            img = imageproc.warp_affine(src, t, (frame, frame))
    if grayscale:
        img = imageproc.grayscale_replicate(img)
    return img


def channel_means(images):
    """Per-channel pixel mean over a list of (H, W, 3) images, as float32."""
    acc = np.zeros(3, dtype=np.float64)
    count = 0
    for img in images:
        acc += img.reshape(-1, img.shape[2]).sum(axis=0, dtype=np.float64)
        count += img.shape[0] * img.shape[1]
    return (acc / count).astype(np.float32)


def augment(img, rng, means, crop=imageproc.CROP, flip_prob=0.5, scale=1.0):
    """Training path: random crop, horizontal flip with ``flip_prob``, mean subtraction."""
    out = imageproc.random_crop(img, rng, crop)
    if rng.random() < flip_prob:
        out = imageproc.hflip(out)
    return imageproc.normalize(out, means, scale)


def eval_tensor(img, means, crop=imageproc.CROP, scale=1.0):
    """Evaluation path: center crop and mean subtraction, no flip."""
    return imageproc.normalize(imageproc.center_crop(img, crop), means, scale)


# -- synthetic faces -------------------------------------------------------------------

@dataclass(frozen=True)
class SynthParams:
    """Generator knobs; ``variant`` picks the source or the shifted target domain."""

    side: int = 64
    rotation_deg: float = 15.0
    scale_jitter: float = 0.2
    shift_frac: float = 0.1
    noise_sigma: float = 8.0
    stroke: float = 1.6
    texture: float = 0.0
    invert: bool = False
    mouth_jitter: float = 0.08
    curvature: tuple = (0.03, 0.07)


VARIANTS = {
    "source": SynthParams(),
    "target": SynthParams(stroke=2.8, texture=60.0, invert=True),
}


def _render(p: SynthParams, label, rng):
    s = p.side
    (lx, ly), (rx, ry) = imageproc.canonical_targets(s)
    c = s / 2.0
    # canonical -> image similarity about the frame center
    ang = np.deg2rad(rng.uniform(-p.rotation_deg, p.rotation_deg))
    scl = 1.0 + rng.uniform(-p.scale_jitter, p.scale_jitter)
    tx, ty = rng.uniform(-p.shift_frac, p.shift_frac, size=2) * s
    a = scl * complex(math.cos(ang), math.sin(ang))
    b = complex(c + tx, c + ty) - a * complex(c, c)

    ys, xs = np.mgrid[0:s, 0:s].astype(np.float64)
    z = (xs + 1j * ys - b) / a  # image -> canonical
    u, v = z.real, z.imag
    px = 1.0 / scl  # one image pixel in canonical units

    def soft(dist):
        return np.clip(0.5 - dist / px, 0.0, 1.0)

    bg = rng.uniform(70, 110) + rng.uniform(-15, 15, size=3)
    skin = np.array([205.0, 170.0, 150.0]) + rng.uniform(-25, 25, size=3)
    dark = rng.uniform(25, 60)

    img = np.zeros((s, s, 3)) + bg
    if p.texture:
        fx, fy = rng.uniform(0.15, 0.5, size=2) * rng.choice([-1, 1], size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img += p.texture * np.sin(fx * xs + fy * ys + phase)[..., None]

    face_r = np.hypot((u - c) / (0.36 * s), (v - 0.52 * s) / (0.47 * s))
    face = soft((face_r - 1.0) * 0.36 * s)
    img = img * (1 - face[..., None]) + skin * face[..., None]

    eye_r = s * rng.uniform(0.04, 0.055)
    for ex, ey in ((lx, ly), (rx, ry)):
        m = soft(np.hypot(u - ex, v - ey) - eye_r)
        img = img * (1 - m[..., None]) + dark * m[..., None]

    # mouth: parabola through the corners, bowing down (smile) or up (frown)
    jx, jy = rng.uniform(-p.mouth_jitter, p.mouth_jitter, size=2) * s
    mx = c + jx
    my = s * 0.70 + jy
    hw = s * rng.uniform(0.14, 0.19)
    amp = s * rng.uniform(*p.curvature) * (1 if label == 1 else -1)
    t = np.clip((u - mx) / hw, -1.0, 1.0)
    curve_y = my + amp * (1 - t * t)
    slope = -2 * amp * t / hw
    d = np.abs(v - curve_y) / np.sqrt(1 + slope * slope)
    d = np.hypot(d, np.maximum(np.abs(u - mx) - hw, 0.0))
    thick = p.stroke * rng.uniform(0.85, 1.15) / 2
    m = soft(d - thick)
    img = img * (1 - m[..., None]) + dark * m[..., None]

    if p.invert:
        img = 255.0 - img
    img += rng.normal(0.0, p.noise_sigma, size=img.shape)

    def to_img(q):
        w = a * q + b
        return (w.real, w.imag)

    lm = Landmarks(to_img(complex(lx, ly)), to_img(complex(rx, ry)))
    return imageproc.to_uint8(img), lm


def synth_sample(i, seed, variant="source", params: SynthParams | None = None):
    """Image, landmarks and label of synthetic sample ``i``; labels alternate 0, 1, 0, ..."""
    p = params or VARIANTS[variant]
    label = i % 2
    rng = np.random.default_rng([int(seed), int(i), 0 if variant == "source" else 1])
    img, lm = _render(p, label, rng)
    return img, lm, label


def synth_dataset(n, out_dir, seed=0, variant="source", side=64, comment=None, **overrides):
    """Write ``n`` synthetic faces (n/2 per class) as PPM files plus ``manifest.csv``."""
    if n % 2:
        raise ValueError(f"n must be even, got {n}")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {sorted(VARIANTS)}, got {variant!r}")
    params = replace(VARIANTS[variant], side=side, **overrides)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = []
    for i in range(n):
        img, lm, label = synth_sample(i, seed, variant, params)
        path = imageproc.write_image(out_dir / f"{variant}_{i:05d}.ppm", img)
        samples.append(ImageSample(path, label, lm))
    write_manifest(samples, out_dir / "manifest.csv", comment)
    return samples
