"""Accuracy, k-fold cross-validation, distortion sweeps and feature export."""
from __future__ import annotations

import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import distort, imageproc
from .config import RunConfig
from .data import load_manifest, prepare_image, sample_rng, stratified_folds, stratified_split
from .net import extract_features
from .training import NumericError, TrainLog, build_model, fit, predict, resolve_means


def predictions_from(probs):
    """Argmax over classes; exact ties go to the lower class index."""
    probs = np.asarray(probs)
    return probs.argmax(axis=-1) if probs.ndim > 1 else probs


def accuracy(predictions, labels):
    """Fraction correct. ``predictions`` may be class indices or (N, K) scores."""
    pred = predictions_from(predictions)
    labels = np.asarray(labels)
    if len(pred) != len(labels) or len(labels) == 0:
        raise ValueError(f"need equal, non-zero lengths (got {len(pred)} and {len(labels)})")
    return float(np.mean(pred == labels))


@dataclass
class CvReport:
    folds: list
    mean: float
    std: float
    seed: int
    config_digest: str

    @classmethod
    def from_folds(cls, accs, seed, digest):
        accs = [float(a) for a in accs]
        std = statistics.stdev(accs) if len(accs) > 1 else 0.0
        return cls(accs, statistics.fmean(accs), std, seed, digest)

    def to_json(self):
        return json.dumps(
            {"folds": self.folds, "mean": self.mean, "std": self.std,
             "seed": self.seed, "config_digest": self.config_digest},
            indent=2,
        ) + "\n"


@dataclass
class SweepRow:
    kind: str
    sigma: float
    accuracy: float
    n: int


def load_images(cfg: RunConfig, manifest=None):
    samples = load_manifest(manifest or cfg.manifest)
    images = [prepare_image(s, cfg.frame, cfg.align, cfg.grayscale) for s in samples]
    labels = np.array([s.label for s in samples])
    return samples, images, labels


def train_fold(cfg: RunConfig, images, labels, train_idx, test_idx, fold):
    rest, val = stratified_split(train_idx, labels, cfg.val_fraction, [cfg.seed, fold])
    model = build_model(cfg, rng=[cfg.seed, fold, 1])
    model.channel_mean = resolve_means(cfg, [images[i] for i in rest], model)
    try:
        fit(model, [images[i] for i in rest], labels[rest], cfg,
            [images[i] for i in val], labels[val], index_ids=rest, fold=fold)
    except NumericError as exc:
        raise NumericError(f"fold {fold}: {exc}", exc.iteration, fold) from None
    probs = predict(model, [images[i] for i in test_idx], model.channel_mean, cfg.crop)
    return accuracy(probs, labels[test_idx])


def run_cv(cfg: RunConfig, threads=1, data=None) -> CvReport:
    """Stratified k-fold: train on k-1 folds, test the held-out fold with center crops."""
    if data is None:
        _, images, labels = load_images(cfg)
    else:
        images, labels = data
    part = stratified_folds(labels, cfg.folds, cfg.seed)
    jobs = [(part.train_indices(f), part.folds[f], f) for f in range(part.k)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            accs = list(pool.map(lambda j: train_fold(cfg, images, labels, *j), jobs))
    else:
        accs = [train_fold(cfg, images, labels, *j) for j in jobs]
    return CvReport.from_folds(accs, cfg.seed, cfg.digest())


def distortion_sweep(model, images, labels, spec: distort.DistortionSpec, means=None,
                     crop=imageproc.CROP, seed=0):
    """Accuracy on distorted aligned frames; the clean sigma = 0 row comes first."""
    means = model.channel_mean if means is None else means
    labels = np.asarray(labels)
    rows = []
    for j, sigma in enumerate((0.0,) + tuple(float(s) for s in spec.sigmas)):
        if sigma == 0:
            batch = images
        else:
            batch = [distort.apply(img, spec.kind, sigma, sample_rng(seed, i, j, 1))
                     for i, img in enumerate(images)]
        acc = accuracy(predict(model, batch, means, crop), labels)
        rows.append(SweepRow(spec.kind, sigma, acc, len(labels)))
    return rows


def sweep_csv(rows, frame, crop, digest="", seed=0):
    lines = [f"# distorted-at={frame},crop=center{crop}", f"# config_digest={digest},seed={seed}",
             "kind,sigma,accuracy,n"]
    for r in rows:
        lines.append(f"{r.kind},{r.sigma:g},{r.accuracy!r},{r.n}")
    return "\n".join(lines) + "\n"


def feature_map_to_pgm(fmap):
    """Min-max scale to 0..255; a flat map becomes mid-gray."""
    lo = float(fmap.min())
    hi = float(fmap.max())
    if hi == lo:
        return np.full(fmap.shape, 128, dtype=np.uint8)
    return imageproc.to_uint8((fmap - lo) * (255.0 / (hi - lo)))


def export_feature_maps(model, x, layers, out_dir, comment=None):
    """Write each layer's maps as ``{layer}_{index}.pgm`` (1-D layers as ``{layer}.txt``) plus ``index.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in layers:
        model.layer(name)  # fail before writing anything
    files = []
    index = [f"# {comment}"] if comment else []
    for name in layers:
        act = np.asarray(extract_features(model, x, name), dtype=np.float64)
        index.append(f"{name} {'x'.join(str(d) for d in act.shape)}")
        if act.ndim == 1:
            path = out_dir / f"{name}.txt"
            path.write_text("".join(f"{v!r}\n" for v in act.tolist()), encoding="utf-8")
            files.append(path)
            continue
        for k, fmap in enumerate(act):
            files.append(imageproc.write_image(out_dir / f"{name}_{k}.pgm", feature_map_to_pgm(fmap)))
    idx = out_dir / "index.txt"
    idx.write_text("\n".join(index) + "\n", encoding="utf-8")
    files.append(idx)
    return files


__all__ = [
    "CvReport",
    "SweepRow",
    "TrainLog",
    "accuracy",
    "distortion_sweep",
    "export_feature_maps",
    "run_cv",
    "sweep_csv",
]
