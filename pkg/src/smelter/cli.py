"""Command-line entry point: ``smelter <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numeric failure (non-finite loss). Every failure prints one line
starting with ``error:`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data, distort, evaluate, imageproc
from . import net as netmod
from .config import ConfigError, RunConfig, load_config
from .training import NumericError, TrainLog, accuracy_of, build_model, fit, resolve_means

log = logging.getLogger("smelter")

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers ---------------------------------------------------------------------------

def _threads(args):
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("SMELTER_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"SMELTER_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError("SMELTER_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _config(args, **extra) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    keys = ("seed", "iterations", "lr", "batch", "manifest", "val_manifest", "test_manifest", "out")
    overrides = {k: getattr(args, k, None) for k in keys}
    if args.command in ("eval", "cv", "sweep"):
        overrides["out"] = None  # a report file, not part of the run configuration
    overrides.update(extra)
    for key in ("manifest", "val_manifest", "test_manifest", "out", "init"):
        if overrides.get(key):
            overrides[key] = str(Path(overrides[key]).resolve())
    return cfg.updated(**overrides)


def _provenance(cfg: RunConfig):
    return f"config_digest={cfg.digest()},seed={cfg.seed}"


def _require(value, flag):
    if not value:
        raise UsageError(f"{flag} is required (flag or config file)")
    return value


def _model_frame(cfg: RunConfig, model):
    """Crop follows the network input; the frame comes from the config when it fits."""
    crop = model.input_shape[1]
    frame = cfg.frame if cfg.frame >= crop else int(round(crop * imageproc.FRAME / imageproc.CROP))
    return frame, crop


def _write_json(obj, out):
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# -- commands --------------------------------------------------------------------------

def cmd_align(args):
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = data.load_manifest(args.manifest)
    left, right = imageproc.canonical_targets(args.size)
    written = []
    for i, s in enumerate(samples):
        img = data.prepare_image(s, args.size, align=True)
        path = imageproc.write_image(out / f"{i:05d}_{Path(s.path).stem}.ppm", img)
        written.append(data.ImageSample(path, s.label, imageproc.Landmarks(left, right)))
    data.write_manifest(written, out / "manifest.csv", _provenance(cfg))
    print(f"aligned {len(written)} images -> {out / 'manifest.csv'}")


def cmd_synth(args):
    cfg = _config(args)
    samples = data.synth_dataset(args.n, args.out, seed=cfg.seed, variant=args.variant,
                                 side=args.side, comment=_provenance(cfg))
    print(f"wrote {len(samples)} {args.variant} samples -> {Path(args.out) / 'manifest.csv'}")


def _train(cfg: RunConfig):
    out = Path(_require(cfg.out, "--out"))
    _require(cfg.manifest, "--manifest")
    _, images, labels = evaluate.load_images(cfg)
    if cfg.val_manifest:
        _, val_images, val_labels = evaluate.load_images(cfg, cfg.val_manifest)
        rest = np.arange(len(images))
    else:
        rest, val = data.stratified_split(np.arange(len(images)), labels, cfg.val_fraction, cfg.seed)
        val_images, val_labels = [images[i] for i in val], labels[val]
    model = build_model(cfg, rng=[cfg.seed, 1])
    model.channel_mean = resolve_means(cfg, [images[i] for i in rest], model)
    train_log = TrainLog()
    fit(model, [images[i] for i in rest], labels[rest], cfg, val_images, val_labels,
        index_ids=rest, train_log=train_log)

    out.mkdir(parents=True, exist_ok=True)
    netmod.save_checkpoint(model, out / "model.ckpt", run=(cfg.digest(), cfg.seed))
    (out / "train_log.csv").write_text(f"# {_provenance(cfg)}\n" + train_log.to_text(), encoding="utf-8")
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    summary = {
        "checkpoint": str(out / "model.ckpt"),
        "iterations": train_log.rows[-1][0] if train_log.rows else 0,
        "val_accuracy": next((r[2] for r in reversed(train_log.rows) if r[2] is not None), None),
        "trainable_parameters": netmod.count_parameters(model, trainable_only=True),
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
    }
    if cfg.test_manifest:
        _, test_images, test_labels = evaluate.load_images(cfg, cfg.test_manifest)
        summary["test_accuracy"] = accuracy_of(model, test_images, test_labels, model.channel_mean, cfg.crop)
    _write_json(summary, out / "summary.json")


def cmd_train(args):
    _train(_config(args))


def cmd_finetune(args):
    cfg = _config(args, init=args.init, freeze=args.freeze)
    _require(cfg.init, "--init")
    _train(cfg)


def _load_eval_model(args):
    cfg = _config(args)
    model = netmod.load_checkpoint(args.ckpt)
    frame, crop = _model_frame(cfg, model)
    cfg = cfg.updated(frame=frame, crop=crop)
    _, images, labels = evaluate.load_images(cfg, args.manifest)
    return cfg, model, images, labels


def cmd_eval(args):
    cfg, model, images, labels = _load_eval_model(args)
    acc = accuracy_of(model, images, labels, model.channel_mean, cfg.crop)
    _write_json({
        "accuracy": acc,
        "n": len(labels),
        "checkpoint_run": list(model.run_info) if model.run_info else None,
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
    }, args.out)


def cmd_cv(args):
    cfg = _config(args)
    _require(cfg.manifest, "--manifest")
    report = evaluate.run_cv(cfg, threads=_threads(args))
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_sweep(args):
    cfg, model, images, labels = _load_eval_model(args)
    spec = distort.DistortionSpec(args.kind, tuple(float(s) for s in args.sigmas.split(",")))
    rows = evaluate.distortion_sweep(model, images, labels, spec, crop=cfg.crop, seed=cfg.seed)
    text = evaluate.sweep_csv(rows, cfg.frame, cfg.crop, cfg.digest(), cfg.seed)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_features(args):
    cfg = _config(args)
    model = netmod.load_checkpoint(args.ckpt)
    side = model.input_shape[1]
    img = imageproc.read_image(args.image)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    if img.shape[0] < side or img.shape[1] < side:
        raise UsageError(f"image {img.shape[1]}x{img.shape[0]} is smaller than the {side}x{side} network input")
    x = imageproc.normalize(imageproc.center_crop(img, side), model.channel_mean, model.input_scale)
    layers = [s.strip() for s in args.layers.split(",") if s.strip()]
    try:
        files = evaluate.export_feature_maps(model, x, layers, args.out, _provenance(cfg))
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    print(f"wrote {len(files)} files -> {args.out}")


def cmd_params(args):
    if args.topology == "vgg16":
        model = netmod.build_vgg16(args.classes, allocate=False)
    else:
        model = netmod.build_minicnn(num_classes=args.classes, allocate=False)
    if args.freeze:
        netmod.set_trainable(model, args.freeze, False)
    shapes = model.param_shapes()
    print(f"{'tensor':<16}{'shape':>22}{'count':>14}  trainable")
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        print(f"{name:<16}{str(tuple(shape)):>22}{n:>14,}  {'yes' if model.trainable[name] else 'no'}")
    print(f"total {netmod.count_parameters(model):,}")
    print(f"trainable {netmod.count_parameters(model, trainable_only=True):,}")


# -- parser ------------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="smelter", description="CNN transfer-learning toolkit for smile detection.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(sp, manifest=True):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int)
        if manifest:
            sp.add_argument("--manifest")
        sp.add_argument("--out")

    sp = sub.add_parser("align", help="write aligned frames and an updated manifest")
    run_flags(sp)
    sp.add_argument("--size", type=int, default=imageproc.FRAME)
    sp.set_defaults(func=cmd_align, need=("manifest", "out"))

    sp = sub.add_parser("synth", help="generate a synthetic face dataset")
    run_flags(sp, manifest=False)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--variant", choices=sorted(data.VARIANTS), default="source")
    sp.add_argument("--side", type=int, default=64)
    sp.set_defaults(func=cmd_synth, need=("out",))

    for name, func in (("train", cmd_train), ("finetune", cmd_finetune)):
        sp = sub.add_parser(name, help="from-scratch training" if name == "train" else "transfer-learning run")
        run_flags(sp)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch", type=int)
        sp.add_argument("--val-manifest", help="validation set (default: a stratified split of the training set)")
        sp.add_argument("--test-manifest", help="held-out set scored once after training")
        if name == "finetune":
            sp.add_argument("--init", required=True, help="source checkpoint")
            sp.add_argument("--freeze", required=True, help='layer-name glob, e.g. "conv*"')
        sp.set_defaults(func=func, need=())

    sp = sub.add_parser("eval", help="accuracy of a checkpoint on a manifest")
    run_flags(sp)
    sp.add_argument("--ckpt", required=True)
    sp.set_defaults(func=cmd_eval, need=("manifest",))

    sp = sub.add_parser("cv", help="stratified k-fold cross-validation")
    run_flags(sp)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--threads", type=int, help="fold workers (default: SMELTER_THREADS or all cores)")
    sp.set_defaults(func=cmd_cv, need=())

    sp = sub.add_parser("sweep", help="accuracy under increasing noise or blur")
    run_flags(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--kind", required=True, choices=distort.KINDS)
    sp.add_argument("--sigmas", default=",".join(str(s) for s in range(1, 11)))
    sp.set_defaults(func=cmd_sweep, need=("manifest",))

    sp = sub.add_parser("features", help="export feature maps of selected layers")
    run_flags(sp, manifest=False)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--layers", required=True)
    sp.set_defaults(func=cmd_features, need=("out",))

    sp = sub.add_parser("params", help="parameter-count table")
    sp.add_argument("--topology", choices=("vgg16", "mini"), required=True)
    sp.add_argument("--classes", type=int, required=True)
    sp.add_argument("--freeze", help='layer-name glob marked frozen, e.g. "conv*"')
    sp.set_defaults(func=cmd_params, need=())
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        for key in args.need:
            if not getattr(args, key, None):
                raise UsageError(f"{args.command}: --{key} is required")
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args)
        return 0
    except (UsageError, ConfigError) as exc:
        code, msg = EXIT_USAGE, str(exc)
    except (data.ManifestError, netmod.CheckpointError, OSError) as exc:
        code, msg = EXIT_IO, str(exc)
    except NumericError as exc:
        code, msg = EXIT_NUMERIC, str(exc)
    except ValueError as exc:
        code, msg = EXIT_USAGE, str(exc)
    print("error: " + " ".join(msg.split()), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
