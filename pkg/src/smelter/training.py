"""Mini-batch training loop and model construction from a RunConfig."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import net as netmod
from .config import RunConfig
from .data import augment, eval_tensor, sample_rng
from .optim import OptimState, plateau_update, step_network
from .tensor import Tape, softmax_cross_entropy, softmax_cross_entropy_backward

log = logging.getLogger(__name__)

EVAL_BATCH = 128


class NumericError(RuntimeError):
    def __init__(self, message, iteration=None, fold=None):
        super().__init__(message)
        self.iteration = iteration
        self.fold = fold


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (iteration, loss, val accuracy or None, lr)

    def add(self, iteration, loss, val_acc, lr):
        self.rows.append((iteration, loss, val_acc, lr))

    def to_text(self):
        lines = ["iteration,loss,val_accuracy,lr"]
        for it, loss, acc, lr in self.rows:
            lines.append(f"{it},{loss:.6f},{'' if acc is None else f'{acc:.6f}'},{lr:g}")
        return "\n".join(lines) + "\n"


def build_model(cfg: RunConfig, rng=None):
    """Fresh network, or the ``cfg.init`` checkpoint with freezing and a re-drawn head."""
    if cfg.init:
        model = netmod.load_checkpoint(cfg.init)
        head = model.head_name() if cfg.head == "auto" else cfg.head
        if model.layer(head).out_dim != cfg.classes:
            model = netmod.replace_head(model, cfg.classes)
        for name in model.trainable:
            model.trainable[name] = True
        if cfg.freeze:
            netmod.set_trainable(model, cfg.freeze, False)
        netmod.reinit_head(model, head, cfg.head_std, rng)
        if cfg.input_scale != 1.0:
            model.input_scale = cfg.input_scale
        return model
    if cfg.topology == "vgg16":
        model = netmod.build_vgg16(cfg.classes, rng=rng)
    else:
        model = netmod.build_minicnn(cfg.channel_list(), cfg.fc_width, cfg.classes, cfg.crop, rng=rng)
    if cfg.freeze:
        netmod.set_trainable(model, cfg.freeze, False)
    model.input_scale = cfg.input_scale
    return model


def resolve_means(cfg: RunConfig, images, model=None):
    from .data import channel_means

    if cfg.channel_mean != "auto":
        return np.array([float(v) for v in cfg.channel_mean.split(",")], dtype=np.float32)
    if cfg.init and model is not None and np.any(model.channel_mean):
        return model.channel_mean.astype(np.float32)
    return channel_means(images)


def predict(model, images, means, crop, batch=EVAL_BATCH):
    """Class probabilities for center-cropped ``images``."""
    out = []
    for start in range(0, len(images), batch):
        x = np.stack([eval_tensor(img, means, crop, model.input_scale) for img in images[start:start + batch]])
        out.append(model.forward(x))
    if not out:
        return np.zeros((0, model.layers[-2].out_dim))
    return np.concatenate(out)


def accuracy_of(model, images, labels, means, crop):
    from .evaluate import accuracy

    return accuracy(predict(model, images, means, crop), labels)


def fit(model, images, labels, cfg: RunConfig, val_images=None, val_labels=None,
        index_ids=None, fold=None, train_log: TrainLog | None = None):
    """Train ``model`` in place with SGD + momentum and the plateau schedule.

    ``images`` are aligned frame-size uint8 arrays; ``index_ids`` are their global
    sample indices, used to key the per-sample augmentation streams.
    """
    labels = np.asarray(labels)
    n = len(images)
    ids = np.arange(n) if index_ids is None else np.asarray(index_ids)
    means = model.channel_mean
    state = OptimState(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                       patience=cfg.patience)
    train_log = train_log if train_log is not None else TrainLog()
    has_val = val_images is not None and len(val_images) > 0

    iteration = 0
    epoch = 0
    while iteration < cfg.iterations and not state.stopped:
        order = np.random.default_rng([cfg.seed, epoch, 7]).permutation(n)
        for start in range(0, n, cfg.batch):
            batch_idx = order[start:start + cfg.batch]
            x = np.stack([
                augment(images[i], sample_rng(cfg.seed, ids[i], epoch), means, cfg.crop,
                        scale=model.input_scale)
                for i in batch_idx
            ])
            y = labels[batch_idx]
            iteration += 1
            where = f"fold {fold}, " if fold is not None else ""
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    tape = Tape()
                    loss, probs = softmax_cross_entropy(model.logits(x, tape), y)
                    if not np.isfinite(loss):
                        raise FloatingPointError("loss")
                    model.backward(tape, softmax_cross_entropy_backward(probs, y))
            except FloatingPointError:
                raise NumericError(f"non-finite loss at {where}iteration {iteration}", iteration, fold) from None
            step_network(model, state)
            model.zero_grad()

            val_acc = None
            if has_val and iteration % cfg.val_every == 0:
                val_acc = accuracy_of(model, val_images, val_labels, means, cfg.crop)
                plateau_update(state, val_acc)
            if val_acc is not None or iteration == 1 or iteration == cfg.iterations:
                train_log.add(iteration, loss, val_acc, state.lr)
                log.info("iter %d loss %.4f val %s lr %g", iteration, loss, val_acc, state.lr)
            if iteration >= cfg.iterations or state.stopped:
                break
        epoch += 1
    return train_log
