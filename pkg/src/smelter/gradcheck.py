"""Central-difference gradient checking against the tape-based backward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tape, softmax_cross_entropy, softmax_cross_entropy_backward


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: list  # (param name, flat index, analytic, numeric, relative error)
    skipped: int = 0  # draws rejected because the +-eps probe crossed a kink


def loss_of(net, x, labels):
    loss, _ = softmax_cross_entropy(net.logits(x), labels)
    return loss


def _loss_and_pattern(net, x, labels):
    """Loss plus the piecewise-linear region: ReLU on/off masks and max-pool winners."""
    tape = Tape()
    loss, _ = softmax_cross_entropy(net.logits(x, tape), labels)
    pattern = []
    for layer, cache in tape.entries:
        if layer.kind == "relu":
            pattern.append(cache > 0)
        elif layer.kind == "maxpool":
            pattern.append(cache)
    return loss, pattern


def _same_region(a, b):
    return all(np.array_equal(p, q) for p, q in zip(a, b))


def analytic_grads(net, x, labels):
    tape = Tape()
    logits = net.logits(x, tape)
    _, probs = softmax_cross_entropy(logits, labels)
    net.backward(tape, softmax_cross_entropy_backward(probs, labels))
    return {k: p.grad for k, p in net.params.items() if p.grad is not None}


def relative_error(a, b, floor=1e-10):
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(net, x, labels, n_samples=100, eps=1e-3, rng=None, max_draws=None):
    """Compare backward-pass gradients with ``(L(w+eps) - L(w-eps)) / 2eps`` at random scalars.

    Run on a float64 copy of the network (``net.astype(np.float64)``) so rounding
    stays well below the method error being measured.

    A central difference is only meaningful where the loss is smooth over
    ``[w - eps, w + eps]``. When either probe flips a ReLU or changes a max-pool
    winner, the draw is rejected and another scalar is sampled; the number of
    rejections is reported in ``skipped``.
    """
    rng = np.random.default_rng(rng)
    grads = analytic_grads(net, x, labels)
    _, base = _loss_and_pattern(net, x, labels)
    names = sorted(grads)
    sizes = np.array([grads[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    order = rng.permutation(sizes.sum())
    max_draws = max_draws or len(order)
    checked = []
    skipped = 0
    for flat in order[:max_draws]:
        if len(checked) == n_samples:
            break
        j = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[j]
        idx = int(flat - offsets[j])
        w = net.params[name].data.reshape(-1)
        orig = w[idx]
        w[idx] = orig + eps
        up, up_pat = _loss_and_pattern(net, x, labels)
        w[idx] = orig - eps
        down, down_pat = _loss_and_pattern(net, x, labels)
        w[idx] = orig
        if not (_same_region(base, up_pat) and _same_region(base, down_pat)):
            skipped += 1
            continue
        numeric = (up - down) / (2 * eps)
        analytic = float(grads[name].reshape(-1)[idx])
        checked.append((name, idx, analytic, numeric, relative_error(analytic, numeric)))
    if len(checked) < n_samples:
        raise RuntimeError(f"only {len(checked)} of {n_samples} parameters lie away from a kink")
    return GradCheckResult(max(c[4] for c in checked), checked, skipped)
