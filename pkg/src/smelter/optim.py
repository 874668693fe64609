"""SGD with momentum and L2 weight decay, and the plateau learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimState:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    patience: int = 2
    initial_lr: float | None = None
    max_reductions: int = 2
    velocity: dict = field(default_factory=dict)
    best_accuracy: float = -np.inf
    evals_since_improvement: int = 0
    reductions: int = 0
    stopped: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.initial_lr is None:
            self.initial_lr = self.lr


def sgd_step(params, grads, state: OptimState):
    """One momentum step over the ``params``/``grads`` dicts, in place.

    ``g = grad + wd * w``; ``v = mu * v - lr * g``; ``w = w + v``. Parameters
    missing from ``grads`` (or with a None gradient) are left untouched.
    """
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name!r}")
        g = g + state.weight_decay * w if state.weight_decay else g
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = state.momentum * v - state.lr * g
        state.velocity[name] = v.astype(w.dtype, copy=False)
        w += state.velocity[name]


def step_network(net, state: OptimState):
    """Apply ``sgd_step`` to the trainable parameters of ``net`` that carry a gradient."""
    params = {}
    grads = {}
    for name, p in net.params.items():
        if net.trainable[name] and p.grad is not None:
            params[name] = p.data
            grads[name] = p.grad
    sgd_step(params, grads, state)


def plateau_update(state: OptimState, val_accuracy: float):
    """Feed one validation accuracy into the schedule; returns ``(lr, stopped)``.

    After ``patience`` evaluations without a strict improvement the rate drops
    tenfold. Once it has dropped ``max_reductions`` times, the next plateau
    stops training instead.
    """
    if not 0.0 <= val_accuracy <= 1.0:
        raise ValueError(f"accuracy must lie in [0, 1], got {val_accuracy}")
    if state.stopped:
        return state.lr, True
    if val_accuracy > state.best_accuracy:
        state.best_accuracy = val_accuracy
        state.evals_since_improvement = 0
        return state.lr, False
    state.evals_since_improvement += 1
    if state.evals_since_improvement >= state.patience:
        state.evals_since_improvement = 0
        if state.reductions >= state.max_reductions:
            state.stopped = True
        else:
            state.reductions += 1
            state.lr = state.initial_lr / 10 ** state.reductions
    return state.lr, state.stopped
