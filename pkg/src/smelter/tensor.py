"""Forward and backward math for the layer kinds used by the networks.

Activations are plain ``numpy`` arrays in NCHW layout. Every op also accepts a
single sample (C, H, W) or a single vector and returns the matching
unbatched result. Ops preserve the input dtype, so a float64 network gives a
float64 gradient check while training runs in float32.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels

CHECK_FINITE = os.environ.get("SMELTER_CHECK_FINITE", "0") == "1"


class ShapeError(ValueError):
    pass


@dataclass
class Parameter:
    """One weight or bias tensor and its gradient buffer."""

    data: np.ndarray
    grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size


@dataclass
class ConvParams:
    weight: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray  # (out_ch,)
    stride: int = 1
    padding: int = 1


def _finite(out, op):
    if CHECK_FINITE and not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return out


def _batched(x, rank):
    x = np.asarray(x)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ShapeError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


# -- convolution ---------------------------------------------------------------

def conv_output_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward_cols(x, weight, bias, stride=1, padding=1):
    """Batched convolution that also returns the patch matrix for the backward pass."""
    n, c, h, w = x.shape
    out_ch, in_ch, kh, kw = weight.shape
    if c != in_ch:
        raise ShapeError(
            f"conv input has {c} channels (input shape {x.shape}) but weights "
            f"expect {in_ch} (weight shape {weight.shape})"
        )
    if h < 1 or w < 1:
        raise ShapeError(f"empty conv input {x.shape}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    cols = kernels.im2col(np.ascontiguousarray(x), kh, kw, stride, padding)
    out = cols @ weight.reshape(out_ch, -1).T
    out += bias
    out = out.reshape(n, ho, wo, out_ch).transpose(0, 3, 1, 2)
    return _finite(np.ascontiguousarray(out), "conv2d"), cols


def conv2d_forward(x, params: ConvParams):
    """Cross-correlate ``x`` with ``params.weight`` and add the bias.

    ``out[o, y, x] = bias[o] + sum_i,dy,dx weight[o, i, dy, dx] * padded[i, y*s + dy, x*s + dx]``
    """
    xb, single = _batched(x, 4)
    out, _ = conv2d_forward_cols(xb, params.weight, params.bias, params.stride, params.padding)
    return out[0] if single else out


def conv2d_backward(grad_out, cols, x_shape, weight, stride=1, padding=1, need_input_grad=True):
    """Return ``(grad_input, grad_weight, grad_bias)``; ``grad_input`` is None when not needed."""
    n, c, h, w = x_shape
    out_ch, _, kh, kw = weight.shape
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, out_ch)
    grad_w = (g.T @ cols).reshape(weight.shape)
    grad_b = g.sum(axis=0)
    grad_x = None
    if need_input_grad:
        dcols = g @ weight.reshape(out_ch, -1)
        grad_x = kernels.col2im(dcols, n, c, h, w, kh, kw, stride, padding)
    return grad_x, grad_w, grad_b


# -- pooling ---------------------------------------------------------------------

def maxpool2x2_forward(x):
    """Max over disjoint 2x2 windows. Returns ``(out, argmax)``; argmax indexes the window row-major."""
    xb, single = _batched(x, 4)
    h, w = xb.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"max-pool 2x2 needs even spatial dims, got {h}x{w}")
    out, arg = kernels.maxpool2x2(np.ascontiguousarray(xb))
    if single:
        return out[0], arg[0]
    return out, arg


def maxpool2x2_backward(grad_out, argmax):
    gb, single = _batched(grad_out, 4)
    ab = argmax[None] if single else argmax
    out = kernels.maxpool2x2_backward(np.ascontiguousarray(gb), np.ascontiguousarray(ab))
    return out[0] if single else out


# -- pointwise / dense -------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, out):
    return np.where(out > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def linear_forward(x, weight, bias):
    """``weight @ x + bias``; batched inputs are flattened to (N, features) first."""
    x = np.asarray(x)
    flat = x.reshape(1, -1) if x.ndim == 1 else x.reshape(x.shape[0], -1)
    if flat.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"linear input has {flat.shape[1]} features (input shape {x.shape}) "
            f"but weights have shape {weight.shape}"
        )
    out = flat @ weight.T + bias
    _finite(out, "linear")
    return out[0] if x.ndim == 1 else out


def linear_backward(grad_out, x, weight, need_input_grad=True):
    flat = x.reshape(x.shape[0], -1)
    grad_w = grad_out.T @ flat
    grad_b = grad_out.sum(axis=0)
    grad_x = (grad_out @ weight).reshape(x.shape) if need_input_grad else None
    return grad_x, grad_w, grad_b


# -- loss --------------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Mean negative log-likelihood of ``label`` under ``softmax(logits)``.

    Accepts a single logit vector with an int label, or (N, K) logits with N labels.
    Returns ``(loss, probs)``.
    """
    logits = np.asarray(logits)
    lb, single = _batched(logits, 2)
    labels = np.atleast_1d(np.asarray(label))
    k = lb.shape[1]
    if labels.shape[0] != lb.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for {lb.shape[0]} logit rows")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label out of range [0, {k}): {labels.tolist()}")
    z = lb - lb.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(len(labels)), labels] - logsum
    probs = np.exp(z - logsum[:, None])
    loss = float(-logp.mean())
    return loss, (probs[0] if single else probs)


def softmax_cross_entropy_backward(probs, label):
    """Gradient of the mean loss w.r.t. the logits: ``(probs - onehot) / N``."""
    pb, single = _batched(probs, 2)
    labels = np.atleast_1d(np.asarray(label))
    g = pb.copy()
    g[np.arange(len(labels)), labels] -= 1
    g /= len(labels)
    return g[0] if single else g


@dataclass
class Tape:
    """Per-layer intermediates recorded by a forward pass, consumed by ``backward``."""

    entries: list = field(default_factory=list)
    input_shape: tuple | None = None
    consumed: bool = False

    def record(self, layer, cache):
        self.entries.append((layer, cache))
