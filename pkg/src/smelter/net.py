"""Sequential networks: VGG-16 and the small 4-block CNN, plus persistence.

Layer names follow the VGG convention: ``conv{block}_{index}`` for
convolutions, ``relu…``/``pool{block}`` for the parameter-free layers,
``fc{n}`` for fully-connected layers and ``prob`` for the final softmax.
"""
from __future__ import annotations

import fnmatch
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import (
    Parameter,
    ShapeError,
    Tape,
    conv2d_backward,
    conv2d_forward_cols,
    linear_backward,
    linear_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
    softmax,
)

VGG16_BLOCKS = ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512))
HEAD_STDDEV = 1e-2  # variance 1e-4

CHECKPOINT_MAGIC = b"SMNN"
CHECKPOINT_VERSION = 1
META_PREFIX = "_meta."


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv | relu | maxpool | linear | softmax
    in_dim: int = 0
    out_dim: int = 0

    @property
    def has_params(self):
        return self.kind in ("conv", "linear")

    def param_shapes(self):
        if self.kind == "conv":
            return {"weight": (self.out_dim, self.in_dim, 3, 3), "bias": (self.out_dim,)}
        if self.kind == "linear":
            return {"weight": (self.out_dim, self.in_dim), "bias": (self.out_dim,)}
        return {}


class Network:
    """An ordered layer list with a parameter store and per-tensor trainable flags.

    Parameters are keyed ``"{layer}.weight"`` / ``"{layer}.bias"``. A network built
    with ``allocate=False`` has shapes and flags but no data, which is enough for
    parameter counting.
    """

    def __init__(self, layers, input_shape, dtype=np.float32):
        names = [layer.name for layer in layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}
        self.trainable: dict[str, bool] = {}
        self.channel_mean = np.zeros(self.input_shape[0], dtype=np.float32)
        self.input_scale = 1.0
        self.run_info = None  # (config digest, seed) of the run that produced the weights
        for layer in self.layers:
            for role in layer.param_shapes():
                self.trainable[f"{layer.name}.{role}"] = True

    # -- bookkeeping ------------------------------------------------------------

    def layer(self, name) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(f"no layer named {name!r}")

    def param_shapes(self):
        """Ordered ``{param name: shape}`` for every weight and bias."""
        out = {}
        for layer in self.layers:
            for role, shape in layer.param_shapes().items():
                out[f"{layer.name}.{role}"] = shape
        return out

    @property
    def allocated(self):
        return bool(self.params)

    def initialize(self, rng=None):
        """He-normal weights, zero biases; the last linear layer gets the head initializer."""
        rng = np.random.default_rng(rng)
        head = self.head_name()
        for layer in self.layers:
            if not layer.has_params:
                continue
            shapes = layer.param_shapes()
            w_shape = shapes["weight"]
            if layer.name == head:
                std = HEAD_STDDEV
            else:
                fan_in = int(np.prod(w_shape[1:]))
                std = np.sqrt(2.0 / fan_in)
            w = rng.standard_normal(w_shape, dtype=np.float64 if self.dtype == np.float64 else np.float32)
            w *= std
            self.params[f"{layer.name}.weight"] = Parameter(w.astype(self.dtype, copy=False))
            self.params[f"{layer.name}.bias"] = Parameter(np.zeros(shapes["bias"], dtype=self.dtype))
        return self

    def head_name(self):
        linear = [layer.name for layer in self.layers if layer.kind == "linear"]
        return linear[-1] if linear else None

    def astype(self, dtype):
        """Deep copy with parameters cast to ``dtype``."""
        net = Network(self.layers, self.input_shape, dtype)
        net.trainable = dict(self.trainable)
        net.channel_mean = self.channel_mean.copy()
        net.input_scale = self.input_scale
        net.params = {k: Parameter(p.data.astype(dtype)) for k, p in self.params.items()}
        if hasattr(self, "fc_width"):
            net.fc_width = self.fc_width
        return net

    def copy(self):
        return self.astype(self.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    # -- math ---------------------------------------------------------------------

    def _run(self, x, stop_after=None, tape=None, include_softmax=True):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == len(self.input_shape)
        if single:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"network expects input {self.input_shape}, got {x.shape[1:]}")
        if not self.allocated:
            raise RuntimeError("network parameters are not allocated")
        if tape is not None:
            tape.input_shape = x.shape
        for i, layer in enumerate(self.layers):
            if layer.kind == "softmax" and not include_softmax:
                break
            x = self._layer_forward(layer, x, tape)
            if stop_after is not None and layer.name == stop_after:
                # conv/fc features are reported after their ReLU
                nxt = self.layers[i + 1] if i + 1 < len(self.layers) else None
                if layer.kind in ("conv", "linear") and nxt is not None and nxt.kind == "relu":
                    x = relu_forward(x)
                break
        return x[0] if single else x

    def _layer_forward(self, layer, x, tape):
        if layer.kind == "conv":
            w = self.params[f"{layer.name}.weight"].data
            b = self.params[f"{layer.name}.bias"].data
            out, cols = conv2d_forward_cols(x, w, b)
            if tape is not None:
                tape.record(layer, (cols, x.shape))
            return out
        if layer.kind == "linear":
            w = self.params[f"{layer.name}.weight"].data
            b = self.params[f"{layer.name}.bias"].data
            out = linear_forward(x, w, b)
            if tape is not None:
                tape.record(layer, x)
            return out
        if layer.kind == "relu":
            out = relu_forward(x)
            if tape is not None:
                tape.record(layer, out)
            return out
        if layer.kind == "maxpool":
            out, arg = maxpool2x2_forward(x)
            if tape is not None:
                tape.record(layer, arg)
            return out
        if layer.kind == "softmax":
            return softmax(x)
        raise ValueError(f"unknown layer kind {layer.kind!r}")

    def logits(self, x, tape: Tape | None = None):
        """Forward pass up to (not including) the softmax; records into ``tape`` if given."""
        return self._run(x, tape=tape, include_softmax=False)

    def forward(self, x):
        """Class probabilities for a sample (C, H, W) or a batch (N, C, H, W)."""
        return self._run(x)

    def backward(self, tape: Tape | None, grad_logits, need_input_grad=False):
        """Reverse pass over ``tape``; fills ``grad`` on trainable parameters.

        Frozen parameters get no gradient. Once no trainable parameter remains
        upstream the pass stops early, unless ``need_input_grad`` is set.
        Returns the gradient w.r.t. the network input, or None.
        """
        if tape is None or not tape.entries:
            raise RuntimeError("backward called without a recorded forward pass")
        if tape.consumed:
            raise RuntimeError("tape already consumed by a previous backward call")
        tape.consumed = True
        entries = tape.entries
        first_trainable = next(
            (i for i, (layer, _) in enumerate(entries) if self._layer_trainable(layer)), None
        )
        g = np.asarray(grad_logits, dtype=self.dtype)
        if g.ndim == 1:
            g = g[None]
        for i in range(len(entries) - 1, -1, -1):
            layer, cache = entries[i]
            upstream_needed = need_input_grad or (first_trainable is not None and i > first_trainable)
            if layer.kind == "conv":
                cols, x_shape = cache
                w = self.params[f"{layer.name}.weight"]
                gx, gw, gb = conv2d_backward(g, cols, x_shape, w.data, need_input_grad=upstream_needed)
                self._store_grad(layer.name, gw, gb)
                g = gx
            elif layer.kind == "linear":
                w = self.params[f"{layer.name}.weight"]
                gx, gw, gb = linear_backward(g, cache, w.data, need_input_grad=upstream_needed)
                self._store_grad(layer.name, gw, gb)
                g = gx
            elif layer.kind == "relu":
                g = relu_backward(g, cache)
            elif layer.kind == "maxpool":
                g = maxpool2x2_backward(g, cache)
            if not upstream_needed:
                return None
        return g

    def _layer_trainable(self, layer):
        return layer.has_params and any(self.trainable[f"{layer.name}.{r}"] for r in ("weight", "bias"))

    def _store_grad(self, name, gw, gb):
        for role, grad in (("weight", gw), ("bias", gb)):
            key = f"{name}.{role}"
            self.params[key].grad = grad.astype(self.dtype, copy=False) if self.trainable[key] else None


# -- builders -----------------------------------------------------------------------

def _stack(blocks, in_ch, side, fc_dims, num_classes, fc_start):
    layers = []
    ch = in_ch
    for b, widths in enumerate(blocks, start=1):
        for i, width in enumerate(widths, start=1):
            layers.append(LayerSpec(f"conv{b}_{i}", "conv", ch, width))
            layers.append(LayerSpec(f"relu{b}_{i}", "relu"))
            ch = width
        layers.append(LayerSpec(f"pool{b}", "maxpool"))
        side //= 2
    features = ch * side * side
    dims = list(fc_dims) + [num_classes]
    for j, out in enumerate(dims):
        n = fc_start + j
        layers.append(LayerSpec(f"fc{n}", "linear", features, out))
        if j < len(dims) - 1:
            layers.append(LayerSpec(f"relu{n}", "relu"))
        features = out
    layers.append(LayerSpec("prob", "softmax"))
    return layers


def build_vgg16(num_classes=1000, rng=None, allocate=True, dtype=np.float32) -> Network:
    """16-layer VGG on 3x224x224 input: 13 3x3 convs in 5 pooled blocks, fc6, fc7, fc8."""
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    layers = _stack(VGG16_BLOCKS, 3, 224, (4096, 4096), num_classes, fc_start=6)
    net = Network(layers, (3, 224, 224), dtype)
    return net.initialize(rng) if allocate else net


def build_minicnn(
    channels=(8, 16, 32, 64),
    fc_width=64,
    num_classes=2,
    input_side=64,
    in_channels=3,
    rng=None,
    allocate=True,
    dtype=np.float32,
) -> Network:
    """Conv3x3+ReLU+pool per entry of ``channels``, then a single linear classifier.

    ``fc_width`` is kept on the network (``net.fc_width``) for feature probing
    but adds no layer: the classifier is the only fully-connected layer.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    depth = len(channels)
    if depth == 0 or input_side % (2 ** depth):
        raise ValueError(f"input_side {input_side} must be divisible by 2**{depth}")
    blocks = [(c,) for c in channels]
    layers = _stack(blocks, in_channels, input_side, (), num_classes, fc_start=depth + 1)
    net = Network(layers, (in_channels, input_side, input_side), dtype)
    net.fc_width = fc_width
    return net.initialize(rng) if allocate else net


# -- freezing / counting ---------------------------------------------------------------

def set_trainable(net: Network, pattern: str, flag: bool) -> int:
    """Set the trainable flag on every parameter of layers whose name matches ``pattern``.

    Returns the number of parameter tensors affected.
    """
    hits = [layer for layer in net.layers if layer.has_params and fnmatch.fnmatchcase(layer.name, pattern)]
    if not hits:
        raise ValueError(f"pattern {pattern!r} matches no parameterized layer")
    count = 0
    for layer in hits:
        for role in layer.param_shapes():
            net.trainable[f"{layer.name}.{role}"] = bool(flag)
            count += 1
    return count


def count_parameters(net: Network, trainable_only=False) -> int:
    total = 0
    for name, shape in net.param_shapes().items():
        if trainable_only and not net.trainable[name]:
            continue
        total += int(np.prod(shape))
    return total


def reinit_head(net: Network, layer: str, stddev=HEAD_STDDEV, rng=None):
    """Redraw a linear layer's weights from N(0, stddev^2) and zero its bias."""
    spec = net.layer(layer)
    if spec.kind != "linear":
        raise ValueError(f"layer {layer!r} is {spec.kind}, not linear")
    if stddev <= 0:
        raise ValueError("stddev must be positive")
    rng = np.random.default_rng(rng)
    shapes = spec.param_shapes()
    w = rng.normal(0.0, stddev, size=shapes["weight"])
    net.params[f"{layer}.weight"] = Parameter(w.astype(net.dtype))
    net.params[f"{layer}.bias"] = Parameter(np.zeros(shapes["bias"], dtype=net.dtype))


def replace_head(net: Network, num_classes: int, stddev=HEAD_STDDEV, rng=None) -> Network:
    """Copy of ``net`` whose last linear layer has ``num_classes`` outputs, freshly drawn."""
    head = net.head_name()
    layers = [
        LayerSpec(l.name, l.kind, l.in_dim, num_classes) if l.name == head else l
        for l in net.layers
    ]
    out = Network(layers, net.input_shape, net.dtype)
    out.channel_mean = net.channel_mean.copy()
    out.input_scale = net.input_scale
    out.params = {k: Parameter(p.data.copy()) for k, p in net.params.items()}
    out.trainable.update({k: v for k, v in net.trainable.items() if k in out.trainable})
    reinit_head(out, head, stddev, rng)
    return out


def extract_features(net: Network, x, layer: str):
    """Activation right after ``layer`` (after its ReLU for conv/fc layers)."""
    net.layer(layer)
    return net._run(x, stop_after=layer)


# -- checkpoints ------------------------------------------------------------------------

class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def save_checkpoint(net: Network, path, run=None):
    """Write the parameter store, input conditioning and trainable flags (little-endian).

    Besides one record per weight/bias tensor, three ``_meta.*`` records carry
    the channel means, the input scale and the trainable flag of each tensor.
    ``run = (config_digest, seed)`` adds an empty ``_meta.run=<digest>,<seed>`` record.
    """
    records = []
    names = list(net.param_shapes())
    for name in names:
        layer, role = name.rsplit(".", 1)
        records.append((layer, 0 if role == "weight" else 1, net.params[name].data))
    records.append((META_PREFIX + "channel_mean", 0, np.asarray(net.channel_mean)))
    records.append((META_PREFIX + "input_scale", 0, np.array([net.input_scale])))
    flags = np.array([1.0 if net.trainable[n] else 0.0 for n in names])
    records.append((META_PREFIX + "trainable", 0, flags))
    if run is not None:
        records.append((f"{META_PREFIX}run={run[0]},{int(run[1])}", 0, np.zeros(0)))

    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(records))]
    for name, role, arr in records:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", role, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"checkpoint truncated while reading {what} at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _read_records(path):
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"bad magic {magic!r} (expected {CHECKPOINT_MAGIC!r})")
    version, count = r.unpack("<II", "header")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})")
    records = []
    for i in range(count):
        (n,) = r.unpack("<H", f"record {i} name length")
        name = r.take(n, f"record {i} name").decode("utf-8")
        role, rank = r.unpack("<BB", f"record {name!r} header")
        dims = r.unpack(f"<{rank}Q", f"record {name!r} dims")
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(r.take(4 * size, f"record {name!r} data"), dtype="<f4")
        records.append((name, role, data.reshape(dims).astype(np.float32)))
    return records


_CONV_RE = re.compile(r"conv(\d+)_(\d+)$")
_FC_RE = re.compile(r"fc(\d+)$")


def _infer_topology(weights):
    """Rebuild the layer list from ordered ``(layer, weight array)`` pairs."""
    convs = [(n, w) for n, w in weights if _CONV_RE.match(n)]
    fcs = [(n, w) for n, w in weights if _FC_RE.match(n)]
    if not convs or not fcs:
        raise CheckpointError("checkpoint holds no conv/fc layers to rebuild a network from")
    blocks = {}
    for n, w in convs:
        blocks.setdefault(int(_CONV_RE.match(n).group(1)), []).append(w.shape[0])
    in_ch = convs[0][1].shape[1]
    last_ch = convs[-1][1].shape[0]
    side2 = fcs[0][1].shape[1] // last_ch
    side = int(round(np.sqrt(side2)))
    if side * side * last_ch != fcs[0][1].shape[1]:
        raise CheckpointError(f"cannot infer input size from {fcs[0][0]} with {fcs[0][1].shape[1]} inputs")
    input_side = side * 2 ** len(blocks)
    fc_dims = [w.shape[0] for _, w in fcs[:-1]]
    fc_start = int(_FC_RE.match(fcs[0][0]).group(1))
    layers = _stack([tuple(blocks[b]) for b in sorted(blocks)], in_ch, input_side, fc_dims,
                    fcs[-1][1].shape[0], fc_start)
    return Network(layers, (in_ch, input_side, input_side))


def load_checkpoint(path, expected: Network | None = None) -> Network:
    """Read a checkpoint written by ``save_checkpoint``.

    With ``expected``, parameter shapes are checked against that topology and the
    first offending layer is named; otherwise the topology is rebuilt from the
    record names and shapes.
    """
    records = _read_records(path)
    meta = {n[len(META_PREFIX):]: a for n, _, a in records if n.startswith(META_PREFIX)}
    tensors = {}
    order = []
    for name, role, arr in records:
        if name.startswith(META_PREFIX):
            continue
        if role not in (0, 1):
            raise CheckpointError(f"record {name!r} has unknown tensor role {role}")
        key = f"{name}.{'weight' if role == 0 else 'bias'}"
        tensors[key] = arr
        order.append(key)

    if expected is not None:
        net = Network(expected.layers, expected.input_shape)
    else:
        net = _infer_topology([(k.rsplit(".", 1)[0], tensors[k]) for k in order if k.endswith(".weight")])

    shapes = net.param_shapes()
    for key, shape in shapes.items():
        layer = key.rsplit(".", 1)[0]
        if key not in tensors:
            raise ShapeMismatchError(f"layer {layer!r}: missing {key.rsplit('.', 1)[1]} in checkpoint")
        if tensors[key].shape != tuple(shape):
            raise ShapeMismatchError(
                f"layer {layer!r}: checkpoint shape {tensors[key].shape} != expected {tuple(shape)}"
            )
    extra = [k for k in order if k not in shapes]
    if extra:
        raise ShapeMismatchError(f"layer {extra[0].rsplit('.', 1)[0]!r}: not present in expected topology")

    net.params = {k: Parameter(tensors[k].copy()) for k in shapes}
    if "channel_mean" in meta:
        net.channel_mean = meta["channel_mean"].astype(np.float32)
    if "input_scale" in meta:
        net.input_scale = float(meta["input_scale"][0])
    for key in meta:
        if key.startswith("run="):
            digest, seed = key[4:].rsplit(",", 1)
            net.run_info = (digest, int(seed))
    if "trainable" in meta:
        flags = meta["trainable"]
        if len(flags) != len(order):
            raise CheckpointError("trainable-flag record length does not match parameter count")
        for key, f in zip(order, flags):
            net.trainable[key] = bool(f)
    return net
