"""The four classifier architectures and their exact parameter accounting.

Every architecture is a fixed pipeline: one 3x3 stride-2 convolution, a chain
of fire modules (1x1 squeeze feeding parallel 1x1 and 3x3 expands whose
outputs concatenate along channels), 3x3 stride-2 max pools at fixed points,
a 1x1 classifier convolution, global average pooling and softmax. ReLU
follows the entry convolution, every squeeze and expand, and the classifier
convolution.

variant1 keeps a single fire module, variant2 two, variant3 four; all three
pool once after the entry convolution and once after their last fire module.
squeezenet11 is the full eight-fire stack with pools after fire3 and fire5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor_core
from .errors import ShapeError, UsageError
from .tensor_core import SAME, VALID, ConvKernel


@dataclass(frozen=True)
class FireSpec:
    """Channel widths of one fire module."""

    squeeze: int
    expand1x1: int
    expand3x3: int

    @property
    def out_channels(self) -> int:
        return self.expand1x1 + self.expand3x3

    def param_count(self, in_channels: int) -> int:
        s, e1, e3 = self.squeeze, self.expand1x1, self.expand3x3
        return (in_channels * s + s) + (s * e1 + e1) + (9 * s * e3 + e3)


@dataclass(frozen=True)
class ArchSpec:
    """Complete static description of one architecture."""

    name: str
    fire_modules: tuple[FireSpec, ...]
    pool_after: frozenset[str]  # layer names followed by a 3x3 stride-2 max pool
    conv1_filters: int = 64
    conv1_kernel: int = 3
    conv1_stride: int = 2
    num_classes: int = 2
    input_size: tuple[int, int, int] = (130, 130, 3)
    dropout: float = 0.0  # rate before the classifier convolution; 0 disables

    def fire_names(self) -> list[str]:
        # fire numbering starts at 2; the entry convolution is layer 1
        return [f"fire{i + 2}" for i in range(len(self.fire_modules))]


_FIRES = {
    "variant1": ((16, 64, 64),),
    "variant2": ((16, 64, 64), (16, 64, 64)),
    "variant3": ((16, 64, 64), (16, 64, 64), (32, 128, 128), (32, 128, 128)),
    "squeezenet11": (
        (16, 64, 64), (16, 64, 64), (32, 128, 128), (32, 128, 128),
        (48, 192, 192), (48, 192, 192), (64, 256, 256), (64, 256, 256),
    ),
}

_POOLS = {
    "variant1": ("conv1", "fire2"),
    "variant2": ("conv1", "fire3"),
    "variant3": ("conv1", "fire5"),
    "squeezenet11": ("conv1", "fire3", "fire5"),
}

ARCH_IDS = tuple(_FIRES)

POOL_WINDOW = 3
POOL_STRIDE = 2


def arch_spec(arch_id: str, *, input_size: tuple[int, int, int] | None = None,
              num_classes: int = 2, dropout: float = 0.0) -> ArchSpec:
    """Look up an architecture id, optionally overriding input size or classes."""
    if arch_id not in _FIRES:
        raise UsageError(f"unknown architecture {arch_id!r}; choose from {', '.join(ARCH_IDS)}")
    fires = tuple(FireSpec(*f) for f in _FIRES[arch_id])
    kwargs = {}
    if input_size is not None:
        kwargs["input_size"] = tuple(input_size)
    return ArchSpec(arch_id, fires, frozenset(_POOLS[arch_id]),
                    num_classes=num_classes, dropout=dropout, **kwargs)


def count_trainable_params(spec: ArchSpec) -> int:
    """Exact trainable parameter total from the per-layer ledger."""
    k = spec.conv1_kernel
    total = k * k * spec.input_size[2] * spec.conv1_filters + spec.conv1_filters
    in_c = spec.conv1_filters
    for fire in spec.fire_modules:
        total += fire.param_count(in_c)
        in_c = fire.out_channels
    total += in_c * spec.num_classes + spec.num_classes
    return total


def format_storage(param_count: int) -> str:
    """Storage of the parameters at 4 bytes per 32-bit float, as KB or MB."""
    nbytes = 4 * param_count
    if nbytes < 1024:
        return f"{nbytes} B"
    if nbytes < 1024 ** 2:
        return f"{nbytes / 1024:.2f} KB"
    return f"{nbytes / 1024 ** 2:.2f} MB"


class Network:
    """An instantiated architecture: its spec plus named kernels in graph order."""

    def __init__(self, spec: ArchSpec, kernels: dict[str, ConvKernel]):
        self.spec = spec
        self.kernels = kernels

    def named_arrays(self):
        """Yield (name, array) for every trainable tensor, in graph order."""
        for name, kernel in self.kernels.items():
            yield f"{name}.weight", kernel.weights
            yield f"{name}.bias", kernel.bias

    def param_count(self) -> int:
        return sum(k.param_count for k in self.kernels.values())

    def astype(self, dtype) -> "Network":
        return Network(self.spec, {n: k.astype(dtype) for n, k in self.kernels.items()})


def _he_uniform(rng, kh: int, kw: int, in_c: int, out_c: int, stride: int,
                padding: str) -> ConvKernel:
    # He fan-in uniform for the weights, zero bias
    limit = math.sqrt(6.0 / (kh * kw * in_c))
    weights = rng.uniform(-limit, limit, size=(kh, kw, in_c, out_c)).astype(np.float32)
    bias = np.zeros(out_c, dtype=np.float32)
    return ConvKernel(weights, bias, stride, padding)


def build(arch: str | ArchSpec, seed: int = 0, *,
          input_size: tuple[int, int, int] | None = None,
          num_classes: int = 2, dropout: float = 0.0) -> Network:
    """Instantiate an architecture with seeded He-uniform weights."""
    if isinstance(arch, ArchSpec):
        spec = arch
    else:
        spec = arch_spec(arch, input_size=input_size, num_classes=num_classes,
                         dropout=dropout)
    rng = np.random.default_rng(seed)
    kernels: dict[str, ConvKernel] = {}
    k = spec.conv1_kernel
    kernels["conv1"] = _he_uniform(rng, k, k, spec.input_size[2], spec.conv1_filters,
                                   spec.conv1_stride, VALID)
    in_c = spec.conv1_filters
    for name, fire in zip(spec.fire_names(), spec.fire_modules):
        kernels[f"{name}_squeeze"] = _he_uniform(rng, 1, 1, in_c, fire.squeeze, 1, VALID)
        kernels[f"{name}_expand1x1"] = _he_uniform(rng, 1, 1, fire.squeeze, fire.expand1x1, 1, VALID)
        kernels[f"{name}_expand3x3"] = _he_uniform(rng, 3, 3, fire.squeeze, fire.expand3x3, 1, SAME)
        in_c = fire.out_channels
    kernels["conv10"] = _he_uniform(rng, 1, 1, in_c, spec.num_classes, 1, VALID)
    return Network(spec, kernels)


class _Direct:
    """Executes the layer graph immediately with the pure operators."""

    def leaf(self, x, name=None):
        return x

    def conv2d(self, x, kernel, name):
        return tensor_core.conv2d(x, kernel)

    def relu(self, x):
        return tensor_core.relu(x)

    def maxpool2d(self, x, window, stride):
        return tensor_core.maxpool2d(x, window, stride)

    def global_avg_pool(self, x):
        return tensor_core.global_avg_pool(x)

    def channel_concat(self, a, b):
        return tensor_core.channel_concat(a, b)

    def mul_mask(self, x, mask):
        return x * mask

    def value(self, x):
        return x


def run_layers(network: Network, batch, ex, dropout_rng=None):
    """Drive the layer graph through an executor; returns the logits node.

    ex is either a recording Tape or the direct executor. The optional
    dropout mask is sampled just before the classifier convolution and only
    when the architecture enables dropout and an rng is supplied (training
    mode).
    """
    spec = network.spec
    kernels = network.kernels
    v = ex.leaf(batch)
    v = ex.relu(ex.conv2d(v, kernels["conv1"], "conv1"))
    if "conv1" in spec.pool_after:
        v = ex.maxpool2d(v, POOL_WINDOW, POOL_STRIDE)
    for name in spec.fire_names():
        squeezed = ex.relu(ex.conv2d(v, kernels[f"{name}_squeeze"], f"{name}_squeeze"))
        e1 = ex.relu(ex.conv2d(squeezed, kernels[f"{name}_expand1x1"], f"{name}_expand1x1"))
        e3 = ex.relu(ex.conv2d(squeezed, kernels[f"{name}_expand3x3"], f"{name}_expand3x3"))
        v = ex.channel_concat(e1, e3)
        if name in spec.pool_after:
            v = ex.maxpool2d(v, POOL_WINDOW, POOL_STRIDE)
    if spec.dropout > 0 and dropout_rng is not None:
        keep = 1.0 - spec.dropout
        shape = ex.value(v).shape
        mask = (dropout_rng.random(shape) < keep).astype(ex.value(v).dtype) / keep
        v = ex.mul_mask(v, mask)
    v = ex.relu(ex.conv2d(v, kernels["conv10"], "conv10"))
    return ex.global_avg_pool(v)


def forward(network: Network, batch, tape=None, dropout_rng=None):
    """Class probabilities for a batch, shape (n, 1, 1, num_classes).

    With a tape supplied, the run is recorded and the logits node is left in
    tape.output so a loss can be attached; the returned probabilities are
    computed outside the tape either way.
    """
    x = np.asarray(batch)
    spec = network.spec
    if x.ndim != 4 or x.shape[1:] != tuple(spec.input_size):
        raise ShapeError(
            f"forward: expected batch shaped (n, {spec.input_size[0]}, "
            f"{spec.input_size[1]}, {spec.input_size[2]}), got {x.shape}"
        )
    if x.shape[0] == 0:
        raise ShapeError("forward: empty batch")
    ex = tape if tape is not None else _Direct()
    out = run_layers(network, x, ex, dropout_rng=dropout_rng)
    if tape is not None:
        tape.output = out
    return tensor_core.softmax(ex.value(out))


def _conv_extent(extent: int, k: int, stride: int, padding: str) -> int:
    if padding == SAME:
        return -(-extent // stride)
    if k > extent:
        raise ShapeError(f"kernel extent {k} larger than input extent {extent}")
    return (extent - k) // stride + 1


@dataclass(frozen=True)
class LayerRow:
    """One line of the summary table."""

    name: str
    output_shape: tuple[int, int, int]  # (h, w, c); batch omitted
    params: int
    cumulative: int


def summary(spec: ArchSpec) -> list[LayerRow]:
    """Per-layer table of output shapes and parameter counts.

    The cumulative column of the final row equals count_trainable_params.
    """
    rows: list[LayerRow] = []
    total = 0
    pools = 0

    def add(name, h, w, c, params):
        nonlocal total
        total += params
        rows.append(LayerRow(name, (h, w, c), params, total))

    h, w, in_c = spec.input_size
    k = spec.conv1_kernel
    h = _conv_extent(h, k, spec.conv1_stride, VALID)
    w = _conv_extent(w, k, spec.conv1_stride, VALID)
    add("conv1", h, w, spec.conv1_filters, k * k * in_c * spec.conv1_filters + spec.conv1_filters)
    in_c = spec.conv1_filters

    def pool(h, w):
        nonlocal pools
        pools += 1
        return (_conv_extent(h, POOL_WINDOW, POOL_STRIDE, VALID),
                _conv_extent(w, POOL_WINDOW, POOL_STRIDE, VALID))

    if "conv1" in spec.pool_after:
        h, w = pool(h, w)
        add(f"maxpool{pools}", h, w, in_c, 0)
    for name, fire in zip(spec.fire_names(), spec.fire_modules):
        add(name, h, w, fire.out_channels, fire.param_count(in_c))
        in_c = fire.out_channels
        if name in spec.pool_after:
            h, w = pool(h, w)
            add(f"maxpool{pools}", h, w, in_c, 0)
    add("conv10", h, w, spec.num_classes, in_c * spec.num_classes + spec.num_classes)
    add("global_avg_pool", 1, 1, spec.num_classes, 0)
    add("softmax", 1, 1, spec.num_classes, 0)
    return rows
