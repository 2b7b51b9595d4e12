"""Reverse-mode differentiation recorded on an explicit tape.

A Tape mirrors the tensor operators: each call computes the forward value
immediately and appends one record (operator, input ids, output id, saved
context). backward() walks the records once in reverse, accumulating
vector-Jacobian products, and returns a gradient per named parameter.

The loss is always attached through the fused softmax + cross-entropy
operator, whose gradient is the closed form (probabilities - one hot) divided
by the batch size. Plain softmax stays forward-only for inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core
from .errors import ShapeError, UsageError
from .tensor_core import SAME, ConvKernel, pad_same, same_pads, sliding_windows

# Predicted probabilities are clamped to at least this before taking the log.
PROB_FLOOR = 1e-7

# grad_check refuses networks above this many parameters.
GRAD_CHECK_PARAM_LIMIT = 50_000


class Var:
    """Handle to one value recorded on a tape."""

    __slots__ = ("id", "value")

    def __init__(self, var_id: int, value: np.ndarray):
        self.id = var_id
        self.value = value


@dataclass
class TapeRecord:
    op: str
    inputs: tuple[int, ...]
    out_id: int
    out_shape: tuple[int, ...]
    out_dtype: np.dtype
    ctx: dict


class Tape:
    """Ordered record of operator applications, consumed once by backward()."""

    def __init__(self):
        self.records: list[TapeRecord] = []
        self.output: Var | None = None  # set by architectures.forward
        self._next_id = 0
        self._named_leaves: dict[str, int] = {}

    def _new_var(self, value) -> Var:
        var = Var(self._next_id, value)
        self._next_id += 1
        return var

    def leaf(self, value, name: str | None = None) -> Var:
        """Register an input. Named leaves get a gradient entry of their own."""
        var = self._new_var(np.asarray(value))
        if name is not None:
            self._named_leaves[name] = var.id
        return var

    def _emit(self, op: str, inputs: tuple[int, ...], value: np.ndarray, ctx: dict) -> Var:
        var = self._new_var(value)
        self.records.append(TapeRecord(op, inputs, var.id, value.shape, value.dtype, ctx))
        return var

    def value(self, var: Var) -> np.ndarray:
        return var.value

    # -- recorded operators -------------------------------------------------

    def conv2d(self, x: Var, kernel: ConvKernel, name: str) -> Var:
        y = tensor_core.conv2d(x.value, kernel)
        return self._emit("conv2d", (x.id,), y, {"x": x.value, "kernel": kernel, "name": name})

    def relu(self, x: Var) -> Var:
        mask = x.value > 0
        return self._emit("relu", (x.id,), x.value * mask, {"mask": mask})

    def maxpool2d(self, x: Var, window: int, stride: int) -> Var:
        v = x.value
        if window > v.shape[1] or window > v.shape[2]:
            raise ShapeError(
                f"maxpool2d: window {window} larger than input {v.shape[1]}x{v.shape[2]}"
            )
        win = sliding_windows(v, window, window, stride)
        n, oh, ow, _, _, c = win.shape
        flat = win.reshape(n, oh, ow, window * window, c)
        # argmax picks the first row-major maximum; ties route there alone
        argmax = flat.argmax(axis=3)
        y = flat.max(axis=3)
        ctx = {"x_shape": v.shape, "window": window, "stride": stride, "argmax": argmax}
        return self._emit("maxpool2d", (x.id,), y, ctx)

    def global_avg_pool(self, x: Var) -> Var:
        y = tensor_core.global_avg_pool(x.value)
        return self._emit("global_avg_pool", (x.id,), y, {"x_shape": x.value.shape})

    def channel_concat(self, a: Var, b: Var) -> Var:
        y = tensor_core.channel_concat(a.value, b.value)
        return self._emit("channel_concat", (a.id, b.id), y, {"left_channels": a.value.shape[3]})

    def mul_mask(self, x: Var, mask: np.ndarray) -> Var:
        return self._emit("mul_mask", (x.id,), x.value * mask, {"mask": mask})

    def sum(self, x: Var) -> Var:
        y = np.asarray(x.value.sum(), dtype=x.value.dtype).reshape(1, 1, 1, 1)
        return self._emit("sum", (x.id,), y, {"x_shape": x.value.shape})

    def softmax_cross_entropy(self, logits: Var, labels) -> Var:
        """Mean negative log likelihood of the true labels; scalar output."""
        v = logits.value
        n, _, _, k = v.shape
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise UsageError(f"expected {n} labels, got shape {labels.shape}")
        if n == 0:
            raise UsageError("empty batch")
        if labels.min() < 0 or labels.max() >= k:
            raise UsageError(f"label out of range for {k} classes")
        probs = tensor_core.softmax(v)
        loss = nll_loss(probs, labels)
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), 0, 0, labels] = 1
        y = np.asarray(loss, dtype=v.dtype).reshape(1, 1, 1, 1)
        return self._emit("softmax_cross_entropy", (logits.id,), y,
                          {"probs": probs, "onehot": onehot, "n": n})


def nll_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean -log p(true label), with probabilities clamped to PROB_FLOOR."""
    n = probs.shape[0]
    p_true = probs[np.arange(n), 0, 0, labels]
    return float(-np.log(np.maximum(p_true, PROB_FLOOR)).mean())


def _add(store: dict, key, value) -> None:
    cur = store.get(key)
    store[key] = value if cur is None else cur + value


_VJPS = {}


def _vjp(op):
    def register(fn):
        _VJPS[op] = fn
        return fn
    return register


@_vjp("conv2d")
def _conv2d_vjp(rec, g, node_grads, param_grads):
    x = rec.ctx["x"]
    k: ConvKernel = rec.ctx["kernel"]
    name = rec.ctx["name"]
    s = k.stride
    xp = pad_same(x, k.kh, k.kw, s) if k.padding == SAME else x
    oh, ow = g.shape[1], g.shape[2]
    win = sliding_windows(xp, k.kh, k.kw, s)
    _add(param_grads, name + ".weight", np.tensordot(win, g, axes=([0, 1, 2], [0, 1, 2])))
    _add(param_grads, name + ".bias", g.sum(axis=(0, 1, 2)))
    # scatter-add each kernel offset's contribution back onto the input
    per_offset = np.tensordot(g, k.weights, axes=([3], [3]))  # (n, oh, ow, kh, kw, ci)
    gxp = np.zeros_like(xp)
    for dh in range(k.kh):
        for dw in range(k.kw):
            gxp[:, dh:dh + oh * s:s, dw:dw + ow * s:s, :] += per_offset[:, :, :, dh, dw, :]
    if k.padding == SAME:
        plo, _ = same_pads(x.shape[1], k.kh, s)
        qlo, _ = same_pads(x.shape[2], k.kw, s)
        gx = gxp[:, plo:plo + x.shape[1], qlo:qlo + x.shape[2], :].copy()
    else:
        gx = gxp
    _add(node_grads, rec.inputs[0], gx)


@_vjp("relu")
def _relu_vjp(rec, g, node_grads, param_grads):
    _add(node_grads, rec.inputs[0], g * rec.ctx["mask"])


@_vjp("maxpool2d")
def _maxpool_vjp(rec, g, node_grads, param_grads):
    window, s = rec.ctx["window"], rec.ctx["stride"]
    argmax = rec.ctx["argmax"]
    oh, ow = g.shape[1], g.shape[2]
    gx = np.zeros(rec.ctx["x_shape"], dtype=g.dtype)
    for p in range(window):
        for q in range(window):
            sel = argmax == (p * window + q)
            gx[:, p:p + oh * s:s, q:q + ow * s:s, :] += np.where(sel, g, 0)
    _add(node_grads, rec.inputs[0], gx)


@_vjp("global_avg_pool")
def _gap_vjp(rec, g, node_grads, param_grads):
    shape = rec.ctx["x_shape"]
    spread = g / (shape[1] * shape[2])
    _add(node_grads, rec.inputs[0], np.broadcast_to(spread, shape).copy())


@_vjp("channel_concat")
def _concat_vjp(rec, g, node_grads, param_grads):
    ca = rec.ctx["left_channels"]
    _add(node_grads, rec.inputs[0], g[..., :ca].copy())
    _add(node_grads, rec.inputs[1], g[..., ca:].copy())


@_vjp("mul_mask")
def _mul_mask_vjp(rec, g, node_grads, param_grads):
    _add(node_grads, rec.inputs[0], g * rec.ctx["mask"])


@_vjp("sum")
def _sum_vjp(rec, g, node_grads, param_grads):
    _add(node_grads, rec.inputs[0], np.full(rec.ctx["x_shape"], g.flat[0], dtype=g.dtype))


@_vjp("softmax_cross_entropy")
def _sce_vjp(rec, g, node_grads, param_grads):
    probs, onehot, n = rec.ctx["probs"], rec.ctx["onehot"], rec.ctx["n"]
    _add(node_grads, rec.inputs[0], g.flat[0] * (probs - onehot) / n)


def backward(tape: Tape, loss_seed: float = 1.0) -> dict[str, np.ndarray]:
    """Single reverse sweep; returns gradients keyed by parameter name.

    The terminal record must hold a scalar (a single value). Named leaves
    registered on the tape are reported alongside kernel parameters.
    """
    if not tape.records:
        raise UsageError("backward: tape is empty")
    last = tape.records[-1]
    if int(np.prod(last.out_shape)) != 1:
        raise UsageError(f"backward: terminal node has shape {last.out_shape}, expected a scalar")
    node_grads: dict[int, np.ndarray] = {
        last.out_id: np.full(last.out_shape, loss_seed, dtype=last.out_dtype)
    }
    param_grads: dict[str, np.ndarray] = {}
    for rec in reversed(tape.records):
        g = node_grads.pop(rec.out_id, None)
        if g is None:
            continue
        _VJPS[rec.op](rec, g, node_grads, param_grads)
    for name, leaf_id in tape._named_leaves.items():
        if leaf_id in node_grads:
            param_grads[name] = node_grads[leaf_id]
    return param_grads


@dataclass
class GradCheckReport:
    """Worst relative error per parameter tensor and overall."""

    per_param: dict[str, float]
    max_rel_error: float


def grad_check(network, inputs, labels, epsilon: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Runs entirely in float64 on a copy of the network. For every parameter
    entry the loss is evaluated at +/- epsilon and the relative error uses
    the denominator max(|analytic|, |numeric|, 1e-8).
    """
    from . import architectures

    if not (1e-7 <= epsilon <= 1e-2):
        raise UsageError(f"epsilon must lie in [1e-7, 1e-2], got {epsilon}")
    if network.param_count() > GRAD_CHECK_PARAM_LIMIT:
        raise UsageError(
            f"grad_check budget is {GRAD_CHECK_PARAM_LIMIT} parameters, "
            f"network has {network.param_count()}"
        )
    net = network.astype(np.float64)
    x = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)

    tape = Tape()
    architectures.forward(net, x, tape=tape)
    tape.softmax_cross_entropy(tape.output, labels)
    analytic = backward(tape)

    def loss_at() -> float:
        probs = architectures.forward(net, x)
        return nll_loss(probs, labels)

    per_param: dict[str, float] = {}
    for name, arr in net.named_arrays():
        flat = arr.reshape(-1)
        a_flat = np.ascontiguousarray(analytic[name]).reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp = loss_at()
            flat[i] = orig - epsilon
            lm = loss_at()
            flat[i] = orig
            numeric = (lp - lm) / (2 * epsilon)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
        per_param[name] = worst
    return GradCheckReport(per_param, max(per_param.values()))
