"""Loss, Adam updates and the epoch loop.

The regimen is fixed by configuration: Adam at learning rate 1e-4, batches of
32, categorical cross-entropy. One adam_step consumes the gradients of one
batch; train_epoch walks an iterator of batches once and reports mean batch
loss and training accuracy. All updates happen in place on a single thread.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import architectures, autograd, data, metrics
from .autograd import PROB_FLOOR, Tape, backward
from .errors import UsageError


@dataclass
class TrainConfig:
    """Run settings; defaults follow the reference regimen."""

    architecture: str = "variant1"
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    augment: bool = True
    data_root: str | None = None
    manifest: str | None = None
    val_frac: float = 0.2
    validate_each_epoch: bool = False
    dropout: float = 0.0
    subset_per_class: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise UsageError(f"seed must be >= 0, got {self.seed}")
        if not 0.0 <= self.val_frac < 1.0:
            raise UsageError(f"val_frac must lie in [0, 1), got {self.val_frac}")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout must lie in [0, 1), got {self.dropout}")


def cross_entropy(probs, labels) -> float:
    """Mean -log p(true label); probabilities are clamped to 1e-7 first."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.ndim != 4 or probs.shape[1:3] != (1, 1):
        raise UsageError(f"expected probabilities shaped (n, 1, 1, k), got {probs.shape}")
    n, _, _, k = probs.shape
    if n == 0:
        raise UsageError("empty batch")
    if labels.shape != (n,):
        raise UsageError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise UsageError(f"label out of range for {k} classes")
    p_true = probs[np.arange(n), 0, 0, labels]
    return float(-np.log(np.maximum(p_true, PROB_FLOOR)).mean())


class AdamState:
    """First and second moment estimates plus the shared step counter."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    @classmethod
    def for_network(cls, network, **kwargs) -> "AdamState":
        return cls(dict(network.named_arrays()), **kwargs)


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> None:
    """One bias-corrected Adam update, applied to the parameters in place."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise UsageError("gradient set does not align with the parameter set")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise UsageError(f"gradient shape mismatch for {name!r}: "
                             f"{grads[name].shape} vs {p.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def train_epoch(network, batches, state: AdamState, config: TrainConfig) -> dict:
    """One pass over the batch iterator; returns mean loss and accuracy."""
    losses = []
    correct = 0
    seen = 0
    params = dict(network.named_arrays())
    for x, y in batches:
        tape = Tape()
        dropout_rng = None
        if network.spec.dropout > 0:
            dropout_rng = np.random.default_rng((config.seed, state.t))
        probs = architectures.forward(network, x, tape=tape, dropout_rng=dropout_rng)
        loss_var = tape.softmax_cross_entropy(tape.output, y)
        grads = backward(tape)
        adam_step(state, params, grads)
        losses.append(float(loss_var.value.reshape(())))
        pred = np.argmax(probs[:, 0, 0, :], axis=1)
        correct += int((pred == y).sum())
        seen += len(y)
    if seen == 0:
        raise UsageError("empty dataset")
    return {"mean_loss": float(np.mean(losses)), "train_acc": correct / seen}


def evaluate(network, batches) -> list[tuple[int, int, float]]:
    """Per-sample (true label, predicted label, score) without augmentation.

    The prediction is the probability argmax, lowest class index on ties; the
    score is the probability of the positive (parasitized) class, consumed by
    the ROC sweep.
    """
    out: list[tuple[int, int, float]] = []
    for x, y in batches:
        probs = architectures.forward(network, x)
        flat = probs[:, 0, 0, :]
        pred = np.argmax(flat, axis=1)
        score = flat[:, metrics.POSITIVE_CLASS].astype(float)
        out.extend(zip(y.tolist(), pred.tolist(), score.tolist()))
    return out


def run_training(network, train_partition, val_partition, state: AdamState,
                 config: TrainConfig, augment_config=None, store=None,
                 on_epoch=None):
    """Full training run: epoch loop, then one evaluation of the val split.

    Returns (epoch_logs, eval_results). Each log line carries epoch number,
    mean loss, training accuracy, validation accuracy (null unless per-epoch
    validation is on) and wall time in ms. on_epoch, when given, receives
    each log line as it is produced.
    """
    store = store if store is not None else data.RecordStore()
    aug = augment_config if config.augment else None
    logs: list[dict] = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        batches = data.batch_iter(train_partition, config.batch_size, config.seed,
                                  epoch=epoch, augment_config=aug, store=store)
        stats = train_epoch(network, batches, state, config)
        val_acc = None
        if config.validate_each_epoch and val_partition:
            results = evaluate(network, data.batch_iter(
                val_partition, config.batch_size, config.seed, store=store,
                shuffle=False))
            val_acc = sum(1 for t, p, _ in results if t == p) / len(results)
        logs.append({
            "epoch": epoch + 1,
            "mean_loss": stats["mean_loss"],
            "train_acc": stats["train_acc"],
            "val_acc": val_acc,
            "wall_ms": int((time.perf_counter() - started) * 1000),
        })
        if on_epoch is not None:
            on_epoch(logs[-1])
    results = []
    if val_partition:
        results = evaluate(network, data.batch_iter(
            val_partition, config.batch_size, config.seed, store=store, shuffle=False))
    return logs, results
