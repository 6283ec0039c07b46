"""Plain-classifier training loop and batched evaluation helpers.

This is ordinary cross-entropy SGD, used to pretrain teachers and as the
inner loop of the dropout planner.  Batch order reshuffles every epoch from
a generator seeded by (seed, epoch), so runs are reproducible and epochs
are independent of how many came before.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from edgeslim import metrics
from edgeslim.engine.model import (
    MaskedModel,
    backward,
    cross_entropy_node,
    forward,
    sgd_step,
)


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Yield index arrays covering 0..n-1 once, shuffled, in batch-size runs."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.default_rng([seed, epoch]).integers(0, 2**63 - 1))


def train_classifier(
    model: MaskedModel,
    dataset,
    epochs: int,
    eta: float = 0.05,
    batch_size: int = 32,
    seed: int = 0,
) -> list[float]:
    """SGD on mean cross-entropy, in place.  Returns mean loss per epoch."""
    losses = []
    for epoch in range(1, epochs + 1):
        rng = np.random.default_rng(epoch_seed(seed, epoch))
        losses.append(run_epoch(model, dataset, eta=eta, batch_size=batch_size, rng=rng))
    return losses


def run_epoch(
    model: MaskedModel,
    dataset,
    eta: float,
    batch_size: int,
    rng: np.random.Generator,
) -> float:
    """One shuffled pass of cross-entropy SGD; returns the mean batch loss.

    The mean weights batches by size, so it equals the epoch's mean
    per-instance loss under the weights each batch was scored with.
    """
    total, count = 0.0, 0
    for idx in iterate_minibatches(dataset.n, batch_size, rng):
        trace = forward(model, dataset.features[idx])
        loss = cross_entropy_node(trace, dataset.labels[idx])
        grads = backward(model, trace, loss)
        sgd_step(model, grads, eta)
        total += float(loss.data) * len(idx)
        count += len(idx)
    return total / count


def evaluate_loss(model: MaskedModel, dataset, batch_size: int = 256) -> float:
    """Mean cross-entropy over the whole dataset, no updates."""
    total = 0.0
    for start in range(0, dataset.n, batch_size):
        sl = slice(start, start + batch_size)
        trace = forward(model, dataset.features[sl], trainable=False)
        node = cross_entropy_node(trace, dataset.labels[sl])
        total += float(node.data) * (trace.batch_size)
    return total / dataset.n


def predict(model: MaskedModel, features: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Predicted 1-based labels for a feature matrix."""
    out = []
    for start in range(0, features.shape[0], batch_size):
        trace = forward(model, features[start : start + batch_size], trainable=False)
        out.append(trace.predictions)
    return np.concatenate(out)


def evaluate_accuracy(model: MaskedModel, dataset) -> float:
    """Class-averaged accuracy (the reporting metric) on a dataset."""
    counts = metrics.confusion_counts(dataset.labels, predict(model, dataset.features), dataset.k)
    return metrics.accuracy(counts)
