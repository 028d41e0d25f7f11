from __future__ import annotations

import logging

import numpy as np

from .data import LabeledBatch
from .model import Model, loss_and_gradients, predict

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def accuracy(model: Model, batch: LabeledBatch) -> float:
    if len(batch) == 0:
        raise ValueError("accuracy of an empty batch is undefined")
    return float(np.mean(predict(model, batch) == batch.labels))


def train_sgd(model: Model, dataset: LabeledBatch, epochs: int, lr: float, seed: int = 0,
              batch_size: int = 32, momentum: float = 0.0, test: LabeledBatch | None = None) -> Model:
    """Minibatch SGD on cross-entropy; returns a trained copy of ``model``.

    The shuffle order is the only randomness and comes from ``seed``, so a
    fixed seed gives bit-identical weights.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    model.check_classifier()
    dataset.check_classes(model.n_classes)
    model = model.copy()
    rng = np.random.default_rng(seed)
    params = model.param_layers()
    velocity = [(np.zeros_like(p.weight), np.zeros_like(p.bias)) for p in params]
    n = len(dataset)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            try:
                loss, grads = loss_and_gradients(model, dataset.inputs[idx], dataset.labels[idx])
            except ValueError as exc:  # labels were checked above, so this is non-finite logits
                raise TrainingDiverged(f"{exc} in epoch {epoch}") from None
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch}")
            total += loss * idx.size
            for layer, (vw, vb), (dw, db) in zip(params, velocity, grads):
                vw *= momentum
                vw -= lr * dw
                vb *= momentum
                vb -= lr * db
                layer.weight += vw
                layer.bias += vb
            if not all(np.isfinite(p.weight).all() and np.isfinite(p.bias).all() for p in params):
                raise TrainingDiverged(f"parameters became non-finite in epoch {epoch}")
        log.debug("epoch %d loss %.5f", epoch, total / n)
    if epochs:
        msg = f"train accuracy {accuracy(model, dataset):.4f}"
        if test is not None:
            msg += f", test accuracy {accuracy(model, test):.4f}"
        log.info(msg)
    return model
