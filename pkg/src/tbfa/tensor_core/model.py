"""Sequential classifier model: forward pass, cross-entropy and backprop."""
from __future__ import annotations

import numpy as np

from .data import LabeledBatch
from .layers import AvgPool2d, Conv2d, Dense, Flatten, Layer, ReLU, ShapeError


class Model:
    """An ordered stack of layers applied to inputs of ``input_shape``.

    Shapes are checked once at construction; a ``ShapeError`` names the
    first layer whose input does not fit.
    """

    def __init__(self, layers, input_shape):
        self.layers: list[Layer] = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                self.shapes.append(tuple(layer.output_shape(self.shapes[-1])))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None

    @property
    def output_shape(self):
        return self.shapes[-1]

    def param_layers(self) -> list[Layer]:
        return [layer for layer in self.layers if layer.has_params]

    @property
    def n_classes(self) -> int:
        self.check_classifier()
        return self.layers[-1].out_features

    def check_classifier(self):
        if not self.layers or not isinstance(self.layers[-1], Dense):
            raise ShapeError("classifier must end in a dense layer producing the logits")

    def copy(self) -> "Model":
        return Model([layer.copy() for layer in self.layers], self.input_shape)

    def weights(self) -> list[np.ndarray]:
        return [layer.weight for layer in self.param_layers()]

    def __repr__(self):
        inner = ", ".join(repr(layer) for layer in self.layers)
        return f"Model([{inner}], input_shape={self.input_shape})"


def _inputs(batch):
    return batch.inputs if isinstance(batch, LabeledBatch) else np.asarray(batch, dtype=np.float64)


def _check_input(model, x):
    if tuple(x.shape[1:]) != model.input_shape:
        first = model.layers[0].kind if model.layers else "model"
        raise ShapeError(f"layer 0 ({first}): expected input {model.input_shape}, got {tuple(x.shape[1:])}")


def forward(model: Model, batch) -> np.ndarray:
    """Run ``model`` on a ``LabeledBatch`` (or a bare input array)."""
    x = _inputs(batch)
    _check_input(model, x)
    for layer in model.layers:
        x, _ = layer.forward(x)
    return x


def predict(model: Model, batch) -> np.ndarray:
    return forward(model, batch).argmax(axis=1)


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels) -> float:
    """Mean softmax cross-entropy of ``logits`` (B x C) against integer ``labels``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError("logits must be (B, C) with one label per row")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"label out of range for {logits.shape[1]} classes")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    logp = log_softmax(logits)
    return float(-logp[np.arange(labels.size), labels].mean())


def loss_and_gradients(model: Model, inputs, targets):
    """Cross-entropy of the model against ``targets`` and per-layer ``(dW, db)``.

    Gradients are w.r.t. whatever real weights the layers currently hold,
    so for a quantized model they are straight-through gradients of the
    dequantized values.
    """
    x = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    _check_input(model, x)
    caches = []
    for layer in model.layers:
        x, cache = layer.forward(x)
        caches.append(cache)
    loss = cross_entropy(x, targets)
    b = targets.size
    dout = np.exp(log_softmax(x))
    dout[np.arange(b), targets] -= 1.0
    dout /= b
    grads = []
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        dout, dw, db = layer.backward(dout, cache)
        if layer.has_params:
            grads.append((dw, db))
    grads.reverse()
    return loss, grads


def backward(model: Model, batch: LabeledBatch, loss_spec=None) -> list[np.ndarray]:
    """Weight gradients, one array per parameterized layer.

    ``loss_spec`` may supply ``targets(labels)`` to relabel the batch (the
    attack objectives are all cross-entropy against rewritten labels);
    by default the batch's own labels are used.
    """
    targets = batch.labels if loss_spec is None else loss_spec.targets(batch.labels)
    _, grads = loss_and_gradients(model, batch.inputs, targets)
    return [dw for dw, _ in grads]


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def build_mlp(input_dim, hidden, n_classes, seed=0) -> Model:
    """Dense/ReLU stack with He-normal weights and zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    width = int(input_dim)
    for h in list(hidden):
        layers += [Dense(width, h, _he(rng, (h, width), width)), ReLU()]
        width = h
    layers.append(Dense(width, n_classes, _he(rng, (n_classes, width), width)))
    return Model(layers, (input_dim,))


def build_cnn(input_shape, channels=(4, 8), n_classes=10, kernel_size=3, pool=2, seed=0) -> Model:
    """conv-relu-pool blocks followed by a flatten and one dense classifier."""
    rng = np.random.default_rng(seed)
    layers = []
    c, h, w = input_shape
    shape = tuple(input_shape)
    for out_ch in channels:
        fan_in = shape[0] * kernel_size * kernel_size
        conv = Conv2d(shape[0], out_ch, kernel_size, 1, kernel_size // 2,
                      _he(rng, (out_ch, shape[0], kernel_size, kernel_size), fan_in))
        layers += [conv, ReLU(), AvgPool2d(pool)]
        shape = Model(layers, input_shape).output_shape
    layers.append(Flatten())
    flat = int(np.prod(shape))
    layers.append(Dense(flat, n_classes, _he(rng, (n_classes, flat), flat)))
    return Model(layers, input_shape)
