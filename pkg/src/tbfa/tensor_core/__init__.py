"""Minimal dense-tensor engine: numpy arrays carry activations, weights and gradients."""
from .data import LabeledBatch, concat_batches, load_idx_dataset, make_blobs, read_idx, write_idx
from .fileformat import FormatError, load_model, model_from_bytes, model_to_bytes, save_model
from .layers import AvgPool2d, Conv2d, Dense, Flatten, ReLU, ShapeError
from .model import (Model, backward, build_cnn, build_mlp, cross_entropy, forward,
                    loss_and_gradients, predict)
from .training import TrainingDiverged, accuracy, train_sgd

__all__ = [
    "AvgPool2d", "Conv2d", "Dense", "Flatten", "FormatError", "LabeledBatch", "Model", "ReLU",
    "ShapeError", "TrainingDiverged", "accuracy", "backward", "build_cnn", "build_mlp",
    "concat_batches", "cross_entropy", "forward", "load_idx_dataset", "load_model", "loss_and_gradients",
    "make_blobs", "model_from_bytes", "model_to_bytes", "predict", "read_idx", "save_model",
    "train_sgd", "write_idx",
]
