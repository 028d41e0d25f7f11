"""Little-endian binary container for float models.

Layout::

    magic      8 bytes  b"TBFAMDL\\0"
    version    u32      (1)
    n_layers   u32
    in_ndim    u32, then in_ndim x u32 input dims
    per layer  u8 kind code, u8 n_ints, n_ints x u32 descriptor
    payload    per parameterized layer, in order: float64 weights, float64 bias

The quantized container (see ``tbfa.quantizer``) reuses the header and
descriptor table and swaps in its own payload.
"""
from __future__ import annotations

import io
import struct

import numpy as np

from .layers import LAYER_KINDS, AvgPool2d, Conv2d, Dense
from .model import Model

MODEL_MAGIC = b"TBFAMDL\0"
VERSION = 1
KIND_CODES = {"dense": 1, "conv2d": 2, "relu": 3, "flatten": 4, "avgpool2d": 5}
_CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


class FormatError(ValueError):
    pass


def write_header(buf, magic, model: Model):
    buf.write(magic)
    buf.write(struct.pack("<II", VERSION, len(model.layers)))
    buf.write(struct.pack("<I", len(model.input_shape)))
    buf.write(struct.pack(f"<{len(model.input_shape)}I", *model.input_shape))
    for layer in model.layers:
        desc = layer.describe()
        buf.write(struct.pack("<BB", KIND_CODES[layer.kind], len(desc)))
        buf.write(struct.pack(f"<{len(desc)}I", *desc))


def _unpack(buf, fmt):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise FormatError("truncated model file")
    return struct.unpack(fmt, raw)


def read_header(buf, magic):
    """Parse header and descriptor table; returns a zero-weight skeleton ``Model``."""
    if buf.read(len(magic)) != magic:
        raise FormatError("bad magic bytes")
    version, n_layers = _unpack(buf, "<II")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    (ndim,) = _unpack(buf, "<I")
    input_shape = _unpack(buf, f"<{ndim}I")
    layers = []
    for _ in range(n_layers):
        code, n_ints = _unpack(buf, "<BB")
        if code not in _CODE_KINDS:
            raise FormatError(f"unknown layer kind code {code}")
        desc = _unpack(buf, f"<{n_ints}I")
        kind = _CODE_KINDS[code]
        if kind == "dense":
            layers.append(Dense(*desc))
        elif kind == "conv2d":
            layers.append(Conv2d(*desc))
        elif kind == "avgpool2d":
            layers.append(AvgPool2d(*desc))
        else:
            layers.append(LAYER_KINDS[kind]())
    return Model(layers, input_shape)


def read_array(buf, count, dtype="<f8"):
    dt = np.dtype(dtype)
    raw = buf.read(count * dt.itemsize)
    if len(raw) != count * dt.itemsize:
        raise FormatError("truncated payload")
    return np.frombuffer(raw, dtype=dt).astype(dt.newbyteorder("="))


def model_to_bytes(model: Model) -> bytes:
    buf = io.BytesIO()
    write_header(buf, MODEL_MAGIC, model)
    for layer in model.param_layers():
        buf.write(layer.weight.astype("<f8").tobytes())
        buf.write(layer.bias.astype("<f8").tobytes())
    return buf.getvalue()


def model_from_bytes(data: bytes) -> Model:
    buf = io.BytesIO(data)
    model = read_header(buf, MODEL_MAGIC)
    for layer in model.param_layers():
        layer.weight = read_array(buf, layer.weight.size).reshape(layer.weight.shape)
        layer.bias = read_array(buf, layer.bias.size)
    if buf.read(1):
        raise FormatError("trailing bytes after payload")
    return model


def save_model(model: Model, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


__all__ = ["FormatError", "MODEL_MAGIC", "load_model", "model_from_bytes", "model_to_bytes",
           "read_array", "read_header", "save_model", "write_header"]
