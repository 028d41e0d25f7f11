"""Layer-wise symmetric N-bit weight quantization and two's-complement codes.

A quantized layer stores integer codes and a step size; the real weight is
``code * delta_w``. Codes are produced in ``[-(2^(N-1)-1), 2^(N-1)-1]`` but
any N-bit two's-complement value, including ``-2^(N-1)``, is a legal
stored code (bit flips can reach it).
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .tensor_core import Model
from .tensor_core.fileformat import FormatError, read_array, read_header, write_header

QUANT_MAGIC = b"TBFAQMD\0"
MIN_BITS, MAX_BITS = 2, 8


@dataclass(frozen=True)
class QuantConfig:
    n_bits: int = 8

    def __post_init__(self):
        check_bits(self.n_bits)


def check_bits(n_bits):
    if int(n_bits) != n_bits or not MIN_BITS <= n_bits <= MAX_BITS:
        raise ValueError(f"n_bits must be an integer in [{MIN_BITS}, {MAX_BITS}], got {n_bits}")


def qmax(n_bits: int) -> int:
    return 2 ** (n_bits - 1) - 1


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def compute_step_size(float_weights, n_bits: int) -> float:
    """``max|W| / (2^(N-1) - 1)``, or 1.0 for an all-zero layer."""
    check_bits(n_bits)
    w = np.asarray(float_weights, dtype=np.float64)
    if w.size == 0 or not np.all(np.isfinite(w)):
        raise ValueError("weights must be nonempty and finite")
    peak = float(np.abs(w).max())
    if peak == 0.0:
        return 1.0
    return peak / qmax(n_bits)


@dataclass
class QuantizedLayer:
    codes: np.ndarray
    delta_w: float
    n_bits: int

    def __post_init__(self):
        check_bits(self.n_bits)
        self.codes = np.asarray(self.codes, dtype=np.int64)
        if not self.delta_w > 0:
            raise ValueError("delta_w must be positive")
        lo, hi = -(2 ** (self.n_bits - 1)), 2 ** (self.n_bits - 1) - 1
        if self.codes.size and (self.codes.min() < lo or self.codes.max() > hi):
            raise ValueError(f"codes outside the {self.n_bits}-bit two's-complement range")

    def dequantize(self) -> np.ndarray:
        return self.codes * self.delta_w

    @property
    def size(self) -> int:
        return self.codes.size

    def copy(self) -> "QuantizedLayer":
        return QuantizedLayer(self.codes.copy(), self.delta_w, self.n_bits)


def quantize_layer(float_weights, n_bits: int) -> QuantizedLayer:
    w = np.asarray(float_weights, dtype=np.float64)
    dw = compute_step_size(w, n_bits)
    m = qmax(n_bits)
    codes = np.clip(round_half_away(w / dw), -m, m).astype(np.int64)
    return QuantizedLayer(codes, dw, n_bits)


def encode_code(code: int, n_bits: int) -> list[int]:
    """Two's-complement bits of ``code``, most significant first: ``[b_{N-1}, ..., b_0]``."""
    check_bits(n_bits)
    code = int(code)
    if not -(2 ** (n_bits - 1)) <= code <= 2 ** (n_bits - 1) - 1:
        raise ValueError(f"code {code} not representable in {n_bits} bits")
    u = code & ((1 << n_bits) - 1)
    return [(u >> i) & 1 for i in range(n_bits - 1, -1, -1)]


def decode_bits(bits, n_bits: int) -> int:
    """Inverse of ``encode_code``: ``-2^(N-1) b_{N-1} + sum_i 2^i b_i``."""
    bits = [int(b) for b in bits]
    if len(bits) != n_bits or any(b not in (0, 1) for b in bits):
        raise ValueError(f"expected {n_bits} bits in {{0, 1}}")
    value = -(2 ** (n_bits - 1)) * bits[0]
    for pos, b in enumerate(reversed(bits[1:])):
        value += b << pos
    return value


class QuantizedModel:
    """A model whose parameterized layers hold dequantized codes.

    ``model`` is a private copy of the float skeleton; its weight arrays are
    always exactly ``layers[i].codes * layers[i].delta_w`` so plain
    ``forward``/``backward`` run the quantized network. Biases stay float.
    """

    def __init__(self, model: Model, layers: list[QuantizedLayer]):
        params = model.param_layers()
        if len(params) != len(layers):
            raise ValueError(f"{len(layers)} quantized layers for {len(params)} parameterized layers")
        for p, q in zip(params, layers):
            if p.weight.shape != q.codes.shape:
                raise ValueError(f"code shape {q.codes.shape} does not match weight {p.weight.shape}")
        self.model = model
        self.layers = layers
        self.sync()

    def sync(self):
        for p, q in zip(self.model.param_layers(), self.layers):
            p.weight = q.dequantize().astype(np.float64)

    def set_code(self, layer: int, weight_index: int, code: int):
        q = self.layers[layer]
        q.codes.flat[weight_index] = code
        self.model.param_layers()[layer].weight.flat[weight_index] = code * q.delta_w

    @property
    def n_bits(self) -> int:
        bits = {q.n_bits for q in self.layers}
        if len(bits) != 1:
            raise ValueError("layers use mixed bit-widths")
        return bits.pop()

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def total_weights(self) -> int:
        return sum(q.size for q in self.layers)

    @property
    def total_bits(self) -> int:
        return sum(q.size * q.n_bits for q in self.layers)

    def copy(self) -> "QuantizedModel":
        return QuantizedModel(self.model.copy(), [q.copy() for q in self.layers])

    def same_state(self, other: "QuantizedModel") -> bool:
        return all(np.array_equal(a.codes, b.codes) for a, b in zip(self.layers, other.layers))


def quantize_model(model: Model, config) -> QuantizedModel:
    """Quantize every parameterized layer; ``config`` is a ``QuantConfig`` or an int bit-width."""
    n_bits = config.n_bits if isinstance(config, QuantConfig) else int(config)
    check_bits(n_bits)
    skeleton = model.copy()
    layers = [quantize_layer(p.weight, n_bits) for p in skeleton.param_layers()]
    return QuantizedModel(skeleton, layers)


def quantized_to_bytes(qmodel: QuantizedModel) -> bytes:
    """Container: float-model header, then per layer ``u8 n_bits, f64 delta_w, int8 codes, f64 bias``.

    Codes are written as raw two's-complement bytes so the file holds the
    attacked bit pattern verbatim.
    """
    buf = io.BytesIO()
    write_header(buf, QUANT_MAGIC, qmodel.model)
    for p, q in zip(qmodel.model.param_layers(), qmodel.layers):
        buf.write(struct.pack("<Bd", q.n_bits, q.delta_w))
        buf.write(q.codes.astype(np.int8).tobytes())
        buf.write(p.bias.astype("<f8").tobytes())
    return buf.getvalue()


def quantized_from_bytes(data: bytes) -> QuantizedModel:
    buf = io.BytesIO(data)
    model = read_header(buf, QUANT_MAGIC)
    layers = []
    for p in model.param_layers():
        raw = buf.read(9)
        if len(raw) != 9:
            raise FormatError("truncated quantized payload")
        n_bits, delta_w = struct.unpack("<Bd", raw)
        codes = read_array(buf, p.weight.size, "i1").astype(np.int64).reshape(p.weight.shape)
        p.bias = read_array(buf, p.bias.size)
        layers.append(QuantizedLayer(codes, delta_w, n_bits))
    if buf.read(1):
        raise FormatError("trailing bytes after payload")
    return QuantizedModel(model, layers)


def weight_bytes(qmodel: QuantizedModel) -> bytes:
    """All codes as consecutive two's-complement bytes in layer/flat order (the simulated weight file)."""
    return b"".join(q.codes.astype(np.int8).tobytes() for q in qmodel.layers)


def save_quantized(qmodel: QuantizedModel, path):
    with open(path, "wb") as fh:
        fh.write(quantized_to_bytes(qmodel))


def load_quantized(path) -> QuantizedModel:
    with open(path, "rb") as fh:
        return quantized_from_bytes(fh.read())
