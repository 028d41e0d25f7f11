"""Bit-level view of a quantized model.

Bit positions follow the two's-complement weights: position ``i`` carries
``2^i`` for ``i < N-1`` and the sign bit ``N-1`` carries ``-2^(N-1)``.
Because the code is linear in its bits, ``dL/db_i = dL/dw * delta_w * s_i``
exactly.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .quantizer import QuantizedLayer, QuantizedModel


class BitFlipError(RuntimeError):
    """A flip record does not match the model's current bit."""


class Direction(enum.Enum):
    DESCENT = "descent"
    ASCENT = "ascent"


@dataclass(frozen=True, order=True)
class BitLocation:
    layer: int
    weight_index: int
    bit_pos: int


@dataclass(frozen=True)
class BitFlipRecord:
    location: BitLocation
    old_bit: int
    new_bit: int
    selection_gradient: float = 0.0
    iteration: int = 0

    def __post_init__(self):
        if {self.old_bit, self.new_bit} != {0, 1}:
            raise ValueError("a flip must change a bit from 0 to 1 or from 1 to 0")

    def to_dict(self) -> dict:
        loc = self.location
        return {"iteration": self.iteration, "layer": loc.layer, "weight_index": loc.weight_index,
                "bit_pos": loc.bit_pos, "old": self.old_bit, "new": self.new_bit,
                "grad": self.selection_gradient}

    @classmethod
    def from_dict(cls, d: dict) -> "BitFlipRecord":
        return cls(BitLocation(int(d["layer"]), int(d["weight_index"]), int(d["bit_pos"])),
                   int(d["old"]), int(d["new"]), float(d.get("grad", 0.0)), int(d.get("iteration", 0)))


def dump_flips(flips, fh):
    """Write flips as JSON lines."""
    for f in flips:
        fh.write(json.dumps(f.to_dict()) + "\n")


def load_flips(fh) -> list[BitFlipRecord]:
    return [BitFlipRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def bit_weights(n_bits: int) -> np.ndarray:
    """Place values ``s_i`` for bit positions ``0..N-1``."""
    s = 2.0 ** np.arange(n_bits)
    s[-1] = -s[-1]
    return s


def bit_gradients(weight_grad, delta_w: float, n_bits: int) -> np.ndarray:
    """Per-bit gradients, indexed by bit position (LSB first).

    Works elementwise on arrays: output shape is ``weight_grad.shape + (N,)``.
    """
    g = np.asarray(weight_grad, dtype=np.float64)
    return g[..., None] * delta_w * bit_weights(n_bits)


def bit_tensor(qlayer: QuantizedLayer) -> np.ndarray:
    """``(n_weights, N)`` array of stored bits, column ``i`` = bit position ``i``."""
    u = qlayer.codes.reshape(-1) & ((1 << qlayer.n_bits) - 1)
    return ((u[:, None] >> np.arange(qlayer.n_bits)) & 1).astype(np.int8)


def code_from_bits(bits_row, n_bits: int) -> int:
    return int(np.dot(np.asarray(bits_row, dtype=np.int64), bit_weights(n_bits).astype(np.int64)))


def admissible_flip(current_bit: int, bit_grad: float, direction: Direction = Direction.DESCENT):
    """New bit value if the gradient pushes ``current_bit`` to the other value, else ``None``."""
    step = np.sign(bit_grad)
    if direction is Direction.DESCENT:
        candidate = int(np.clip(current_bit - step, 0, 1))
    else:
        candidate = int(np.clip(current_bit + step, 0, 1))
    return candidate if candidate != current_bit else None


def admissible_mask(bits: np.ndarray, bit_grads: np.ndarray, direction: Direction) -> np.ndarray:
    """Vectorized ``admissible_flip``: True where the bit would change."""
    step = np.sign(bit_grads)
    if direction is Direction.ASCENT:
        step = -step
    return np.clip(bits - step, 0, 1) != bits


def get_bit(qmodel: QuantizedModel, loc: BitLocation) -> int:
    _check_location(qmodel, loc)
    q = qmodel.layers[loc.layer]
    code = int(q.codes.flat[loc.weight_index])
    return ((code & ((1 << q.n_bits) - 1)) >> loc.bit_pos) & 1


def _check_location(qmodel, loc):
    if not 0 <= loc.layer < qmodel.n_layers:
        raise IndexError(f"layer {loc.layer} out of range")
    q = qmodel.layers[loc.layer]
    if not 0 <= loc.weight_index < q.size:
        raise IndexError(f"weight index {loc.weight_index} out of range for layer {loc.layer}")
    if not 0 <= loc.bit_pos < q.n_bits:
        raise IndexError(f"bit position {loc.bit_pos} out of range for {q.n_bits}-bit layer")


def _write_bit(qmodel, loc, expect, value):
    current = get_bit(qmodel, loc)
    if current != expect:
        raise BitFlipError(f"stale flip at {loc}: bit is {current}, record expects {expect}")
    q = qmodel.layers[loc.layer]
    mask = (1 << q.n_bits) - 1
    u = (int(q.codes.flat[loc.weight_index]) & mask) ^ (1 << loc.bit_pos)
    code = u - (1 << q.n_bits) if u >> (q.n_bits - 1) else u
    qmodel.set_code(loc.layer, loc.weight_index, code)


def apply_flip(qmodel: QuantizedModel, flip: BitFlipRecord):
    _write_bit(qmodel, flip.location, flip.old_bit, flip.new_bit)


def revert_flip(qmodel: QuantizedModel, flip: BitFlipRecord):
    _write_bit(qmodel, flip.location, flip.new_bit, flip.old_bit)


def hamming_distance(a: QuantizedModel, b: QuantizedModel) -> int:
    """Number of differing weight bits between two models of identical layout."""
    if a.n_layers != b.n_layers:
        raise ValueError("models have different layer counts")
    total = 0
    for qa, qb in zip(a.layers, b.layers):
        if qa.codes.shape != qb.codes.shape or qa.n_bits != qb.n_bits:
            raise ValueError("models differ in layer shape or bit-width")
        mask = (1 << qa.n_bits) - 1
        diff = (qa.codes.reshape(-1) & mask) ^ (qb.codes.reshape(-1) & mask)
        total += int(sum(int(x).bit_count() for x in diff[diff != 0]))
    return total


def diff_locations(a: QuantizedModel, b: QuantizedModel) -> list[BitLocation]:
    """Every bit location where the two models differ, in ascending order."""
    out = []
    for li, (qa, qb) in enumerate(zip(a.layers, b.layers)):
        ba, bb = bit_tensor(qa), bit_tensor(qb)
        for w, pos in zip(*np.nonzero(ba != bb)):
            out.append(BitLocation(li, int(w), int(pos)))
    return out
