"""Quantize a small layer, look at its two's-complement bits, and flip one.

Run: python3 demos/01_quantize_and_encode.py
"""
import numpy as np

from tbfa import BitFlipRecord, BitLocation, apply_flip, bit_tensor, quantize_model, revert_flip
from tbfa.quantizer import encode_code, quantize_layer
from tbfa.tensor_core import Dense, Model

w = np.array([0.5, -0.25, 0.3, -0.7])
q = quantize_layer(w, 4)
print("weights      ", w)
print("step size     ", q.delta_w)
print("codes        ", q.codes)
print("dequantized  ", q.dequantize())
for c in q.codes:
    print(f"  code {c:+d} -> bits (MSB first) {encode_code(int(c), 4)}")

# The same weights as a one-layer model, so a flip shows up in the float weights.
model = Model([Dense(4, 1, w[None, :])], (4,))
qm = quantize_model(model, 4)
print("\nbit tensor (rows = weights, column i = bit i):")
print(bit_tensor(qm.layers[0]))

flip = BitFlipRecord(BitLocation(layer=0, weight_index=0, bit_pos=3), old_bit=0, new_bit=1)
apply_flip(qm, flip)
print("\nafter flipping the sign bit of weight 0:")
print("  code  ", qm.layers[0].codes[0, 0], "(was 5)")
print("  weight", qm.model.layers[0].weight[0, 0], "(moved by -8 steps)")
revert_flip(qm, flip)
print("reverted:", qm.layers[0].codes[0, 0])
