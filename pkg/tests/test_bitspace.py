import io
import itertools

import numpy as np
import pytest

from tbfa.bitspace import (BitFlipError, BitFlipRecord, BitLocation, Direction, admissible_flip,
                           admissible_mask, apply_flip, bit_gradients, bit_tensor, code_from_bits,
                           diff_locations, dump_flips, get_bit, hamming_distance, load_flips, revert_flip)
from tbfa.quantizer import decode_bits, quantize_model
from tbfa.tensor_core import Dense, Model, build_mlp


def qmodel_from_codes(codes, delta_w=0.1, n_bits=4):
    codes = np.asarray(codes)
    model = Model([Dense(codes.size, 1, np.zeros((1, codes.size)))], (codes.size,))
    qm = quantize_model(model, n_bits)
    qm.layers[0].delta_w = delta_w
    for i, c in enumerate(codes):
        qm.set_code(0, i, int(c))
    return qm


def flip(qm, layer, w, pos):
    old = get_bit(qm, BitLocation(layer, w, pos))
    rec = BitFlipRecord(BitLocation(layer, w, pos), old, 1 - old)
    apply_flip(qm, rec)
    return rec


def check_consistent(qm):
    for q in qm.layers:
        bits = bit_tensor(q)
        for row, code in zip(bits, q.codes.reshape(-1)):
            assert decode_bits(row[::-1].tolist(), q.n_bits) == code


def test_bit_gradient_example():
    assert bit_gradients(2.0, 0.1, 4).tolist() == pytest.approx([0.2, 0.4, 0.8, -1.6])
    assert not bit_gradients(0.0, 0.1, 4).any()


def test_bit_gradient_signs():
    rng = np.random.default_rng(0)
    g = rng.normal(size=(50, 3))
    for n in range(2, 9):
        bg = bit_gradients(g, 0.03, n)
        expect = np.sign(g)[..., None] * np.array([1] * (n - 1) + [-1])
        assert np.array_equal(np.sign(bg), expect)


def test_flip_and_measure_linear():
    # loss = c * w is linear, so flipping bit i moves it by exactly the bit gradient times (new - old)
    rng = np.random.default_rng(1)
    for _ in range(30):
        n = int(rng.integers(2, 9))
        dw, c = rng.uniform(0.01, 1), rng.normal()
        code = int(rng.integers(-(2 ** (n - 1)), 2 ** (n - 1)))
        qm = qmodel_from_codes([code], dw, n)
        bg = bit_gradients(c, dw, n)
        for pos in range(n):
            before = c * qm.model.layers[0].weight[0, 0]
            rec = flip(qm, 0, 0, pos)
            after = c * qm.model.layers[0].weight[0, 0]
            assert after - before == pytest.approx(bg[pos] * (rec.new_bit - rec.old_bit), abs=1e-12)
            revert_flip(qm, rec)


@pytest.mark.parametrize("bit,grad,direction,expected", [
    (1, 0.8, Direction.DESCENT, 0),
    (0, 0.8, Direction.DESCENT, None),
    (0, -0.5, Direction.DESCENT, 1),
    (0, -0.5, Direction.ASCENT, None),
    (1, -0.5, Direction.ASCENT, 0),
    (0, 0.0, Direction.DESCENT, None),
    (1, 0.0, Direction.ASCENT, None),
])
def test_admissible_flip(bit, grad, direction, expected):
    assert admissible_flip(bit, grad, direction) == expected


def test_admissible_mask_matches_scalar():
    rng = np.random.default_rng(2)
    bits = rng.integers(0, 2, size=(40, 5))
    grads = rng.normal(size=(40, 5)) * rng.integers(0, 2, size=(40, 5))
    for d in Direction:
        mask = admissible_mask(bits, grads, d)
        for b, g, m in zip(bits.ravel(), grads.ravel(), mask.ravel()):
            assert m == (admissible_flip(int(b), float(g), d) is not None)


def test_sign_bit_flip_example():
    qm = qmodel_from_codes([5], 0.1, 4)
    assert bit_tensor(qm.layers[0])[0].tolist() == [1, 0, 1, 0]
    w0 = qm.model.layers[0].weight[0, 0]
    rec = BitFlipRecord(BitLocation(0, 0, 3), 0, 1)
    apply_flip(qm, rec)
    assert qm.layers[0].codes[0, 0] == -3
    assert qm.model.layers[0].weight[0, 0] - w0 == pytest.approx(-0.8)


def test_apply_revert_identity():
    qm = quantize_model(build_mlp(4, [5], 3, seed=0), 6)
    pristine = qm.copy()
    rng = np.random.default_rng(3)
    for _ in range(100):
        layer = int(rng.integers(qm.n_layers))
        rec = flip(qm, layer, int(rng.integers(qm.layers[layer].size)), int(rng.integers(6)))
        revert_flip(qm, rec)
        assert qm.same_state(pristine)
        assert np.array_equal(qm.model.layers[0].weight, pristine.model.layers[0].weight)


def test_random_flip_sequences_stay_consistent():
    rng = np.random.default_rng(4)
    for n in (2, 4, 8):
        qm = quantize_model(build_mlp(3, [4], 2, seed=n), n)
        for _ in range(60):
            layer = int(rng.integers(qm.n_layers))
            flip(qm, layer, int(rng.integers(qm.layers[layer].size)), int(rng.integers(n)))
            check_consistent(qm)
            for q, lay in zip(qm.layers, qm.model.param_layers()):
                assert np.array_equal(lay.weight, q.dequantize())


def test_stale_record_rejected():
    qm = qmodel_from_codes([5, 1])
    before = qm.copy()
    with pytest.raises(BitFlipError):
        apply_flip(qm, BitFlipRecord(BitLocation(0, 0, 0), 0, 1))  # bit 0 of 5 is already 1
    with pytest.raises(BitFlipError):
        revert_flip(qm, BitFlipRecord(BitLocation(0, 1, 1), 0, 1))
    assert qm.same_state(before)
    with pytest.raises(IndexError):
        get_bit(qm, BitLocation(0, 2, 0))
    with pytest.raises(ValueError):
        BitFlipRecord(BitLocation(0, 0, 0), 1, 1)


def test_code_from_bits():
    for n in range(2, 9):
        for code in range(-(2 ** (n - 1)), 2 ** (n - 1)):
            qm = qmodel_from_codes([code], n_bits=n)
            assert code_from_bits(bit_tensor(qm.layers[0])[0], n) == code


def test_hamming_examples():
    qm = quantize_model(build_mlp(4, [5], 3, seed=1), 4)
    other = qm.copy()
    assert hamming_distance(qm, other) == 0
    locs = [(0, 0, 0), (0, 3, 2), (1, 4, 3), (1, 0, 1)]
    for loc in locs:
        flip(other, *loc)
    assert hamming_distance(qm, other) == 4
    assert diff_locations(qm, other) == sorted(BitLocation(*loc) for loc in locs)
    flip(other, 0, 0, 0)
    assert hamming_distance(qm, other) == 3
    with pytest.raises(ValueError):
        hamming_distance(qm, quantize_model(build_mlp(4, [6], 3), 4))


def test_hamming_is_metric():
    rng = np.random.default_rng(5)
    base = quantize_model(build_mlp(3, [4], 2, seed=2), 5)
    models = []
    for _ in range(6):
        m = base.copy()
        for _ in range(int(rng.integers(0, 12))):
            layer = int(rng.integers(2))
            flip(m, layer, int(rng.integers(m.layers[layer].size)), int(rng.integers(5)))
        models.append(m)
    for a, b, c in itertools.product(models, repeat=3):
        assert hamming_distance(a, b) == hamming_distance(b, a)
        assert hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c)
        assert (hamming_distance(a, b) == 0) == a.same_state(b)


def test_flip_records_json_lines():
    recs = [BitFlipRecord(BitLocation(0, 3, 1), 0, 1, -0.25, 0),
            BitFlipRecord(BitLocation(2, 17, 7), 1, 0, 3.5e-3, 1)]
    buf = io.StringIO()
    dump_flips(recs, buf)
    assert len(buf.getvalue().splitlines()) == 2
    buf.seek(0)
    assert load_flips(buf) == recs
