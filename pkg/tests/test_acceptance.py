"""Acceptance criteria, one test each. Every test records a PASS/FAIL line shown in the terminal summary."""
import functools
import time

import numpy as np

from conftest import ACCEPTANCE_LINES, tiny_qmodel
from tbfa.attack import AttackSpec, intra_layer_search, objective_gradients, run_attack
from tbfa.bitspace import (BitLocation, Direction, admissible_flip, apply_flip, bit_gradients,
                           get_bit, hamming_distance)
from tbfa.evaluation import DataSplit, split_data
from tbfa.harness import layer_histogram, run_trials
from tbfa.memsim import PhysicalAddress, deploy_with_research, feasible, generate_profile, layout, total_pages
from tbfa.objectives import NTo1, OneToOne, OneToOneStealthy, Untargeted
from tbfa.quantizer import decode_bits, encode_code, quantize_layer, quantize_model
from tbfa.tensor_core import LabeledBatch, build_cnn, build_mlp, loss_and_gradients

TARGET, SOURCE = 3, 1
SPLIT_SEED = 0
PROFILE_SEED = 0


def criterion(number, limit_s):
    """Run the decorated body, time it, and log one PASS/FAIL line."""
    def wrap(fn):
        @functools.wraps(fn)
        def test(*args, **kwargs):
            start = time.perf_counter()
            detail, ok = "", False
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - start
                assert elapsed < limit_s, f"took {elapsed:.1f}s, limit {limit_s}s"
                ok = True
            except AssertionError as exc:
                detail = f"{detail} {exc}".strip()
                raise
            finally:
                elapsed = time.perf_counter() - start
                ACCEPTANCE_LINES.append(f"C{number} {'PASS' if ok else 'FAIL'} ({elapsed:.2f}s) {detail}")
        return test
    return wrap


@criterion(1, 1.0)
def test_c01_encoding_bijection():
    total = 0
    for n in (2, 4, 6, 8):
        for code in range(-(2 ** (n - 1)), 2 ** (n - 1)):
            assert decode_bits(encode_code(code, n), n) == code
            total += 1
    return f"{total} codes round-trip"


@criterion(2, 1.0)
def test_c02_quantizer_bound():
    rng = np.random.default_rng(0)
    worst = 0.0
    for n in range(2, 9):
        w = rng.normal(scale=0.7, size=10_000)
        q = quantize_layer(w, n)
        err = np.abs(w - q.dequantize()).max()
        assert err <= q.delta_w / 2 + 1e-12
        worst = max(worst, err / q.delta_w)
    return f"max error {worst:.4f}*delta_w over 10^4 weights per N"


def _fd_check(model, x, y, rng, eps=1e-4):
    _, grads = loss_and_gradients(model, x, y)
    for layer, (dw, _) in zip(model.param_layers(), grads):
        for idx in rng.choice(layer.weight.size, size=min(6, layer.weight.size), replace=False):
            flat = layer.weight.reshape(-1)
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_and_gradients(model, x, y)[0]
            flat[idx] = orig - eps
            down = loss_and_gradients(model, x, y)[0]
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            assert abs(fd - dw.reshape(-1)[idx]) <= 1e-3 * abs(fd) + 1e-8, (fd, dw.reshape(-1)[idx])


@criterion(3, 30.0)
def test_c03_gradient_soundness():
    rng = np.random.default_rng(1)
    for i in range(20):
        if i % 2:
            model = build_cnn((1, 6, 6), (2,), 3, seed=i)
            x = rng.normal(size=(4, 1, 6, 6))
        else:
            model = build_mlp(5, [7, 4], 3, seed=i)
            x = rng.normal(size=(6, 5))
        y = rng.integers(0, 3, size=len(x))
        _fd_check(model, x, y, rng)
        _, grads = loss_and_gradients(model, x, y)
        for dw, _ in grads:
            bg = bit_gradients(dw, 0.05, 8)
            assert np.array_equal(np.sign(bg), np.sign(dw)[..., None] * np.array([1] * 7 + [-1]))
    return "20 models (10 MLP, 10 CNN) match central differences; bit-gradient signs exact"


def _oracle_bit(qm, layer, grad, direction):
    q = qm.layers[layer]
    g = np.asarray(grad).reshape(-1)
    best, mag = None, -1.0
    for w in range(q.size):
        bg = bit_gradients(g[w], q.delta_w, q.n_bits)
        for pos in range(q.n_bits):
            loc = BitLocation(layer, w, pos)
            if admissible_flip(get_bit(qm, loc), bg[pos], direction) is not None and abs(bg[pos]) > mag:
                best, mag = loc, abs(bg[pos])
    return best


@criterion(4, 120.0)
def test_c04_search_oracle_equivalence():
    iterations = 0
    for seed in range(12):
        qm, batch = tiny_qmodel(100 + seed)
        assert qm.total_bits <= 1000 and qm.n_bits == 4
        variant = Untargeted() if seed % 3 == 2 else NTo1(seed % 4)
        report = run_attack(qm, AttackSpec(variant, max_flips=12), DataSplit(batch, batch, batch))
        state = qm.copy()
        for rec, found in zip(report.flips, report.candidates):
            _, grads = objective_gradients(state, variant, batch)
            expect = [_oracle_bit(state, layer, grads[layer], variant.direction) for layer in range(state.n_layers)]
            assert [c.record.location for c in found] == [e for e in expect if e is not None]
            winner = next(c for c in found if c.record == rec)
            others = [c.loss for c in found]
            if variant.direction is Direction.DESCENT:
                assert winner.loss <= min(others)
            else:
                assert winner.loss >= max(others)
            apply_flip(state, rec)
            iterations += 1
    return f"12 models, {iterations} iterations agree with exhaustive enumeration"


def _check_one_flip(qm, report, batch):
    state = qm.copy()
    for rec in report.flips:
        prev = state.copy()
        _, grads = objective_gradients(state, report.spec.variant, batch)
        for layer in range(state.n_layers):
            intra_layer_search(state, layer, report.spec.variant, batch, grads[layer], n=3)
        assert state.same_state(prev)
        apply_flip(state, rec)
        assert hamming_distance(prev, state) == 1
    assert state.same_state(report.model)


@criterion(5, 120.0)
def test_c05_one_flip_per_iteration(victim):
    runs = 0
    for seed in range(6):
        qm, batch = tiny_qmodel(200 + seed)
        for variant in (NTo1(seed % 4), Untargeted(), OneToOneStealthy(0, 1)):
            report = run_attack(qm, AttackSpec(variant, max_flips=10), DataSplit(batch, batch, batch))
            _check_one_flip(qm, report, batch)
            runs += 1
    split = split_data(victim.test, OneToOne(SOURCE, TARGET), SPLIT_SEED)
    report = run_attack(victim.qmodel, AttackSpec(OneToOne(SOURCE, TARGET)), split)
    _check_one_flip(victim.qmodel, report, split.attack_batch)
    return f"{runs + 1} runs: each iteration changes exactly one bit, profiling restores the rest"


@criterion(6, 300.0)
def test_c06_attack_efficacy(victim):
    assert victim.quantized_accuracy >= 0.95
    results = {}
    for variant in (NTo1(TARGET), OneToOne(SOURCE, TARGET), OneToOneStealthy(SOURCE, TARGET)):
        split = split_data(victim.test, variant, SPLIT_SEED)
        results[variant.name] = run_attack(victim.qmodel, AttackSpec(variant), split)
    n1, o1, st = results["n-to-1"], results["1-to-1"], results["1-to-1-stealthy"]
    detail = (f"clean {victim.quantized_accuracy:.3f}; n-to-1 {n1.n_flips} flips ASR {n1.asr:.4f}; "
              f"1-to-1 {o1.n_flips} flips ASR {o1.asr:.4f}; stealthy {st.n_flips} flips ASR {st.asr:.4f} "
              f"TA {st.clean_ta:.3f}->{st.post_attack_ta:.3f}")
    print(detail)
    assert n1.asr >= 0.99 and n1.n_flips <= 50, detail
    assert o1.asr == 1.0 and o1.n_flips <= 25, detail
    assert st.asr >= 0.90 and st.clean_ta - st.post_attack_ta <= 0.20 and st.n_flips <= 60, detail
    return detail


@criterion(7, 600.0)
def test_c07_relative_difficulty(victim):
    seeds = range(5)
    n1 = run_trials(victim.qmodel, victim.test, AttackSpec(NTo1(TARGET)), seeds)
    o1 = run_trials(victim.qmodel, victim.test, AttackSpec(OneToOne(SOURCE, TARGET)), seeds)
    detail = f"1-to-1 {o1.flips[0]:.1f}±{o1.flips[1]:.1f} vs n-to-1 {n1.flips[0]:.1f}±{n1.flips[1]:.1f} flips"
    assert o1.flips[0] <= n1.flips[0], detail
    return detail


@criterion(8, 300.0)
def test_c08_last_layer_concentration(victim):
    variant = OneToOneStealthy(SOURCE, TARGET)
    split = split_data(victim.test, variant, SPLIT_SEED)
    report = run_attack(victim.qmodel, AttackSpec(variant), split)
    frac = layer_histogram(report).last_layer_fraction
    detail = f"stealthy last-layer fraction {frac:.2f} of {report.n_flips} flips"
    assert frac >= 0.70, detail
    last = victim.qmodel.n_layers - 1
    for v in (variant, OneToOne(SOURCE, TARGET), NTo1(TARGET)):
        s = split_data(victim.test, v, SPLIT_SEED)
        r = run_attack(victim.qmodel, AttackSpec(v, protect_last_layer=True), s)
        assert r.verdict in ("achieved", "stagnation", "budget", "exhausted")
        assert all(f.location.layer != last for f in r.flips)
        detail += f"; protected {v.name}: {r.verdict} after {r.n_flips}"
    return detail


@criterion(9, 300.0)
def test_c09_deployment(victim):
    qm = victim.qmodel
    boundary = quantize_model(build_mlp(50, [90], 10, seed=0), 8)
    for loc, expect in [(BitLocation(0, 0, 0), (0, 0)), (BitLocation(0, 4096, 0), (1, 0)),
                        (BitLocation(1, 500, 3), (1, 7235))]:
        assert layout(boundary, loc) == PhysicalAddress(*expect)
    variant = OneToOne(SOURCE, TARGET)
    split = split_data(victim.test, variant, SPLIT_SEED)
    spec = AttackSpec(variant)
    plain = run_attack(qm, spec, split)
    pages = total_pages(qm)
    full, res_full = deploy_with_research(qm, spec, split, generate_profile(pages, 1.0, PROFILE_SEED))
    assert full.flips == plain.flips and full.model.same_state(plain.model) and not res_full.infeasible
    profile = generate_profile(pages, 0.3, PROFILE_SEED)
    report, result = deploy_with_research(qm, spec, split, profile)
    detail = (f"density 0.3: {report.verdict} with {report.n_flips} flips vs {plain.n_flips} unconstrained "
              f"(extra {result.extra_flips_used}, {result.rounds} rounds)")
    assert report.achieved, detail
    assert all(feasible(f, qm, profile) for f in result.realized)
    return detail


def _synthetic(n_classes, per_class):
    labels = np.random.default_rng(0).permutation(np.repeat(np.arange(n_classes), per_class))
    return LabeledBatch(np.zeros((labels.size, 1)), labels)


@criterion(10, 60.0)
def test_c10_split_protocol():
    cifar, imagenet = _synthetic(10, 1000), _synthetic(1000, 50)
    checks = [
        (cifar, OneToOne(2, 5), False, (500, 500, 9000)),
        (cifar, OneToOneStealthy(2, 5), False, (1000, 500, 8500)),
        (imagenet, OneToOne(7, 9), True, (25, 25, 50000)),
        (imagenet, OneToOne(7, 9), False, (25, 25, 49950)),
    ]
    for data, variant, full, sizes in checks:
        s = split_data(data, variant, 0, ta_on_full_test_set=full)
        assert s.sizes() == sizes
        a, h = set(s.attack_index.tolist()), set(s.asr_index.tolist())
        assert not a & h
        assert (data.labels[s.asr_index] == variant.source).all()
        if not full:
            t = set(s.ta_index.tolist())
            assert not t & a and not t & h
            assert (data.labels[s.ta_index] != variant.source).all()
    n1 = split_data(cifar, NTo1(5), 0)
    assert n1.sizes() == (128, 10000, 10000)
    return "500/500/9000, 1000/500/8500, 25/25/50000 (49950 excluding source) and disjointness hold"
