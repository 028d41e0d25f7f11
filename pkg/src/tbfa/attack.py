"""Progressive bit search: per-layer gradient ranking, then a cross-layer loss comparison.

Each iteration computes weight gradients of the objective on the attack
batch, picks in every unprotected layer the admissible bit with the
largest gradient magnitude, profiles the loss with that single bit
flipped, and commits the best profiled candidate. One bit changes per
iteration.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .bitspace import (BitFlipRecord, BitLocation, Direction, apply_flip, bit_gradients, bit_tensor,
                       admissible_mask, get_bit, hamming_distance, revert_flip)
from .evaluation import DataSplit, evaluate_asr, evaluate_ta
from .objectives import Untargeted, Variant, variant_from_dict
from .quantizer import QuantizedModel
from .tensor_core import LabeledBatch, forward, loss_and_gradients

log = logging.getLogger(__name__)


class SearchExhausted(RuntimeError):
    """No layer offers an admissible, unfrozen bit."""


@dataclass(frozen=True)
class AttackSpec:
    variant: Variant
    asr_threshold: float = 0.9999
    stagnation_iters: int = 3
    max_flips: int = 100
    candidates_per_layer: int = 1
    frozen: frozenset = frozenset()
    protect_last_layer: bool = False

    def __post_init__(self):
        if not 0 < self.asr_threshold <= 1:
            raise ValueError("asr_threshold must lie in (0, 1]")
        if self.stagnation_iters < 1:
            raise ValueError("stagnation_iters must be >= 1")
        if self.max_flips < 0:
            raise ValueError("max_flips must be >= 0")
        if self.candidates_per_layer < 1:
            raise ValueError("candidates_per_layer must be >= 1")
        object.__setattr__(self, "frozen", frozenset(self.frozen))

    @property
    def direction(self) -> Direction:
        return self.variant.direction

    def to_dict(self) -> dict:
        d = self.variant.to_dict()
        d.update(asr_threshold=self.asr_threshold, stagnation_iters=self.stagnation_iters,
                 max_flips=self.max_flips, candidates_per_layer=self.candidates_per_layer,
                 protect_last_layer=self.protect_last_layer,
                 frozen=[[f.layer, f.weight_index, f.bit_pos] for f in sorted(self.frozen)])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        known = {"variant", "source", "target", "asr_threshold", "stagnation_iters", "max_flips",
                 "candidates_per_layer", "protect_last_layer", "frozen"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown attack config keys: {sorted(unknown)}")
        kwargs = {k: d[k] for k in ("asr_threshold", "stagnation_iters", "max_flips",
                                    "candidates_per_layer", "protect_last_layer") if k in d}
        frozen = frozenset(BitLocation(*map(int, f)) for f in d.get("frozen", []))
        return cls(variant_from_dict(d), frozen=frozen, **kwargs)


@dataclass
class Candidate:
    record: BitFlipRecord
    loss: float

    @property
    def layer(self) -> int:
        return self.record.location.layer


@dataclass
class AttackReport:
    spec: AttackSpec
    flips: list = field(default_factory=list)
    loss_trace: list = field(default_factory=list)
    asr_trace: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    asr: float = 0.0
    post_attack_ta: float = 0.0
    clean_asr: float = 0.0
    clean_ta: float = 0.0
    hamming: int = 0
    achieved: bool = False
    verdict: str = ""
    n_layers: int = 0
    model: QuantizedModel | None = field(default=None, repr=False)

    @property
    def n_flips(self) -> int:
        return len(self.flips)

    @property
    def histogram(self) -> dict:
        counts = {layer: 0 for layer in range(self.n_layers)}
        for f in self.flips:
            counts[f.location.layer] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "flips": [f.to_dict() for f in self.flips],
            "loss_trace": list(self.loss_trace),
            "asr_trace": list(self.asr_trace),
            "candidates": [[{**c.record.to_dict(), "loss": c.loss} for c in it] for it in self.candidates],
            "asr": self.asr, "post_attack_ta": self.post_attack_ta,
            "clean_asr": self.clean_asr, "clean_ta": self.clean_ta,
            "hamming": self.hamming, "achieved": self.achieved, "verdict": self.verdict,
            "n_layers": self.n_layers, "n_flips": self.n_flips,
            "histogram": {str(k): v for k, v in self.histogram.items()},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackReport":
        return cls(
            spec=AttackSpec.from_dict(d["spec"]),
            flips=[BitFlipRecord.from_dict(f) for f in d["flips"]],
            loss_trace=list(d["loss_trace"]), asr_trace=list(d.get("asr_trace", [])),
            candidates=[[Candidate(BitFlipRecord.from_dict(c), c["loss"]) for c in it]
                        for it in d.get("candidates", [])],
            asr=d["asr"], post_attack_ta=d["post_attack_ta"], clean_asr=d.get("clean_asr", 0.0),
            clean_ta=d.get("clean_ta", 0.0), hamming=d["hamming"], achieved=d["achieved"],
            verdict=d.get("verdict", ""), n_layers=d["n_layers"])


def attack_loss(qmodel: QuantizedModel, variant: Variant, batch: LabeledBatch) -> float:
    return variant.loss(forward(qmodel.model, batch), batch.labels)


def objective_gradients(qmodel: QuantizedModel, variant: Variant, batch: LabeledBatch):
    """Loss and weight gradients of the objective at the current bits."""
    loss, grads = loss_and_gradients(qmodel.model, batch.inputs, variant.targets(batch.labels))
    return loss, [dw for dw, _ in grads]


def _frozen_mask(frozen, layer, shape):
    mask = np.zeros(shape, dtype=bool)
    for loc in frozen:
        if loc.layer == layer:
            mask[loc.weight_index, loc.bit_pos] = True
    return mask


def rank_layer_bits(qmodel: QuantizedModel, layer: int, weight_grad, direction: Direction,
                    frozen=frozenset()):
    """Admissible bits of one layer ordered by descending |bit gradient|.

    Returns ``(order, bits, bit_grads)`` where ``order`` holds flat indices
    ``weight_index * N + bit_pos``; ties keep ascending index order.
    """
    q = qmodel.layers[layer]
    bits = bit_tensor(q)
    bg = bit_gradients(np.asarray(weight_grad).reshape(-1), q.delta_w, q.n_bits)
    ok = admissible_mask(bits, bg, direction) & (bg != 0)
    if frozen:
        ok &= ~_frozen_mask(frozen, layer, bits.shape)
    flat = np.flatnonzero(ok.reshape(-1))
    mags = np.abs(bg.reshape(-1)[flat])
    order = flat[np.argsort(-mags, kind="stable")]
    return order, bits, bg


def intra_layer_search(qmodel: QuantizedModel, layer: int, variant: Variant, batch: LabeledBatch,
                       weight_grad, n: int = 1, frozen=frozenset(), iteration: int = 0):
    """Best candidate bit of ``layer`` with its profiled loss, or ``None``.

    The top-``n`` admissible bits by gradient magnitude are each flipped,
    scored on ``batch`` and restored; the best scoring one is returned.
    """
    order, bits, bg = rank_layer_bits(qmodel, layer, weight_grad, variant.direction, frozen)
    if order.size == 0:
        return None
    nb = qmodel.layers[layer].n_bits
    best = None
    for flat in order[:n]:
        w, pos = divmod(int(flat), nb)
        old = int(bits[w, pos])
        rec = BitFlipRecord(BitLocation(layer, w, pos), old, 1 - old, float(bg[w, pos]), iteration)
        apply_flip(qmodel, rec)
        try:
            loss = attack_loss(qmodel, variant, batch)
        finally:
            revert_flip(qmodel, rec)
        cand = Candidate(rec, loss)
        if best is None or _better(cand.loss, best.loss, variant.direction):
            best = cand
    return best


def _better(a, b, direction):
    return a < b if direction is Direction.DESCENT else a > b


def inter_layer_select(candidates, direction: Direction = Direction.DESCENT) -> Candidate:
    """Lowest profiled loss wins (highest for ascent); ties go to the lower layer."""
    candidates = [c for c in candidates if c is not None]
    if not candidates:
        raise SearchExhausted("no admissible bit in any searchable layer")
    best = None
    for cand in sorted(candidates, key=lambda c: c.layer):
        if best is None or _better(cand.loss, best.loss, direction):
            best = cand
    return best


def _target_of(variant):
    return None if isinstance(variant, Untargeted) else variant.target


def run_attack(qmodel: QuantizedModel, spec: AttackSpec, data: DataSplit) -> AttackReport:
    """Run the iterative bit search on a private copy of ``qmodel``.

    Stops when ASR reaches ``spec.asr_threshold``, when ASR has not changed
    for ``spec.stagnation_iters`` successive iterations, when the flip
    budget is spent, or when no admissible bit is left. The attacked model
    is returned on ``report.model``.
    """
    variant = spec.variant
    n_classes = qmodel.model.n_classes
    variant.validate(n_classes)
    for loc in spec.frozen:
        get_bit(qmodel, loc)
    model = qmodel.copy()
    target = _target_of(variant)
    searchable = list(range(model.n_layers))
    if spec.protect_last_layer:
        searchable = searchable[:-1]

    report = AttackReport(spec=spec, n_layers=model.n_layers, model=model)
    asr = evaluate_asr(model, data.asr_eval, target)
    report.clean_asr = asr
    report.clean_ta = evaluate_ta(model, data.ta_eval)
    batch = data.attack_batch
    stagnant = 0
    verdict = ""
    if asr >= spec.asr_threshold:
        verdict = "achieved"
    while not verdict:
        if len(report.flips) >= spec.max_flips:
            verdict = "budget"
            break
        it = len(report.flips)
        _, grads = objective_gradients(model, variant, batch)
        cands = [intra_layer_search(model, layer, variant, batch, grads[layer],
                                    spec.candidates_per_layer, spec.frozen, it)
                 for layer in searchable]
        found = [c for c in cands if c is not None]
        if not found:
            verdict = "exhausted"
            break
        winner = inter_layer_select(found, variant.direction)
        apply_flip(model, winner.record)
        report.flips.append(winner.record)
        report.loss_trace.append(winner.loss)
        report.candidates.append(found)
        prev, asr = asr, evaluate_asr(model, data.asr_eval, target)
        report.asr_trace.append(asr)
        log.debug("iter %d flip %s loss %.5f asr %.4f", it, winner.record.location, winner.loss, asr)
        if asr >= spec.asr_threshold:
            verdict = "achieved"
        elif asr == prev:
            stagnant += 1
            if stagnant >= spec.stagnation_iters:
                verdict = "stagnation"
        else:
            stagnant = 0

    report.verdict = verdict
    report.achieved = verdict == "achieved"
    report.asr = asr
    report.post_attack_ta = evaluate_ta(model, data.ta_eval)
    report.hamming = hamming_distance(qmodel, model)
    return report


def replay_attack(qmodel: QuantizedModel, spec: AttackSpec, data: DataSplit, flips) -> AttackReport:
    """Apply a given flip sequence to a copy of ``qmodel`` and score it like ``run_attack``.

    Records whose expected old bit no longer matches are skipped.
    """
    variant = spec.variant
    model = qmodel.copy()
    target = _target_of(variant)
    report = AttackReport(spec=spec, n_layers=model.n_layers, model=model)
    report.clean_asr = evaluate_asr(model, data.asr_eval, target)
    report.clean_ta = evaluate_ta(model, data.ta_eval)
    asr = report.clean_asr
    for i, rec in enumerate(flips):
        if get_bit(model, rec.location) != rec.old_bit:
            log.warning("skipping stale flip %s", rec.location)
            continue
        rec = replace(rec, iteration=len(report.flips))
        apply_flip(model, rec)
        report.flips.append(rec)
        report.loss_trace.append(attack_loss(model, variant, data.attack_batch))
        asr = evaluate_asr(model, data.asr_eval, target)
        report.asr_trace.append(asr)
    report.asr = asr
    report.achieved = asr >= spec.asr_threshold
    report.verdict = "achieved" if report.achieved else "replayed"
    report.post_attack_ta = evaluate_ta(model, data.ta_eval)
    report.hamming = hamming_distance(qmodel, model)
    return report
