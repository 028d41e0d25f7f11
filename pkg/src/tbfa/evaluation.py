"""Test-set splitting for each attack variant and the ASR / TA metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import NTo1, OneToOne, OneToOneStealthy, Untargeted, Variant
from .quantizer import QuantizedModel
from .tensor_core import LabeledBatch, Model, predict

DEFAULT_ATTACK_BATCH = 128


@dataclass
class DataSplit:
    attack_batch: LabeledBatch
    asr_eval: LabeledBatch
    ta_eval: LabeledBatch
    attack_index: np.ndarray | None = None
    asr_index: np.ndarray | None = None
    ta_index: np.ndarray | None = None

    def sizes(self):
        return len(self.attack_batch), len(self.asr_eval), len(self.ta_eval)


def split_data(test_set: LabeledBatch, variant: Variant, seed=0,
               attack_batch_size=DEFAULT_ATTACK_BATCH, ta_on_full_test_set=False) -> DataSplit:
    """Carve a test set into attack batch, ASR-evaluation set and TA-evaluation set.

    N-to-1 / untargeted: a random attack batch, with ASR and TA on the whole set.
    1-to-1: source samples are halved (attack / held-out ASR), TA on every
    non-source sample. Stealthy: the attack batch adds an equal number of
    random non-source samples, which are then left out of TA.

    ``ta_on_full_test_set`` evaluates TA on the entire test set, the
    large-dataset convention where the excluded portion is negligible.
    """
    rng = np.random.default_rng(seed)
    n = len(test_set)
    everything = np.arange(n)
    if isinstance(variant, (NTo1, Untargeted)):
        size = min(attack_batch_size, n)
        attack = np.sort(rng.choice(n, size=size, replace=False))
        return _build(test_set, attack, everything, everything)

    if not isinstance(variant, (OneToOne, OneToOneStealthy)):
        raise TypeError(f"unsupported variant {variant!r}")
    p = variant.source
    src = np.flatnonzero(test_set.labels == p)
    others = np.flatnonzero(test_set.labels != p)
    if src.size < 2:
        raise ValueError(f"source class {p} has {src.size} samples; need at least 2 to halve")
    src = rng.permutation(src)
    half = src.size // 2
    attack, held_out = np.sort(src[:half]), np.sort(src[half:])
    ta = others
    if isinstance(variant, OneToOneStealthy):
        if others.size < half:
            raise ValueError("not enough non-source samples for the stealthy attack batch")
        extra = np.sort(rng.choice(others, size=half, replace=False))
        attack = np.concatenate([attack, extra])
        ta = np.setdiff1d(others, extra)
    if ta_on_full_test_set:
        ta = everything
    return _build(test_set, attack, held_out, ta)


def _build(test_set, attack, asr, ta):
    return DataSplit(test_set.subset(attack), test_set.subset(asr), test_set.subset(ta),
                     np.asarray(attack), np.asarray(asr), np.asarray(ta))


def _as_model(model) -> Model:
    return model.model if isinstance(model, QuantizedModel) else model


def evaluate_asr(model, asr_eval: LabeledBatch, target) -> float:
    """Fraction of ``asr_eval`` predicted as ``target``.

    With ``target=None`` (untargeted attack) this is the misclassification rate.
    """
    if len(asr_eval) == 0:
        raise ValueError("ASR evaluation set is empty")
    pred = predict(_as_model(model), asr_eval)
    if target is None:
        return float(np.mean(pred != asr_eval.labels))
    return float(np.mean(pred == target))


def evaluate_ta(model, ta_eval: LabeledBatch) -> float:
    if len(ta_eval) == 0:
        raise ValueError("TA evaluation set is empty")
    return float(np.mean(predict(_as_model(model), ta_eval) == ta_eval.labels))
