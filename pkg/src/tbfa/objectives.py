"""Attack objectives.

Every objective is a mean cross-entropy against a rewritten label vector,
so each variant is described by how it rewrites labels (``targets``) and
whether the search descends or ascends that loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitspace import Direction
from .tensor_core import cross_entropy


@dataclass(frozen=True)
class Variant:
    name = "variant"
    direction = Direction.DESCENT
    source = None
    target = None

    def targets(self, labels) -> np.ndarray:
        raise NotImplementedError

    def loss(self, logits, labels) -> float:
        return cross_entropy(logits, self.targets(labels))

    def validate(self, n_classes: int):
        for cls in (self.source, self.target):
            if cls is not None and not 0 <= cls < n_classes:
                raise ValueError(f"class {cls} out of range for {n_classes} classes")

    def to_dict(self) -> dict:
        return {"variant": self.name, "source": self.source, "target": self.target}


@dataclass(frozen=True)
class NTo1(Variant):
    target: int
    name = "n-to-1"

    def targets(self, labels):
        return np.full(len(labels), self.target, dtype=np.int64)


@dataclass(frozen=True)
class OneToOne(Variant):
    source: int
    target: int
    name = "1-to-1"

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("source and target class must differ")

    def targets(self, labels):
        return np.full(len(labels), self.target, dtype=np.int64)


@dataclass(frozen=True)
class OneToOneStealthy(Variant):
    source: int
    target: int
    name = "1-to-1-stealthy"

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("source and target class must differ")

    def targets(self, labels):
        labels = np.asarray(labels, dtype=np.int64)
        return np.where(labels == self.source, self.target, labels)


@dataclass(frozen=True)
class Untargeted(Variant):
    name = "untargeted"
    direction = Direction.ASCENT

    def targets(self, labels):
        return np.asarray(labels, dtype=np.int64)


VARIANTS = {cls.name: cls for cls in (NTo1, OneToOne, OneToOneStealthy, Untargeted)}


def make_variant(name: str, source=None, target=None) -> Variant:
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    if name == "untargeted":
        return Untargeted()
    if target is None:
        raise ValueError(f"variant {name} needs a target class")
    if name == "n-to-1":
        return NTo1(int(target))
    if source is None:
        raise ValueError(f"variant {name} needs a source class")
    return VARIANTS[name](int(source), int(target))


def variant_from_dict(d: dict) -> Variant:
    return make_variant(d["variant"], d.get("source"), d.get("target"))


def loss_n_to_1(logits, target: int) -> float:
    return NTo1(target).loss(logits, np.zeros(len(logits), dtype=np.int64))


def loss_1_to_1(logits, target: int) -> float:
    """Cross-entropy of a source-class batch against the target class."""
    return cross_entropy(logits, np.full(len(logits), target, dtype=np.int64))


def loss_1_to_1_stealthy(logits, true_labels, source: int, target: int) -> float:
    return OneToOneStealthy(source, target).loss(logits, true_labels)


def loss_untargeted(logits, true_labels) -> float:
    """Plain cross-entropy on the true labels; the search maximizes it."""
    return cross_entropy(logits, true_labels)
