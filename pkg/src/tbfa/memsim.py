"""Simulated deployment of bit flips into DRAM pages.

8-bit weights are laid out one byte per weight, layer after layer, from
page 0 of a dedicated region. A page is 4096 bytes, so a bit inside a page
has an offset in ``0..32767``; bit 0 of each byte is its least significant
bit. Flip profiles say, per (page, offset), which direction a cell can be
flipped in.
"""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .attack import AttackSpec, replay_attack, run_attack
from .bitspace import BitFlipRecord, BitLocation
from .evaluation import DataSplit
from .quantizer import QuantizedModel

log = logging.getLogger(__name__)

PAGE_BYTES = 4096
PAGE_BITS = PAGE_BYTES * 8


class LayoutError(ValueError):
    pass


class Flippability(enum.IntEnum):
    NONE = 0
    ZERO_TO_ONE = 1
    ONE_TO_ZERO = 2
    BOTH = 3


@dataclass(frozen=True, order=True)
class PhysicalAddress:
    page: int
    bit_offset: int

    def __post_init__(self):
        if self.page < 0 or not 0 <= self.bit_offset < PAGE_BITS:
            raise ValueError(f"invalid physical address ({self.page}, {self.bit_offset})")

    @property
    def flat(self) -> int:
        return self.page * PAGE_BITS + self.bit_offset


def _layer_offsets(qmodel):
    return np.concatenate([[0], np.cumsum([q.size for q in qmodel.layers])])


def global_weight_index(qmodel: QuantizedModel, location: BitLocation) -> int:
    return int(_layer_offsets(qmodel)[location.layer]) + location.weight_index


def layout(qmodel: QuantizedModel, location: BitLocation) -> PhysicalAddress:
    if any(q.n_bits != 8 for q in qmodel.layers):
        raise LayoutError("page layout is defined for 8-bit (one byte per weight) models only")
    if not 0 <= location.layer < qmodel.n_layers:
        raise IndexError(f"layer {location.layer} out of range")
    if not 0 <= location.weight_index < qmodel.layers[location.layer].size or not 0 <= location.bit_pos < 8:
        raise IndexError(f"location {location} out of range")
    byte = global_weight_index(qmodel, location)
    return PhysicalAddress(byte // PAGE_BYTES, (byte % PAGE_BYTES) * 8 + location.bit_pos)


def total_pages(qmodel: QuantizedModel) -> int:
    return math.ceil(qmodel.total_weights / PAGE_BYTES)


class FlipProfile:
    """Per-cell flippability for ``total_pages`` pages, drawn from a seed.

    Each cell is flippable with probability ``density``; a flippable cell's
    direction is uniform over {0->1, 1->0, both}. ``exceptions`` override
    single cells and survive serialization.
    """

    def __init__(self, total_pages: int, density: float, seed: int = 0, exceptions=None):
        if not 0.0 <= density <= 1.0:
            raise ValueError("density must lie in [0, 1]")
        self.total_pages = int(total_pages)
        self.density = float(density)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        n = self.total_pages * PAGE_BITS
        flippable = rng.random(n) < self.density
        kinds = rng.integers(1, 4, size=n, dtype=np.int8)
        self._cells = np.where(flippable, kinds, 0).astype(np.int8)
        self.exceptions: dict[PhysicalAddress, Flippability] = {}
        for addr, kind in (exceptions or {}).items():
            self.set(addr, kind)

    def set(self, addr: PhysicalAddress, kind):
        kind = Flippability(kind)
        self._check(addr)
        self.exceptions[addr] = kind
        self._cells[addr.flat] = int(kind)

    def _check(self, addr):
        if addr.page >= self.total_pages:
            raise IndexError(f"page {addr.page} beyond profile of {self.total_pages} pages")

    def query(self, addr: PhysicalAddress) -> Flippability:
        if addr.page >= self.total_pages:
            return Flippability.NONE
        return Flippability(int(self._cells[addr.flat]))

    def flippable_fraction(self) -> float:
        return float(np.mean(self._cells != 0)) if self._cells.size else 0.0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "density": self.density, "total_pages": self.total_pages,
                "exceptions": [{"page": a.page, "offset": a.bit_offset, "kind": k.name.lower()}
                               for a, k in sorted(self.exceptions.items())]}

    @classmethod
    def from_dict(cls, d: dict) -> "FlipProfile":
        exc = {PhysicalAddress(int(e["page"]), int(e["offset"])): Flippability[e["kind"].upper()]
               for e in d.get("exceptions", [])}
        return cls(d["total_pages"], d["density"], d.get("seed", 0), exc)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "FlipProfile":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def generate_profile(total_pages: int, density: float, seed: int = 0) -> FlipProfile:
    return FlipProfile(total_pages, density, seed)


def permits(kind: Flippability, old_bit: int, new_bit: int) -> bool:
    if kind is Flippability.BOTH:
        return True
    if kind is Flippability.ZERO_TO_ONE:
        return old_bit == 0 and new_bit == 1
    if kind is Flippability.ONE_TO_ZERO:
        return old_bit == 1 and new_bit == 0
    return False


def feasible(flip: BitFlipRecord, qmodel: QuantizedModel, profile: FlipProfile) -> bool:
    return permits(profile.query(layout(qmodel, flip.location)), flip.old_bit, flip.new_bit)


@dataclass
class DeploymentResult:
    realized: list = field(default_factory=list)
    infeasible: list = field(default_factory=list)
    extra_flips_used: int = 0
    rounds: int = 0
    frozen: frozenset = frozenset()

    def to_dict(self, qmodel: QuantizedModel | None = None) -> dict:
        def row(f):
            d = f.to_dict()
            if qmodel is not None:
                addr = layout(qmodel, f.location)
                d.update(page=addr.page, offset=addr.bit_offset)
            return d
        return {"realized": [row(f) for f in self.realized],
                "infeasible": [row(f) for f in self.infeasible],
                "extra_flips_used": self.extra_flips_used, "rounds": self.rounds}


def feasible_prefix(flips, qmodel: QuantizedModel, profile: FlipProfile):
    """Longest leading run of ``flips`` that the profile can realize."""
    out = []
    for rec in flips:
        if not feasible(rec, qmodel, profile):
            break
        out.append(rec)
    return out


def deploy_with_research(qmodel: QuantizedModel, spec: AttackSpec, data: DataSplit,
                         profile: FlipProfile, max_rounds: int = 200):
    """Search, check each requested flip against ``profile``, freeze the infeasible ones, search again.

    Every round re-runs the search from the pristine model with all
    infeasible bits seen so far frozen, so flips ahead of the first
    infeasible one are reproduced unchanged and only the tail is re-searched.
    If ``max_rounds`` runs out, the returned report replays only the
    feasible prefix of the last round.
    """
    layout(qmodel, BitLocation(0, 0, 0))
    frozen = set(spec.frozen)
    infeasible: list[BitFlipRecord] = []
    baseline_flips = None
    report = None
    rounds = 0
    clean = False
    while rounds < max_rounds:
        rounds += 1
        report = run_attack(qmodel, replace(spec, frozen=frozenset(frozen)), data)
        if baseline_flips is None:
            baseline_flips = report.n_flips
        bad = [rec for rec in report.flips if not feasible(rec, qmodel, profile)]
        log.info("round %d: %d requested, %d infeasible", rounds, report.n_flips, len(bad))
        if not bad:
            clean = True
            break
        infeasible.extend(bad)
        frozen.update(rec.location for rec in bad)

    if not clean:
        prefix = feasible_prefix(report.flips, qmodel, profile) if report else []
        verdict = report.verdict if report else "exhausted"
        report = replay_attack(qmodel, replace(spec, frozen=frozenset(frozen)), data, prefix)
        report.achieved = False
        report.verdict = "max-rounds" if verdict == "achieved" else verdict
    result = DeploymentResult(realized=list(report.flips), infeasible=infeasible,
                              extra_flips_used=report.n_flips - (baseline_flips or 0),
                              rounds=rounds, frozen=frozenset(frozen))
    return report, result
