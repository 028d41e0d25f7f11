"""Multi-trial experiments, bit-width ablation and layer-wise flip statistics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackReport, AttackSpec, run_attack
from .evaluation import (DEFAULT_ATTACK_BATCH, DataSplit, evaluate_asr, evaluate_ta,  # noqa: F401
                         split_data)
from .quantizer import QuantizedModel, quantize_model
from .tensor_core import LabeledBatch, Model, accuracy


def mean_std(values):
    """Mean and sample standard deviation; std is 0 for a single value."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no values")
    std = float(arr.std(ddof=1)) if arr.size >= 2 else 0.0
    return float(arr.mean()), std


@dataclass
class TrialStats:
    reports: list
    seeds: list
    asr: tuple = (0.0, 0.0)
    ta: tuple = (0.0, 0.0)
    flips: tuple = (0.0, 0.0)

    @classmethod
    def from_reports(cls, reports, seeds):
        return cls(list(reports), list(seeds),
                   asr=mean_std([r.asr for r in reports]),
                   ta=mean_std([r.post_attack_ta for r in reports]),
                   flips=mean_std([r.n_flips for r in reports]))

    @property
    def k(self) -> int:
        return len(self.reports)

    @property
    def all_achieved(self) -> bool:
        return all(r.achieved for r in self.reports)


def run_trials(qmodel: QuantizedModel, test_set: LabeledBatch, spec: AttackSpec, seeds,
               attack_batch_size=DEFAULT_ATTACK_BATCH, ta_on_full_test_set=False,
               parallel=False) -> TrialStats:
    """Independent attacks from the same pristine model, one per split seed."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one trial seed")

    def one(seed):
        split = split_data(test_set, spec.variant, seed, attack_batch_size, ta_on_full_test_set)
        return run_attack(qmodel, spec, split)

    if parallel and len(seeds) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor() as pool:
            reports = list(pool.map(one, seeds))
    else:
        reports = [one(s) for s in seeds]
    return TrialStats.from_reports(reports, seeds)


@dataclass
class AblationRow:
    n_bits: int
    clean_accuracy: float
    stats: TrialStats


def ablate_bitwidth(model_float: Model, test_set: LabeledBatch, spec: AttackSpec, bitwidths, seeds,
                    attack_batch_size=DEFAULT_ATTACK_BATCH) -> list[AblationRow]:
    rows = []
    for n_bits in bitwidths:
        qmodel = quantize_model(model_float, int(n_bits))
        stats = run_trials(qmodel, test_set, spec, seeds, attack_batch_size)
        rows.append(AblationRow(int(n_bits), accuracy(qmodel.model, test_set), stats))
    return rows


@dataclass
class LayerHistogram:
    counts: dict = field(default_factory=dict)
    total: int = 0
    last_layer: int = 0

    def fraction(self, layer) -> float:
        return self.counts.get(layer, 0) / self.total if self.total else 0.0

    @property
    def last_layer_fraction(self) -> float:
        return self.fraction(self.last_layer)


def layer_histogram(report: AttackReport) -> LayerHistogram:
    counts = report.histogram
    return LayerHistogram(counts, report.n_flips, report.n_layers - 1)


TRIAL_FIELDS = ["row", "variant", "source", "target", "n_bits", "flips", "asr", "ta", "seed", "achieved"]


def trial_rows(stats: TrialStats, n_bits: int):
    rows = []
    for seed, r in zip(stats.seeds, stats.reports):
        v = r.spec.variant
        rows.append({"row": "trial", "variant": v.name, "source": v.source, "target": v.target,
                     "n_bits": n_bits, "flips": r.n_flips, "asr": r.asr, "ta": r.post_attack_ta,
                     "seed": seed, "achieved": r.achieved})
    v = stats.reports[0].spec.variant
    rows.append({"row": "summary", "variant": v.name, "source": v.source, "target": v.target,
                 "n_bits": n_bits, "flips": f"{stats.flips[0]:.4g}±{stats.flips[1]:.4g}",
                 "asr": f"{stats.asr[0]:.4g}±{stats.asr[1]:.4g}", "ta": f"{stats.ta[0]:.4g}±{stats.ta[1]:.4g}",
                 "seed": "", "achieved": stats.all_achieved})
    return rows


def write_trials_csv(path, stats: TrialStats, n_bits: int):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRIAL_FIELDS)
        w.writeheader()
        w.writerows(trial_rows(stats, n_bits))


ABLATION_FIELDS = ["n_bits", "clean_accuracy", "trials", "asr_mean", "asr_std", "ta_mean", "ta_std",
                   "flips_mean", "flips_std", "all_achieved"]


def ablation_rows(rows: list[AblationRow]):
    return [{"n_bits": r.n_bits, "clean_accuracy": r.clean_accuracy, "trials": r.stats.k,
             "asr_mean": r.stats.asr[0], "asr_std": r.stats.asr[1],
             "ta_mean": r.stats.ta[0], "ta_std": r.stats.ta[1],
             "flips_mean": r.stats.flips[0], "flips_std": r.stats.flips[1],
             "all_achieved": r.stats.all_achieved} for r in rows]


def write_ablation_csv(path, rows: list[AblationRow]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS)
        w.writeheader()
        w.writerows(ablation_rows(rows))


TOY_CONFIG = {
    "n_classes": 10, "n_features": 16, "n_train_per_class": 200, "n_test_per_class": 100,
    "separation": 1.5, "data_seed": 0,
    "hidden": [64], "init_seed": 0,
    "epochs": 30, "lr": 0.05, "momentum": 0.9, "batch_size": 32, "train_seed": 0,
    "n_bits": 8,
}


@dataclass
class ToyVictim:
    float_model: Model
    qmodel: QuantizedModel
    train: LabeledBatch
    test: LabeledBatch
    float_accuracy: float
    quantized_accuracy: float


def toy_victim(**overrides) -> ToyVictim:
    """Seeded blob data plus a trained, quantized MLP; the default desk-scale victim."""
    from .tensor_core import build_mlp, make_blobs, train_sgd

    cfg = {**TOY_CONFIG, **overrides}
    unknown = set(cfg) - set(TOY_CONFIG)
    if unknown:
        raise ValueError(f"unknown toy config keys: {sorted(unknown)}")
    train, test = make_blobs(cfg["n_classes"], cfg["n_features"], cfg["n_train_per_class"],
                             cfg["n_test_per_class"], separation=cfg["separation"], seed=cfg["data_seed"])
    model = build_mlp(cfg["n_features"], cfg["hidden"], cfg["n_classes"], seed=cfg["init_seed"])
    model = train_sgd(model, train, cfg["epochs"], cfg["lr"], seed=cfg["train_seed"],
                      batch_size=cfg["batch_size"], momentum=cfg["momentum"])
    qmodel = quantize_model(model, cfg["n_bits"])
    return ToyVictim(model, qmodel, train, test, accuracy(model, test), accuracy(qmodel.model, test))
