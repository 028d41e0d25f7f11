"""Targeted bit-flip attacks on quantized classifiers, at desk scale."""
from .attack import AttackReport, AttackSpec, SearchExhausted, replay_attack, run_attack
from .bitspace import (BitFlipRecord, BitLocation, Direction, apply_flip, bit_tensor, hamming_distance,
                       revert_flip)
from .evaluation import DataSplit, evaluate_asr, evaluate_ta, split_data
from .harness import layer_histogram, run_trials
from .objectives import NTo1, OneToOne, OneToOneStealthy, Untargeted, make_variant
from .quantizer import QuantConfig, QuantizedModel, quantize_model

__version__ = "0.1.0"

__all__ = [
    "AttackReport", "AttackSpec", "BitFlipRecord", "BitLocation", "DataSplit", "Direction", "NTo1",
    "OneToOne", "OneToOneStealthy", "QuantConfig", "QuantizedModel", "SearchExhausted", "Untargeted",
    "apply_flip", "bit_tensor", "evaluate_asr", "evaluate_ta", "hamming_distance", "layer_histogram",
    "make_variant", "quantize_model", "replay_attack", "revert_flip", "run_attack", "run_trials",
    "split_data",
]
