"""Freeze the output layer and see what the search does without it.

Run: python3 demos/05_protect_last_layer.py
"""
from tbfa import AttackSpec, OneToOneStealthy, layer_histogram, run_attack, split_data
from tbfa.harness import toy_victim

victim = toy_victim()
variant = OneToOneStealthy(source=1, target=3)
split = split_data(victim.test, variant, seed=0)

for protect in (False, True):
    # a bigger stagnation window gives the search room when early flips barely move ASR
    for stagnation in (3, 20):
        spec = AttackSpec(variant, protect_last_layer=protect, stagnation_iters=stagnation)
        report = run_attack(victim.qmodel, spec, split)
        hist = layer_histogram(report)
        print(f"protect={protect!s:5} stagnation={stagnation:2d}: {report.verdict:10s} "
              f"{report.n_flips:3d} flips, ASR {report.asr:.3f}, TA {report.post_attack_ta:.3f}, "
              f"per layer {hist.counts}")
