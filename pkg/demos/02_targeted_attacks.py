"""Run the three targeted attack variants against the toy victim.

Run: python3 demos/02_targeted_attacks.py
"""
from tbfa import AttackSpec, NTo1, OneToOne, OneToOneStealthy, layer_histogram, run_attack, split_data
from tbfa.harness import toy_victim

victim = toy_victim()
print(f"toy victim: float accuracy {victim.float_accuracy:.3f}, "
      f"8-bit accuracy {victim.quantized_accuracy:.3f}")

for variant in (NTo1(target=3), OneToOne(source=1, target=3), OneToOneStealthy(source=1, target=3)):
    split = split_data(victim.test, variant, seed=0)
    report = run_attack(victim.qmodel, AttackSpec(variant), split)
    hist = layer_histogram(report)
    print(f"\n{variant.name}: {report.verdict} after {report.n_flips} flips")
    print(f"  ASR {report.clean_asr:.3f} -> {report.asr:.3f}")
    print(f"  TA  {report.clean_ta:.3f} -> {report.post_attack_ta:.3f}")
    print(f"  flips per layer {hist.counts}, last layer share {hist.last_layer_fraction:.2f}")
    for f in report.flips[:5]:
        loc = f.location
        print(f"    iter {f.iteration}: layer {loc.layer} weight {loc.weight_index} bit {loc.bit_pos} "
              f"{f.old_bit}->{f.new_bit}")
