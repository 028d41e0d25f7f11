"""How the bit-width of the victim changes the number of flips an attack needs.

Run: python3 demos/04_bitwidth_ablation.py
"""
from tbfa import AttackSpec, OneToOne
from tbfa.harness import ablate_bitwidth, toy_victim

victim = toy_victim()
spec = AttackSpec(OneToOne(source=1, target=3))
rows = ablate_bitwidth(victim.float_model, victim.test, spec, bitwidths=[2, 4, 6, 8], seeds=range(3))

print(f"{'bits':>4} {'clean acc':>9} {'flips':>12} {'ASR':>6}")
for r in rows:
    s = r.stats
    print(f"{r.n_bits:>4} {r.clean_accuracy:9.3f} {s.flips[0]:6.1f}±{s.flips[1]:<4.1f} {s.asr[0]:6.3f}")
