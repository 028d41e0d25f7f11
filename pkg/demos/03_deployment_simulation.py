"""Check an attack against a simulated DRAM flip profile and re-search around dead cells.

Run: python3 demos/03_deployment_simulation.py
"""
from tbfa import AttackSpec, OneToOne, run_attack, split_data
from tbfa.harness import toy_victim
from tbfa.memsim import deploy_with_research, feasible, generate_profile, layout, total_pages

victim = toy_victim()
qm = victim.qmodel
variant = OneToOne(source=1, target=3)
split = split_data(victim.test, variant, seed=0)
spec = AttackSpec(variant)

plain = run_attack(qm, spec, split)
print(f"unconstrained: {plain.n_flips} flips, ASR {plain.asr:.3f}")

pages = total_pages(qm)
print(f"model occupies {qm.total_weights} bytes = {pages} page(s)")
for density in (1.0, 0.3):
    profile = generate_profile(pages, density, seed=0)
    ok = sum(feasible(f, qm, profile) for f in plain.flips)
    print(f"\ndensity {density}: {ok}/{plain.n_flips} unconstrained flips are physically possible")
    report, result = deploy_with_research(qm, spec, split, profile)
    print(f"  after {result.rounds} round(s): {report.verdict}, {report.n_flips} flips, "
          f"{result.extra_flips_used} extra, {len(result.infeasible)} bits frozen")
    for f in result.realized:
        addr = layout(qm, f.location)
        print(f"    page {addr.page} offset {addr.bit_offset:5d}  {f.old_bit}->{f.new_bit}")
