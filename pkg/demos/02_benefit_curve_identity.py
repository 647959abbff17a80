"""The benefit(p) curve and its integral identity.

benefit(p) is the per-capita benefit achieved by treating the fraction
p of subjects with the highest predicted benefit.  Integrated over all
p it equals half the expected pairwise maximum, the quantity behind the
concentration index -- a useful cross-check on any fitted model.
"""

import numpy as np

from cbindex import (
    BenefitPipeline,
    benefit_curve,
    generate_population,
    pair_max_parametric,
)
from cbindex.simulation import _simulate_trial

population = generate_population("weak", size=100_000, seed=3)
trial = _simulate_trial(population, n=2000, rng=np.random.default_rng(10))
result = BenefitPipeline(model="ml").estimate(trial)
bv = result.benefit

grid = np.linspace(0.05, 1.0, 20)
curve = benefit_curve(bv, grid)
peak = curve.values.max()
print("fraction treated -> per-capita benefit (events prevented/year)")
for p, value in zip(curve.p, curve.values):
    bar = "#" * max(0, int(50 * value / peak))
    print(f"  p = {p:4.2f}  {value:7.4f}  {bar}")
print("(the dip past the peak is real: treating beyond the subjects who"
      " benefit dilutes the per-capita gain)")

fine = benefit_curve(bv, np.linspace(1e-4, 1.0, 10_000))
integral = fine.integral()
half_pair_max = 0.5 * pair_max_parametric(bv)
print(f"\nintegral of benefit(p) over (0, 1]  = {integral:.6f}")
print(f"half the expected pairwise maximum  = {half_pair_max:.6f}")
print(f"relative gap                        = {abs(integral - half_pair_max) / half_pair_max:.2e}")

# Treating everyone gives exactly the average benefit.
everyone = benefit_curve(bv, [1.0]).values[0]
print(f"\nbenefit(1.0) = {everyone:.6f} = mean predicted benefit "
      f"{bv.values.mean():.6f}")
