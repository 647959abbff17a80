"""Bootstrap confidence intervals and optimism correction.

The whole estimation pipeline -- standardization, penalty selection,
dispersion profiling, fitting, and both estimators -- is repeated in
every resample, so the intervals reflect model-selection uncertainty
too.  The optimism correction then asks how much of the in-sample
estimate is self-flattery: a model refitted to a bootstrap sample is
scored there and on the original data, and the mean gap is removed.
"""

import numpy as np

from cbindex import (
    BenefitPipeline,
    BootstrapConfig,
    bootstrap_intervals,
    generate_population,
    optimism_adjust_all,
)
from cbindex.simulation import _simulate_trial

population = generate_population("weak", size=100_000, seed=21)
trial = _simulate_trial(population, n=800, rng=np.random.default_rng(2))

pipeline = BenefitPipeline(model="ridge", cv_folds=5, lambda_grid_size=8,
                           lambda_min_ratio=1e-3)

cfg = BootstrapConfig(replicates=200, seed=99, workers=2)
intervals = bootstrap_intervals(trial, pipeline, cfg)
print("percentile bootstrap, 200 replicates, level 0.95")
for kind, iv in intervals.items():
    print(f"  {kind:15s} point {iv.point:6.3f}   "
          f"[{iv.lower:6.3f}, {iv.upper:6.3f}]   "
          f"({iv.n_failed} degenerate replicates)")

opt_cfg = BootstrapConfig(replicates=100, seed=123, workers=2)
adjusted = optimism_adjust_all(trial, pipeline, opt_cfg)
print("\noptimism correction, 100 replicates")
for kind, res in adjusted.items():
    print(f"  {kind:15s} raw {res.unadjusted:6.3f}  optimism {res.optimism:+6.3f}"
          f"  adjusted {res.adjusted:6.3f}")
