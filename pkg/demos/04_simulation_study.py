"""A pocket-sized run of the estimator behavior study.

Each scenario fixes a known population concentration value; simulated
trials of several sizes are drawn and all six estimator variants are
scored by bias, SD, and RMSE against that truth.  Expect the null
scenario (truth exactly 0) to show the upward bias that motivates
optimism correction, and error to shrink with sample size everywhere.
The full-scale version of this study runs through
``cbindex simulate`` or tests/test_acceptance.py.
"""

from cbindex import SimSettings, run_simulation

settings = SimSettings(
    population_size=50_000,
    optimism_replicates=8,
    workers=2,
)

for scenario in ("strong", "null"):
    report = run_simulation(scenario, [300, 1200], replicates=12,
                            seed=314, settings=settings)
    oracle = report.rows[0].oracle_cb
    print(f"\nscenario {scenario!r}: population index = {oracle:.3f}, "
          f"{report.replicates} replicates")
    print(f"  {'estimator':26s} {'n':>5s} {'bias':>8s} {'sd':>7s} {'rmse':>7s} {'ok':>3s}")
    for row in report.rows:
        print(f"  {row.estimator:26s} {row.n:5d} {row.bias:+8.3f} "
              f"{row.sd:7.3f} {row.rmse:7.3f} {row.n_replicates:3d}")
