"""
A small omnibus sweep
=====================

Vary a few generator factors, rank them by their effect on validity, and ask
whether variance explained or replication predicts which components are valid.
"""

from pcvlab import SweepPlan, factor_effects, proxy_curve_replication, proxy_curve_variance, run_sweep

plan = SweepPlan(
    factors={
        "n_latents": [2, 5],
        "weight_scale": ["ZeroMean", "PositiveOnly"],
        "noise_sd_factor": [0.0, 1.0],
    },
    base={"n_participants": 300, "n_observed": 40},
    n_simulations=10,
    n_boot=300,
    paired=True,
    seed=3,
)
print(plan.n_cells, "cells")
results = run_sweep(plan)

# Kruskal-Wallis across the levels of each factor, largest effect first.
for row in factor_effects(results):
    means = ", ".join(f"{lv}: {m:.2f}" for lv, m in zip(row.levels, row.level_means))
    print(f"{row.factor:16s} H = {row.H:7.2f}  p = {row.p:.3g}  ({means})")

# Share of components with validity >= 60% among those passing a variance
# explained threshold. A useful proxy would push this towards 1.
for point in proxy_curve_variance(results, validity_thresholds=(0.6,), ve_grid=[0.0, 0.05, 0.1, 0.2, 0.4]):
    print(f"VE >= {point.x_threshold:.2f}: {point.proportion} of {point.n_selected}")

# Same question with replication across an independent sample.
for point in proxy_curve_replication(results, validity_thresholds=(0.6,), rep_grid=[0.0, 0.5, 0.9]):
    print(f"replication >= {point.x_threshold:.1f}: {point.proportion} of {point.n_selected}")
