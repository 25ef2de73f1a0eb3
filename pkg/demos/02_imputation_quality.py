"""Tree-based chained-equation imputation and how to judge it.

Generates a panel with known structure, hides 15% of the cells at random
(probability driven by an always-observed covariate), imputes M completed
data sets, and checks that (a) observed cells are untouched, (b) the
correlation structure of the completed data tracks the pairwise-complete
correlations of the incomplete data, and (c) the spread across imputations
is small.
"""

import numpy as np

from amirl import (ImputationConfig, ScenarioSpec, correlation_diagnostics,
                   generate, imputed_to_wide, run_mice)

spec = ScenarioSpec(
    n_units=50, n_periods=6, n_covariates=12,
    support=(0, 4, 8), beta=(1.0, -0.8, 0.6),
    fixed_effect_scale=1.0, noise_scale=0.8,
    block_size=4, rho=0.6,          # three equicorrelated blocks
    missing_rate=0.15, mar_driver=11, seed=21,
)
panel, truth = generate(spec)
print(f"panel: {panel.n_units} units x {panel.n_periods} periods x "
      f"{panel.n_variables} variables, {panel.missing_fraction():.1%} missing")

config = ImputationConfig(n_imputations=5, n_cycles=5, seed=3)
imputed = run_mice(panel, config, n_jobs=4)

# Observed cells are never modified -- bitwise.
untouched = all(
    np.array_equal(d.values[panel.mask], panel.values[panel.mask])
    for d in imputed
)
print(f"observed cells bitwise intact across all {len(imputed)} sets: {untouched}")

# How close do the imputations come to the hidden truth?
holes = ~panel.mask
rmse = [np.sqrt(np.mean((d.values[holes] - truth.clean[holes]) ** 2)) for d in imputed]
print(f"per-set RMSE on hidden cells: {np.round(rmse, 3)} "
      f"(target variable sd ~ {truth.clean[:, :, 0].std():.2f})")

# Correlation diagnostics: completed vs pairwise-complete correlations.
table = correlation_diagnostics(panel, imputed)
scored = table[~table.flagged]
gap = (scored.r_imputed_mean - scored.r_complete).abs()
print(f"\ncorrelation diagnostics over {len(scored)} variable pairs:")
print(f"  max |mean imputed r - pairwise-complete r| = {gap.max():.3f}")
print(f"  max across-imputation sd of r              = {scored.r_imputed_sd.max():.3f}")
print("\nfive pairs with the largest gap:")
cols = ["var_a", "var_b", "r_complete", "r_imputed_mean", "r_imputed_sd"]
print(scored.assign(gap=gap).nlargest(5, "gap")[cols + ["gap"]].to_string(index=False))

# The stacked wide dump (one block per imputation, m column first).
stacked = imputed_to_wide(panel, imputed)
print(f"\nstacked wide dump: {len(stacked)} rows "
      f"({len(imputed)} sets x {panel.n_units * panel.n_periods} rows)")
