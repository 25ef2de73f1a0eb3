"""Why the full pipeline: comparison against its two baselines.

On the same scenarios, three estimators:
  amirl      -- imputation + block-bootstrap random lasso + stability selection
                on within-transformed data (unit fixed effects),
  mirl       -- the pooled variant: common intercept, no demeaning,
  lasso-ols  -- single mean imputation, one criterion-tuned lasso-OLS fit.

The single-fit baseline tends to carry many false positives; the pooled
variant misses the unit heterogeneity.  Stability selection prunes both ways.
"""

import numpy as np

from amirl import PipelineConfig, ScenarioSpec, generate, run_pipeline

SUPPORT = (0, 5, 10, 15, 20)
MODES = ("amirl", "mirl_pooled", "lasso_ols_meanimpute")

rows = {mode: [] for mode in MODES}
for seed in range(5):
    spec = ScenarioSpec(
        n_units=60, n_periods=6, n_covariates=40,
        support=SUPPORT, beta=(1.0, -1.0, 0.8, -0.7, 0.6),
        fixed_effect_scale=1.5, noise_scale=1.0,
        block_size=5, rho=0.7, missing_rate=0.15, mar_driver=39,
        seed=500 + seed,
    )
    panel, truth = generate(spec)
    for mode in MODES:
        config = PipelineConfig(mode=mode, criterion="aic", n_imputations=5,
                                n_bootstrap=50, n_cycles=3, seed=seed,
                                threads=4, compute_ci=False)
        report = run_pipeline(panel, config)
        stable = set(report.stable_set.tolist())
        rows[mode].append({
            "tp": len(stable & set(SUPPORT)),
            "fp": len(stable - set(SUPPORT)),
            "size": len(stable),
            "r2w": report.fit.r2_within,
        })
    print(f"seed {seed} done")

print(f"\n{'mode':<22} {'mean TP':>8} {'mean FP':>8} {'mean size':>10} {'within R2':>10}")
for mode in MODES:
    r = rows[mode]
    tp = np.mean([x["tp"] for x in r])
    fp = np.mean([x["fp"] for x in r])
    size = np.mean([x["size"] for x in r])
    r2 = np.nanmean([x["r2w"] for x in r])
    print(f"{mode:<22} {tp:>8.2f} {fp:>8.2f} {size:>10.2f} {r2:>10.3f}")

print("\nreading: the single-fit baseline inflates the model; the stability-")
print("selected pipeline keeps the support tight at comparable fit.")
