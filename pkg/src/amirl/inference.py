"""Goodness of fit and bootstrap confidence intervals for panel coefficients.

The R-squared statistics come in the overall form (levels, unit intercepts
folded back in) and the within form (time-demeaned model), each with an
adjusted variant, averaged across the imputed data sets.

Confidence intervals are nonparametric bias-corrected-and-accelerated (BCa)
bootstrap intervals.  Resampling respects the panel: bootstrap draws whole
unit blocks and the acceleration constant comes from a leave-one-unit-out
jackknife, the unit being the exchangeable element of the design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


class InferenceError(RuntimeError):
    pass


@dataclass
class FitStats:
    r2_overall: float
    r2_overall_adj: float
    r2_within: float
    r2_within_adj: float
    n_imputations: int


def fit_statistics(prepared, b_final: np.ndarray) -> FitStats:
    """Average (adjusted) overall and within R-squared across imputed sets.

    ``prepared`` is a sequence of per-imputation designs exposing standardized
    level arrays (``y_std``, ``x_std``), their demeaned counterparts
    (``y_dd``, ``x_dd``), per-unit standardized means (``y_unit_means``,
    ``x_unit_means``) and ``unit_of_row``.  The unit intercepts implied by
    ``b_final`` are recomputed per imputation before folding back.

    The adjusted forms charge the full parameter count N + K (unit intercepts
    plus active slopes) in both cases; the demeaning step consumes the same N
    degrees of freedom it removes.
    """
    b_final = np.asarray(b_final, dtype=float)
    k_used = int(np.count_nonzero(b_final))
    overall, overall_adj, within, within_adj = [], [], [], []
    for d in prepared:
        n = d.y_std.size
        n_alpha = d.n_intercepts
        slope_part = d.x_std @ b_final
        if n_alpha == 1:
            fitted = float(np.mean(d.y_std - slope_part)) + slope_part
        else:
            alpha = d.y_unit_means - d.x_unit_means @ b_final
            fitted = alpha[d.unit_of_row] + slope_part
        sst = float(np.sum((d.y_std - d.y_std.mean()) ** 2))
        if sst <= 0:
            raise InferenceError("target has zero variance")
        ssr = float(np.sum((d.y_std - fitted) ** 2))
        r2o = 1.0 - ssr / sst

        if np.isfinite(d.y_dd).all():
            ssr_w = float(np.sum((d.y_dd - d.x_dd @ b_final) ** 2))
            sst_w = float(np.sum(d.y_dd ** 2))
            r2w = 1.0 - ssr_w / sst_w if sst_w > 0 else np.nan
        else:
            r2w = np.nan  # pooled mode: no within model

        df = n - n_alpha - k_used
        scale = (n - 1) / df if df > 0 else np.nan
        overall.append(r2o)
        overall_adj.append(1.0 - (1.0 - r2o) * scale)
        within.append(r2w)
        within_adj.append(1.0 - (1.0 - r2w) * scale)
    m = len(overall)
    return FitStats(
        r2_overall=float(np.mean(overall)),
        r2_overall_adj=float(np.mean(overall_adj)),
        r2_within=float(np.mean(within)),
        r2_within_adj=float(np.mean(within_adj)),
        n_imputations=m,
    )


@dataclass
class CoefficientInterval:
    index: int
    estimate: float
    lower: float
    upper: float
    level: float
    bias_z0: float
    acceleration: float
    degenerate: bool = False

    @property
    def significant(self) -> bool:
        return not (self.lower <= 0.0 <= self.upper)


def bca_interval(estimator, n_units: int, level: float = 0.90,
                 n_resamples: int = 1000, seed: int = 0,
                 index: int = 0) -> CoefficientInterval:
    """BCa interval for a scalar statistic of unit-block resamples.

    ``estimator`` maps a 1-d array of unit indices (a resample, possibly with
    repeats) to a scalar and must be pure.  The bias constant z0 comes from
    the fraction of bootstrap replicates below the point estimate; the
    acceleration from the skewness of leave-one-unit-out jackknife values.
    A bootstrap distribution with no spread collapses to the point estimate
    and is flagged.
    """
    if n_resamples < 200:
        raise InferenceError("need at least 200 resamples for a BCa interval")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5,)))
    all_units = np.arange(n_units)
    point = float(estimator(all_units))
    boot = np.empty(n_resamples)
    for r in range(n_resamples):
        boot[r] = estimator(rng.integers(0, n_units, n_units))

    if np.all(boot == boot[0]):
        return CoefficientInterval(index, point, point, point, level,
                                   0.0, 0.0, degenerate=True)

    frac_below = np.mean(boot < point)
    frac_below = min(max(frac_below, 0.5 / n_resamples), 1.0 - 0.5 / n_resamples)
    z0 = norm.ppf(frac_below)

    jack = np.array([
        estimator(np.delete(all_units, i)) for i in range(n_units)
    ])
    dev = jack.mean() - jack
    denom = np.sum(dev ** 2) ** 1.5
    accel = float(np.sum(dev ** 3) / (6.0 * denom)) if denom > 0 else 0.0

    alpha = (1.0 - level) / 2.0
    lo_q = _bca_percentile(z0, accel, norm.ppf(alpha))
    hi_q = _bca_percentile(z0, accel, norm.ppf(1.0 - alpha))
    lower, upper = np.quantile(boot, [lo_q, hi_q])
    return CoefficientInterval(index, point, float(lower), float(upper),
                               level, float(z0), accel)


def _bca_percentile(z0, accel, z_alpha):
    adj = z0 + (z0 + z_alpha) / (1.0 - accel * (z0 + z_alpha))
    return float(np.clip(norm.cdf(adj), 0.0, 1.0))
