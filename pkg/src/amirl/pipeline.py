"""The four-step selection pipeline and its two reference baselines.

Step 1 imputes and prepares the data (standardise, then time-demean).  Step 2
draws unit-block bootstrap samples from every imputed set, fits a penalised
regression at a criterion-optimal penalty on each, refits the selection by
OLS, and condenses the results into a per-variable importance measure.  Step
3 repeats the exercise on random candidate subsets weighted by importance and
averages into the initial coefficient vector.  Step 4 records how often each
variable is selected anywhere along a shared penalty grid, and a BIC scan
over the resulting selection probabilities fixes the threshold that defines
the stable set.

Randomness is managed by counter-based streams: each (m, b) job derives its
resample and candidate draws from the top-level seed plus a (stage, m, b)
spawn key, so results are independent of scheduling and worker count.

Modes: ``amirl`` (fixed effects, demeaned fits), ``mirl_pooled`` (common
intercept, no demeaning, row bootstrap when the panel is unbalanced), and
``lasso_ols_meanimpute`` (single mean imputation, one criterion-tuned
lasso-OLS fit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from joblib import Parallel, delayed

from .impute import (ImputationConfig, ImputedDataset, correlation_diagnostics,
                     placeholder_impute, run_mice)
from .inference import FitStats, bca_interval, fit_statistics
from .lasso import (BIC, CP, CRITERIA, LambdaGrid, LassoError,
                    build_lambda_grid, full_model_sigma2, lambda_max,
                    lasso_path, pooled_lambda_max, post_lasso_ols,
                    select_lambda_oc)
from .panel import PanelDataset, recover_fixed_effects, standardize, within_transform
from .trees import TreeControls

MODE_AMIRL = "amirl"
MODE_MIRL_POOLED = "mirl_pooled"
MODE_LASSO_OLS = "lasso_ols_meanimpute"
MODES = (MODE_AMIRL, MODE_MIRL_POOLED, MODE_LASSO_OLS)

_STREAM_RESAMPLE = 2
_STREAM_CAND_INIT = 3
_STREAM_CAND_STAB = 4


class PipelineError(RuntimeError):
    pass


class UnbalancedPanelError(PipelineError):
    """Raised when a mode requiring a balanced panel receives an unbalanced one."""


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = MODE_AMIRL
    criterion: str = BIC
    n_imputations: int = 10  # M
    n_bootstrap: int = 100  # B
    candidate_fraction: float = 1.0 / 3.0
    seed: int = 0
    grid_size: int = 100  # K
    grid_decay: float = 0.001  # delta
    n_cycles: int = 20  # MICE cycles
    tree_controls: TreeControls = field(default_factory=TreeControls)
    clip_bounded: bool = True
    threads: int = 1
    compute_ci: bool = True
    ci_resamples: int = 1000
    ci_level: float = 0.90
    include_imputed_target_in_threshold: bool = True
    keep_audit: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise PipelineError(f"unknown mode {self.mode!r}")
        if self.criterion not in CRITERIA:
            raise PipelineError(f"unknown criterion {self.criterion!r}")
        if self.n_bootstrap < 1 or self.n_imputations < 1:
            raise PipelineError("need at least one bootstrap sample and one imputation")
        if not 0.0 < self.candidate_fraction <= 1.0:
            raise PipelineError("candidate fraction must lie in (0, 1]")

    def candidate_count(self, p: int) -> int:
        return max(1, min(p, math.floor(p * self.candidate_fraction)))

    def imputation_config(self) -> ImputationConfig:
        return ImputationConfig(
            n_imputations=self.n_imputations,
            n_cycles=self.n_cycles,
            seed=self.seed,
            tree_controls=self.tree_controls,
            clip_bounded=self.clip_bounded,
            use_random_intercepts=self.mode == MODE_AMIRL,
        )


# -- resampling ----------------------------------------------------------


def block_bootstrap(values: np.ndarray, seed) -> tuple:
    """Resample whole unit blocks with replacement.

    ``values`` is (N, T, ...); the result keeps shape, each drawn unit
    contributing its full T-row block in original time order.  Returns
    (resampled values, drawn unit indices).
    """
    values = np.asarray(values)
    rng = np.random.default_rng(seed)
    units = rng.integers(0, values.shape[0], values.shape[0])
    return values[units], units


def resample_units(seed: int, m: int, b: int, n_units: int) -> np.ndarray:
    """The unit indices of bootstrap sample (m, b); counter-based, order-free."""
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_STREAM_RESAMPLE, m, b))
    )
    return rng.integers(0, n_units, n_units)


def _block_rows(units: np.ndarray, t: int) -> np.ndarray:
    return (units[:, None] * t + np.arange(t)).ravel()


def resample_rows(seed: int, m: int, b: int, n_units: int, n_periods: int) -> np.ndarray:
    """Row indices of bootstrap sample (m, b) in the flattened design."""
    if n_periods == 1:
        return resample_units(seed, m, b, n_units)
    return _block_rows(resample_units(seed, m, b, n_units), n_periods)


# -- importance and candidate subsets -------------------------------------


@dataclass
class ImportanceVector:
    values: np.ndarray  # (p,) non-negative
    estimates: np.ndarray  # (M, B, p) per-sample refit coefficients, for audit


def compute_importance(estimates: np.ndarray) -> ImportanceVector:
    """Absolute mean of the per-sample refit estimates: cancellation intended."""
    estimates = np.asarray(estimates, dtype=float)
    if estimates.ndim != 3:
        raise PipelineError("expected an (M, B, p) estimate tensor")
    return ImportanceVector(np.abs(estimates.mean(axis=(0, 1))), estimates)


def sample_candidates(importance: np.ndarray, count: int, rng) -> np.ndarray:
    """Draw ``count`` distinct indices, inclusion chance proportional to weight.

    Sequential weighted draws without replacement; once every remaining
    weight is zero the draws continue uniformly, so the subset always fills.
    """
    weights = np.asarray(importance, dtype=float).copy()
    p = weights.size
    if count > p:
        raise PipelineError(f"cannot draw {count} of {p} variables")
    if np.any(weights < 0):
        raise PipelineError("importance weights must be non-negative")
    chosen = np.empty(count, dtype=np.int64)
    available = np.ones(p, dtype=bool)
    for k in range(count):
        total = weights.sum()
        if total > 0:
            j = rng.choice(p, p=weights / total)
        else:
            j = rng.choice(np.flatnonzero(available))
        chosen[k] = j
        weights[j] = 0.0
        available[j] = False
    return np.sort(chosen)


# -- prepared per-imputation designs ---------------------------------------


@dataclass
class PreparedDesign:
    """Standardised (and, with fixed effects, demeaned) arrays for one imputation."""

    y_std: np.ndarray  # (n,)
    x_std: np.ndarray  # (n, p)
    y_dd: np.ndarray  # (n,) demeaned; NaN when demeaning is unavailable
    x_dd: np.ndarray  # (n, p)
    unit_of_row: np.ndarray  # (n,)
    y_unit_means: np.ndarray  # (N,) on the standardized level scale
    x_unit_means: np.ndarray  # (N, p)
    y_raw_unit_means: np.ndarray  # (N,) original scale
    x_raw_unit_means: np.ndarray  # (N, p)
    y_scale: tuple  # (mean, sd)
    x_scale: tuple  # (means, sds)
    target_observed: np.ndarray  # (n,) True where the target was not imputed
    n_units: int
    n_periods: int
    n_intercepts: int  # N for fixed effects, 1 for a pooled intercept

    def fit_arrays(self, rows: np.ndarray, demeaned: bool):
        """Design for one bootstrap sample; pooled samples are re-centred so
        the intercept stays unpenalised."""
        if demeaned:
            return self.x_dd[rows], self.y_dd[rows]
        xs = self.x_std[rows]
        ys = self.y_std[rows]
        return xs - xs.mean(axis=0), ys - ys.mean()


def prepare_design(imputed: ImputedDataset, target_idx: int, covariate_idx,
                   variable_names, demean: bool, n_intercepts: int) -> PreparedDesign:
    values = imputed.values
    n_units, n_periods, _ = values.shape
    rows = n_units * n_periods
    cols = [target_idx] + list(covariate_idx)
    names = [variable_names[j] for j in cols]
    levels = values[:, :, cols].reshape(rows, len(cols))
    std, means, sds = standardize(levels, names)
    raw_unit_means = values[:, :, cols].mean(axis=1)

    if demean:
        dd = within_transform(std.reshape(n_units, n_periods, len(cols)))
        dd_flat = dd.values.reshape(rows, len(cols))
        unit_means = dd.unit_means
    else:
        dd_flat = np.full_like(std, np.nan)
        unit_means = std.reshape(n_units, n_periods, len(cols)).mean(axis=1)

    return PreparedDesign(
        y_std=std[:, 0],
        x_std=std[:, 1:],
        y_dd=dd_flat[:, 0],
        x_dd=dd_flat[:, 1:],
        unit_of_row=np.repeat(np.arange(n_units), n_periods),
        y_unit_means=unit_means[:, 0],
        x_unit_means=unit_means[:, 1:],
        y_raw_unit_means=raw_unit_means[:, 0],
        x_raw_unit_means=raw_unit_means[:, 1:],
        y_scale=(float(means[0]), float(sds[0])),
        x_scale=(means[1:], sds[1:]),
        target_observed=imputed.mask[:, :, target_idx].reshape(rows),
        n_units=n_units,
        n_periods=n_periods,
        n_intercepts=n_intercepts,
    )


# -- (m, b) passes ---------------------------------------------------------


def _chunks(n_imputations, n_bootstrap, threads):
    size = n_bootstrap if threads <= 1 else max(1, n_bootstrap // (2 * threads))
    out = []
    for m in range(n_imputations):
        for b0 in range(0, n_bootstrap, size):
            out.append((m, b0, min(b0 + size, n_bootstrap)))
    return out


def _run_pass(designs, config, chunk_fn, extra):
    chunks = _chunks(config.n_imputations, config.n_bootstrap, config.threads)
    if config.threads <= 1:
        parts = [chunk_fn(designs[m], m, b0, b1, config, *extra) for m, b0, b1 in chunks]
    else:
        parts = Parallel(n_jobs=config.threads)(
            delayed(chunk_fn)(designs[m], m, b0, b1, config, *extra)
            for m, b0, b1 in chunks
        )
    return chunks, parts


def _demeaned_mode(config) -> bool:
    return config.mode != MODE_MIRL_POOLED


def _lambda_zero_pass(designs, config):
    demeaned = _demeaned_mode(config)
    out = []
    for m, design in enumerate(designs):
        for b in range(config.n_bootstrap):
            rows = resample_rows(config.seed, m, b, design.n_units, design.n_periods)
            xs, ys = design.fit_arrays(rows, demeaned)
            out.append(lambda_max(xs, ys))
    return out


def _step2_chunk(design, m, b0, b1, config, grid):
    demeaned = _demeaned_mode(config)
    p = design.x_std.shape[1]
    betas = np.zeros((b1 - b0, p))
    for k, b in enumerate(range(b0, b1)):
        rows = resample_rows(config.seed, m, b, design.n_units, design.n_periods)
        xs, ys = design.fit_arrays(rows, demeaned)
        try:
            sigma2 = (full_model_sigma2(xs, ys, design.n_intercepts)
                      if config.criterion == CP else None)
            _, sol = select_lambda_oc(xs, ys, grid, config.criterion,
                                      design.n_intercepts, sigma2)
            beta, _ = post_lasso_ols(sol.active_set, xs, ys)
        except LassoError as exc:
            raise PipelineError(f"sample (m={m}, b={b}) failed: {exc}") from exc
        betas[k] = beta
    return betas


def step2_estimates(designs, grid, config) -> np.ndarray:
    """Criterion-tuned lasso-OLS refits on every (m, b) sample: (M, B, p)."""
    chunks, parts = _run_pass(designs, config, _step2_chunk, (grid,))
    p = designs[0].x_std.shape[1]
    tensor = np.zeros((config.n_imputations, config.n_bootstrap, p))
    for (m, b0, b1), part in zip(chunks, parts):
        tensor[m, b0:b1] = part
    return tensor


def _step3_chunk(design, m, b0, b1, config, grid, importance, count):
    demeaned = _demeaned_mode(config)
    p = design.x_std.shape[1]
    betas = np.zeros((b1 - b0, p))
    for k, b in enumerate(range(b0, b1)):
        rows = resample_rows(config.seed, m, b, design.n_units, design.n_periods)
        xs, ys = design.fit_arrays(rows, demeaned)
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(_STREAM_CAND_INIT, m, b))
        )
        cand = sample_candidates(importance, count, rng)
        try:
            sigma2 = (full_model_sigma2(xs, ys, design.n_intercepts)
                      if config.criterion == CP else None)
            _, sol = select_lambda_oc(xs[:, cand], ys, grid, config.criterion,
                                      design.n_intercepts, sigma2)
            beta_c, _ = post_lasso_ols(sol.active_set, xs[:, cand], ys)
        except LassoError as exc:
            raise PipelineError(f"sample (m={m}, b={b}) failed: {exc}") from exc
        betas[k, cand] = beta_c
    return betas


def initial_estimates(designs, importance: ImportanceVector, grid: LambdaGrid,
                      config: PipelineConfig):
    """Average of candidate-restricted lasso-OLS refits over all (m, b).

    Variables outside a sample's candidate set (or not selected in it)
    contribute zero to that sample's vector.  Returns (b_init, tensor).
    """
    p = designs[0].x_std.shape[1]
    count = config.candidate_count(p)
    chunks, parts = _run_pass(designs, config, _step3_chunk,
                              (grid, importance.values, count))
    tensor = np.zeros((config.n_imputations, config.n_bootstrap, p))
    for (m, b0, b1), part in zip(chunks, parts):
        tensor[m, b0:b1] = part
    return tensor.mean(axis=(0, 1)), tensor


def _step4_chunk(design, m, b0, b1, config, grid, importance, count):
    demeaned = _demeaned_mode(config)
    p = design.x_std.shape[1]
    counts = np.zeros((len(grid), p), dtype=np.int64)
    for b in range(b0, b1):
        rows = resample_rows(config.seed, m, b, design.n_units, design.n_periods)
        xs, ys = design.fit_arrays(rows, demeaned)
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(_STREAM_CAND_STAB, m, b))
        )
        cand = sample_candidates(importance, count, rng)
        try:
            path = lasso_path(xs[:, cand], ys, grid)
        except LassoError as exc:
            raise PipelineError(f"sample (m={m}, b={b}) failed: {exc}") from exc
        for g, sol in enumerate(path):
            counts[g, cand[sol.coefficients != 0.0]] += 1
    return counts


def stability_probabilities(designs, importance: ImportanceVector,
                            grid: LambdaGrid, config: PipelineConfig) -> np.ndarray:
    """Empirical selection probabilities: per variable, the best fraction of
    (m, b) samples with a nonzero raw-lasso coefficient at any grid penalty."""
    p = designs[0].x_std.shape[1]
    count = config.candidate_count(p)
    _, parts = _run_pass(designs, config, _step4_chunk,
                         (grid, importance.values, count))
    totals = np.zeros((len(grid), p), dtype=np.int64)
    for part in parts:
        totals += part
    return totals.max(axis=0) / float(config.n_imputations * config.n_bootstrap)


# -- threshold and final estimates -----------------------------------------


@dataclass
class StabilityResult:
    pi_hat: np.ndarray
    pi_star: float
    stable_set: np.ndarray  # indices with pi_hat >= pi_star
    thresholds: np.ndarray  # distinct candidate thresholds, ascending
    threshold_k: np.ndarray  # nonzero-coefficient count at each threshold
    threshold_bic: np.ndarray  # M-average BIC at each threshold
    empty_flagged: bool = False


def threshold_bic(design: PreparedDesign, coefficients: np.ndarray,
                  include_imputed_target: bool = True) -> float:
    """The BIC of a fixed coefficient vector on one prepared data set."""
    demeaned = np.isfinite(design.y_dd).all()
    if demeaned:
        resid = design.y_dd - design.x_dd @ coefficients
    else:
        resid = design.y_std - design.x_std @ coefficients
        resid = resid - resid.mean()  # pooled intercept
    if not include_imputed_target:
        resid = resid[design.target_observed]
    nt = resid.size
    rss = float(resid @ resid)
    if rss <= 0.0:
        raise PipelineError("degenerate fit: zero residual sum of squares")
    k = int(np.count_nonzero(coefficients))
    return nt * math.log(rss / nt) + math.log(nt) * (design.n_intercepts + k)


def select_threshold(pi_hat: np.ndarray, b_init: np.ndarray, designs,
                     include_imputed_target: bool = True) -> StabilityResult:
    """Scan the distinct selection probabilities for the BIC-minimal cutoff.

    Thresholding is applied to the initial estimates; every candidate level
    is scored by the across-imputation average BIC of the thresholded vector
    and ties go to the larger threshold (the smaller model).
    """
    pi_hat = np.asarray(pi_hat, dtype=float)
    b_init = np.asarray(b_init, dtype=float)
    thresholds = np.unique(pi_hat)
    avg = np.empty(thresholds.size)
    ks = np.empty(thresholds.size, dtype=np.int64)
    for i, pi in enumerate(thresholds):
        masked = np.where(pi_hat >= pi, b_init, 0.0)
        ks[i] = int(np.count_nonzero(masked))
        avg[i] = float(np.mean([
            threshold_bic(d, masked, include_imputed_target) for d in designs
        ]))
    best = 0
    for i in range(1, thresholds.size):
        if avg[i] <= avg[best]:  # ties go to the larger threshold
            best = i
    pi_star = float(thresholds[best])
    stable = np.flatnonzero(pi_hat >= pi_star)
    flagged = not np.any(b_init)
    if flagged:
        pi_star = float(pi_hat.max())
        stable = np.array([], dtype=np.int64)
    return StabilityResult(pi_hat, pi_star, stable, thresholds, ks, avg, flagged)


def amirl_estimates(b_init: np.ndarray, stable_set) -> np.ndarray:
    """Final coefficients: initial estimates masked to the stable set."""
    b_init = np.asarray(b_init, dtype=float)
    mask = np.zeros(b_init.size, dtype=bool)
    mask[np.asarray(stable_set, dtype=np.int64)] = True
    return np.where(mask, b_init, 0.0)


# -- report -----------------------------------------------------------------


@dataclass
class AmirlReport:
    mode: str
    criterion: str
    target: str
    covariates: list
    importance: np.ndarray
    b_init: np.ndarray
    b_final: np.ndarray
    b_final_destd: np.ndarray
    stability: StabilityResult
    fixed_effects: np.ndarray  # per unit (pooled: length 1), original scale
    unit_ids: list
    fit: FitStats
    intervals: list  # CoefficientInterval on the standardized scale
    lambda_grid_max: float
    grid_size: int
    grid_decay: float
    seed: int
    config: dict
    diagnostics: object = None  # correlation table (DataFrame) when M >= 2
    audit_step2: np.ndarray = None  # (M, B, p) post-lasso refits
    audit_step3: np.ndarray = None  # (M, B, p) candidate-restricted refits

    @property
    def stable_set(self) -> np.ndarray:
        return self.stability.stable_set

    def stable_names(self) -> list:
        return [self.covariates[j] for j in self.stability.stable_set]

    def to_dict(self) -> dict:
        iv = {c.index: c for c in self.intervals}

        def ci(j, attr):
            return float(getattr(iv[j], attr)) if j in iv else None

        return {
            "mode": self.mode,
            "criterion": self.criterion,
            "target": self.target,
            "seed": self.seed,
            "lambda_max": self.lambda_grid_max,
            "grid": {"size": self.grid_size, "decay": self.grid_decay},
            "pi_star": self.stability.pi_star,
            "stable_set": [self.covariates[j] for j in self.stability.stable_set],
            "empty_stable_set_flagged": self.stability.empty_flagged,
            "coefficients": [
                {
                    "variable": name,
                    "importance": float(self.importance[j]),
                    "pi_hat": float(self.stability.pi_hat[j]),
                    "b_init": float(self.b_init[j]),
                    "b_final": float(self.b_final[j]),
                    "b_final_destd": float(self.b_final_destd[j]),
                    "selected": bool(j in set(self.stability.stable_set.tolist())),
                    "ci_low": ci(j, "lower"),
                    "ci_high": ci(j, "upper"),
                    "significant": bool(iv[j].significant) if j in iv else None,
                }
                for j, name in enumerate(self.covariates)
            ],
            "threshold_table": [
                {"pi": float(pi), "k": int(k), "avg_bic": float(v)}
                for pi, k, v in zip(self.stability.thresholds,
                                    self.stability.threshold_k,
                                    self.stability.threshold_bic)
            ],
            "fit": {
                "r2_overall": self.fit.r2_overall,
                "r2_overall_adj": self.fit.r2_overall_adj,
                "r2_within": self.fit.r2_within,
                "r2_within_adj": self.fit.r2_within_adj,
                "n_imputations": self.fit.n_imputations,
            },
            "fixed_effects": {
                str(u): float(a) for u, a in zip(self.unit_ids, self.fixed_effects)
            },
            "config": self.config,
        }


# -- the pipeline ------------------------------------------------------------


def _config_echo(config: PipelineConfig) -> dict:
    echo = asdict(config)
    echo["tree_controls"] = asdict(config.tree_controls)
    # execution details, not statistical configuration: results are
    # independent of them, and reports must be byte-identical across workers
    echo.pop("threads")
    echo.pop("keep_audit")
    return echo


def _stable_ols_estimator(designs, stable_set, j_pos, demeaned):
    """Estimator closure for interval construction: the stable-set OLS
    coefficient of one variable, averaged across imputations."""

    def estimator(units):
        total = 0.0
        for d in designs:
            rows = (_block_rows(units, d.n_periods)
                    if d.n_periods > 1 else np.asarray(units))
            xs, ys = d.fit_arrays(rows, demeaned)
            coef, *_ = np.linalg.lstsq(xs[:, stable_set], ys, rcond=None)
            total += coef[j_pos]
        return total / len(designs)

    return estimator


def _confidence_intervals(designs, stable_set, config, demeaned):
    intervals = []
    if stable_set.size == 0:
        return intervals
    for j_pos, j in enumerate(stable_set):
        est = _stable_ols_estimator(designs, stable_set, j_pos, demeaned)
        intervals.append(
            bca_interval(est, designs[0].n_units, level=config.ci_level,
                         n_resamples=config.ci_resamples, seed=config.seed,
                         index=int(j))
        )
    return intervals


def _destandardized(designs, b_final):
    """Original-scale slopes and unit intercepts, averaged over imputations."""
    destd = np.zeros_like(b_final)
    alphas = np.zeros(designs[0].y_raw_unit_means.size)
    for d in designs:
        scale = d.y_scale[1] / d.x_scale[1]
        beta_raw = b_final * scale
        destd += beta_raw
        if d.n_intercepts == 1:
            alphas += np.full(alphas.size,
                              float(np.mean(d.y_raw_unit_means - d.x_raw_unit_means @ beta_raw)))
        else:
            alphas += recover_fixed_effects(beta_raw, d.y_raw_unit_means,
                                            d.x_raw_unit_means)
    return destd / len(designs), alphas / len(designs)


def _flatten_to_rows(data: PanelDataset) -> PanelDataset:
    """Repack an unbalanced panel as independent rows (pooled mode only):
    structurally absent unit-years are dropped, each survivor becomes its own
    single-period pseudo-unit."""
    n, t, p = data.values.shape
    values = data.values.reshape(n * t, p)
    mask = data.mask.reshape(n * t, p)
    keep = np.flatnonzero(mask.any(axis=1))
    return PanelDataset(
        unit_ids=[f"row{k:06d}" for k in range(keep.size)],
        time_points=[0],
        variables=list(data.variables),
        values=values[keep][:, None, :],
        mask=mask[keep][:, None, :],
    )


def run_pipeline(data: PanelDataset, config: PipelineConfig) -> AmirlReport:
    """Run the configured mode end to end and assemble the report."""
    target_idx = data.target_index()
    covariate_idx = data.covariate_indices()
    if not covariate_idx:
        raise PipelineError("no covariates to select from")
    target_name = data.variables[target_idx].name
    cov_names = [data.variables[j].name for j in covariate_idx]

    if config.mode in (MODE_AMIRL, MODE_LASSO_OLS):
        if not data.is_balanced():
            raise UnbalancedPanelError(
                "unbalanced input: extract a balanced window first "
                "(see select_balanced_window)"
            )
        if data.n_periods < 2:
            raise PipelineError("fixed effect unidentifiable: need at least two periods")
    elif not data.is_balanced():
        data = _flatten_to_rows(data)

    if config.mode == MODE_LASSO_OLS:
        return _run_lasso_ols(data, config, target_idx, covariate_idx,
                              target_name, cov_names)

    demeaned = config.mode == MODE_AMIRL
    n_intercepts = data.n_units if demeaned else 1

    imputed = run_mice(data, config.imputation_config(), n_jobs=config.threads)
    designs = [
        prepare_design(d, target_idx, covariate_idx, data.variable_names,
                       demean=demeaned, n_intercepts=n_intercepts)
        for d in imputed
    ]

    lam_max = pooled_lambda_max(_lambda_zero_pass(designs, config))
    if lam_max <= 0:
        raise PipelineError("degenerate target: zero penalty threshold everywhere")
    grid = build_lambda_grid(lam_max, config.grid_size, config.grid_decay)

    tensor2 = step2_estimates(designs, grid, config)
    importance = compute_importance(tensor2)
    b_init, tensor3 = initial_estimates(designs, importance, grid, config)
    pi_hat = stability_probabilities(designs, importance, grid, config)
    stability = select_threshold(pi_hat, b_init, designs,
                                 config.include_imputed_target_in_threshold)
    b_final = amirl_estimates(b_init, stability.stable_set)

    b_destd, alphas = _destandardized(designs, b_final)
    stats = fit_statistics(designs, b_final)
    intervals = (_confidence_intervals(designs, stability.stable_set, config, demeaned)
                 if config.compute_ci else [])
    diagnostics = (correlation_diagnostics(data, imputed)
                   if config.n_imputations >= 2 else None)

    return AmirlReport(
        mode=config.mode,
        criterion=config.criterion,
        target=target_name,
        covariates=cov_names,
        importance=importance.values,
        b_init=b_init,
        b_final=b_final,
        b_final_destd=b_destd,
        stability=stability,
        fixed_effects=alphas if n_intercepts > 1 else alphas[:1],
        unit_ids=list(data.unit_ids) if n_intercepts > 1 else ["(intercept)"],
        fit=stats,
        intervals=intervals,
        lambda_grid_max=float(lam_max),
        grid_size=len(grid),
        grid_decay=config.grid_decay,
        seed=config.seed,
        config=_config_echo(config),
        diagnostics=diagnostics,
        audit_step2=tensor2 if config.keep_audit else None,
        audit_step3=tensor3 if config.keep_audit else None,
    )


def _run_lasso_ols(data, config, target_idx, covariate_idx, target_name, cov_names):
    """Baseline: single mean imputation, demeaned criterion-tuned lasso-OLS."""
    values = placeholder_impute(data)
    imputed = ImputedDataset(values, data.mask.copy(), 0, 0, config.seed)
    design = prepare_design(imputed, target_idx, covariate_idx,
                            data.variable_names, demean=True,
                            n_intercepts=data.n_units)
    lam_max = lambda_max(design.x_dd, design.y_dd)
    if lam_max <= 0:
        raise PipelineError("degenerate target: zero penalty threshold")
    grid = build_lambda_grid(lam_max, config.grid_size, config.grid_decay)
    sigma2 = (full_model_sigma2(design.x_dd, design.y_dd, design.n_intercepts)
              if config.criterion == CP else None)
    try:
        _, sol = select_lambda_oc(design.x_dd, design.y_dd, grid,
                                  config.criterion, design.n_intercepts, sigma2)
        b_final, _ = post_lasso_ols(sol.active_set, design.x_dd, design.y_dd)
    except LassoError as exc:
        raise PipelineError(f"baseline fit failed: {exc}") from exc

    pi_hat = (b_final != 0.0).astype(float)
    stable = np.flatnonzero(b_final != 0.0)
    stability = StabilityResult(
        pi_hat=pi_hat, pi_star=1.0, stable_set=stable,
        thresholds=np.unique(pi_hat),
        threshold_k=np.array([stable.size] * np.unique(pi_hat).size),
        threshold_bic=np.full(np.unique(pi_hat).size, np.nan),
        empty_flagged=stable.size == 0,
    )
    designs = [design]
    b_destd, alphas = _destandardized(designs, b_final)
    stats = fit_statistics(designs, b_final)
    intervals = (_confidence_intervals(designs, stable, config, True)
                 if config.compute_ci else [])
    return AmirlReport(
        mode=config.mode,
        criterion=config.criterion,
        target=target_name,
        covariates=cov_names,
        importance=np.abs(b_final),
        b_init=b_final.copy(),
        b_final=b_final,
        b_final_destd=b_destd,
        stability=stability,
        fixed_effects=alphas,
        unit_ids=list(data.unit_ids),
        fit=stats,
        intervals=intervals,
        lambda_grid_max=float(lam_max),
        grid_size=len(grid),
        grid_decay=config.grid_decay,
        seed=config.seed,
        config=_config_echo(config),
    )
