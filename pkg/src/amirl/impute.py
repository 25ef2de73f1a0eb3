"""Chained-equation multiple imputation on panels.

Each of the M completed data sets starts from a column-mean placeholder fill
and then runs C update cycles.  A cycle visits every incomplete variable in a
freshly permuted order, refits a model of that variable on the current values
of all others (a random-intercept tree for continuous variables, a
classification tree for binary ones), and rewrites its missing cells with the
model predictions.  Observed cells are never touched.

Randomness enters only through the per-(m, cycle) visit permutations; every
stream is derived from the top-level seed with a distinct spawn key, so the M
jobs are order-independent and reproducible under any scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .panel import BINARY, PanelDataset, within_transform
from .reem import fit_reem
from .trees import (TreeControls, fit_classification_tree, fit_regression_tree,
                    predict_label)

_MICE_STREAM = 1


class ImputationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ImputationConfig:
    n_imputations: int = 10  # M
    n_cycles: int = 20  # C
    seed: int = 0
    tree_controls: TreeControls = field(default_factory=TreeControls)
    reem_tol: float = 1e-4
    reem_max_iter: int = 50
    clip_bounded: bool = True
    use_random_intercepts: bool = True  # False = plain trees (pooled baseline)

    def __post_init__(self):
        if self.n_imputations < 1 or self.n_cycles < 1:
            raise ImputationError("need at least one imputation and one cycle")


@dataclass
class ImputedDataset:
    """One completed copy of a panel; observed cells equal the source exactly."""

    values: np.ndarray  # (N, T, p), complete
    mask: np.ndarray  # copy of the source observation mask
    m_index: int
    n_cycles: int
    seed: int


def placeholder_impute(data: PanelDataset) -> np.ndarray:
    """Fill every missing cell with the observed column mean.

    Binary columns get the mean rounded to {0, 1}, ties going to 0 so the
    result is always a legal class label.
    """
    values = data.values.copy()
    for j, var in enumerate(data.variables):
        col = values[:, :, j]
        obs = data.mask[:, :, j]
        if not obs.any():
            raise ImputationError(f"variable {var.name!r} has no observed values")
        mean = col[obs].mean()
        if var.kind == BINARY:
            mean = 1.0 if mean > 0.5 else 0.0
        col[~obs] = mean
    return values


def _bounded_unit_interval(observed: np.ndarray) -> bool:
    return observed.size > 0 and observed.min() >= 0.0 and observed.max() <= 1.0


def clip_to_unit_interval(predictions: np.ndarray) -> np.ndarray:
    """Clamp imputations of a [0, 1]-bounded variable back into range."""
    return np.clip(predictions, 0.0, 1.0)


def _impute_one(data: PanelDataset, config: ImputationConfig, m: int) -> ImputedDataset:
    n, t, p = data.values.shape
    mask_flat = data.mask.reshape(n * t, p)
    unit_of_row = np.repeat(np.arange(n), t)
    current = placeholder_impute(data).reshape(n * t, p)

    incomplete = [j for j in range(p) if not mask_flat[:, j].all()]
    bounded = {
        j: _bounded_unit_interval(data.values[:, :, j][data.mask[:, :, j]])
        for j in incomplete
    }
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_MICE_STREAM, m)))

    for cycle in range(config.n_cycles):
        order = rng.permutation(len(incomplete))
        for j in (incomplete[k] for k in order):
            obs = mask_flat[:, j]
            attrs = np.delete(current, j, axis=1)
            response = data.values.reshape(n * t, p)[:, j]
            kind = data.variables[j].kind
            if obs.sum() < 2:  # nothing to model: keep the placeholder fill
                continue
            try:
                if kind == BINARY:
                    tree = fit_classification_tree(attrs[obs], response[obs],
                                                   config.tree_controls)
                    predicted = predict_label(tree, attrs[~obs])
                elif config.use_random_intercepts:
                    model = fit_reem(attrs[obs], response[obs], unit_of_row[obs],
                                     config.tree_controls, config.reem_tol,
                                     config.reem_max_iter)
                    predicted = model.predict(attrs[~obs], unit_of_row[~obs])
                else:
                    tree = fit_regression_tree(attrs[obs], response[obs],
                                               config.tree_controls)
                    predicted = tree.predict(attrs[~obs])
            except Exception as exc:
                raise ImputationError(
                    f"imputation m={m} cycle={cycle} variable="
                    f"{data.variables[j].name!r} failed: {exc}"
                ) from exc
            if kind != BINARY and config.clip_bounded and bounded[j]:
                predicted = clip_to_unit_interval(predicted)
            current[~obs, j] = predicted

    return ImputedDataset(
        values=current.reshape(n, t, p),
        mask=data.mask.copy(),
        m_index=m,
        n_cycles=config.n_cycles,
        seed=config.seed,
    )


def run_mice(data: PanelDataset, config: ImputationConfig,
             n_jobs: int = 1) -> list:
    """Produce M completed copies of ``data``.

    The M jobs are independent and may run on a worker pool; results are
    returned in m order regardless of scheduling.
    """
    for j, var in enumerate(data.variables):
        if not data.mask[:, :, j].any():
            raise ImputationError(f"variable {var.name!r} has no observed values")
    if config.n_imputations == 1 or n_jobs == 1:
        return [_impute_one(data, config, m) for m in range(config.n_imputations)]
    return Parallel(n_jobs=n_jobs)(
        delayed(_impute_one)(data, config, m) for m in range(config.n_imputations)
    )


def imputed_to_wide(source: PanelDataset, imputed: list) -> pd.DataFrame:
    """Stack completed data sets into one wide frame with an ``m`` column."""
    frames = []
    for d in imputed:
        n, t, p = d.values.shape
        frame = pd.DataFrame(d.values.reshape(n * t, p),
                             columns=source.variable_names)
        frame.insert(0, "year", np.tile(source.time_points, n))
        frame.insert(0, "unit", np.repeat(source.unit_ids, t))
        frame.insert(0, "m", d.m_index)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def correlation_diagnostics(source: PanelDataset, imputed: list) -> pd.DataFrame:
    """Pairwise-complete vs imputed correlations for every variable pair.

    For each pair the table reports the correlation over cells observed on
    both sides, the mean and standard deviation of the correlation across the
    imputed data sets, and the same two spread measures on the standardised,
    time-demeaned data.  Correlations are scale-free, so the demeaned values
    double as the standardised-and-demeaned ones.  Pairs with fewer than 3
    complete cases are flagged rather than computed.
    """
    if len(imputed) < 2:
        raise ImputationError("need at least two imputed data sets for a spread")
    n, t, p = source.values.shape
    values = source.values.reshape(n * t, p)
    mask = source.mask.reshape(n * t, p)

    raw_imp = [d.values.reshape(n * t, p) for d in imputed]
    demeaned_imp = [
        within_transform(d.values).values.reshape(n * t, p) for d in imputed
    ]

    names = source.variable_names
    rows = []
    for a in range(p):
        for b in range(a + 1, p):
            both = mask[:, a] & mask[:, b]
            entry = {"var_a": names[a], "var_b": names[b], "n_complete": int(both.sum())}
            if both.sum() < 3:
                entry.update(
                    r_complete=np.nan, r_imputed_mean=np.nan, r_imputed_sd=np.nan,
                    r_demeaned_mean=np.nan, r_demeaned_sd=np.nan, flagged=True,
                )
            else:
                r_raw = [_corr(v[:, a], v[:, b]) for v in raw_imp]
                r_dd = [_corr(v[:, a], v[:, b]) for v in demeaned_imp]
                entry.update(
                    r_complete=_corr(values[both, a], values[both, b]),
                    r_imputed_mean=float(np.mean(r_raw)),
                    r_imputed_sd=float(np.std(r_raw, ddof=1)),
                    r_demeaned_mean=float(np.mean(r_dd)),
                    r_demeaned_sd=float(np.std(r_dd, ddof=1)),
                    flagged=False,
                )
            rows.append(entry)
    return pd.DataFrame(rows)


def _corr(x, y):
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return np.nan
    return float(np.corrcoef(x, y)[0, 1])
