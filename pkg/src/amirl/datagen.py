"""Synthetic panels with known sparse truth, for end-to-end verification.

Generates y[i, t] = alpha_i + x[i, t]' beta + eps[i, t] with block-equicorrelated
covariates and missing-at-random masking driven by a logistic link on one
always-observed covariate.  The ground truth (coefficients, unit intercepts,
masked cells, clean values) rides along so tests can score recovery exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .panel import PanelDataset, Variable, CONTINUOUS, ROLE_COVARIATE, ROLE_TARGET

TARGET_NAME = "y"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    n_units: int = 60
    n_periods: int = 6
    n_covariates: int = 40
    support: tuple = (0, 1, 2)
    beta: tuple = (1.0, -1.0, 0.75)
    fixed_effect_scale: float = 1.0
    noise_scale: float = 1.0
    block_size: int = 1  # 1 = independent covariates
    rho: float = 0.0  # equicorrelation within each block
    missing_rate: float = 0.0
    mar_driver: int = -1  # covariate driving missingness; never masked
    mar_strength: float = 1.5
    mask_target: bool = True
    seed: int = 0

    def __post_init__(self):
        if len(self.support) != len(self.beta):
            raise ScenarioError("support and beta must have equal length")
        if len(set(self.support)) != len(self.support):
            raise ScenarioError("support indices must be distinct")
        if any(not 0 <= j < self.n_covariates for j in self.support):
            raise ScenarioError("support indices must lie in [0, p)")
        if not 0.0 <= self.missing_rate <= 0.9:
            raise ScenarioError("missing rate must lie in [0, 0.9]")
        if not 0.0 <= self.rho <= 0.99:
            raise ScenarioError("rho must lie in [0, 0.99]")
        if self.block_size < 1:
            raise ScenarioError("block size must be positive")

    @property
    def driver_index(self) -> int:
        return self.mar_driver % self.n_covariates

    def beta_full(self) -> np.ndarray:
        beta = np.zeros(self.n_covariates)
        beta[list(self.support)] = self.beta
        return beta


@dataclass
class GroundTruth:
    spec: ScenarioSpec
    beta: np.ndarray  # (p,)
    alpha: np.ndarray  # (N,)
    masked: np.ndarray  # (N, T, p + 1) True where a cell was hidden
    clean: np.ndarray  # (N, T, p + 1) pre-mask values, target first

    def to_json(self, path) -> None:
        payload = {
            "target": TARGET_NAME,
            "support": [int(j) for j in self.spec.support],
            "beta": {f"x{j:03d}": float(b) for j, b in enumerate(self.beta)},
            "alpha": [float(a) for a in self.alpha],
            "n_masked_cells": int(self.masked.sum()),
            "seed": self.spec.seed,
        }
        Path(path).write_text(json.dumps(payload, indent=2))


def _covariate_names(p):
    return [f"x{j:03d}" for j in range(p)]


def generate(spec: ScenarioSpec):
    """Draw one scenario; returns (PanelDataset, GroundTruth).

    The emitted panel has the target variable first, roles already assigned,
    and a mask with the MAR pattern applied.  The driver covariate is never
    masked, so the panel stays balanced.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    n, t, p = spec.n_units, spec.n_periods, spec.n_covariates
    rows = n * t

    x = np.empty((rows, p))
    r = np.sqrt(spec.rho)
    for start in range(0, p, spec.block_size):
        width = min(spec.block_size, p - start)
        shared = rng.standard_normal((rows, 1))
        noise = rng.standard_normal((rows, width))
        x[:, start:start + width] = r * shared + np.sqrt(1.0 - spec.rho) * noise

    alpha = spec.fixed_effect_scale * rng.standard_normal(n)
    eps = spec.noise_scale * rng.standard_normal(rows)
    beta = spec.beta_full()
    y = np.repeat(alpha, t) + x @ beta + eps

    clean = np.concatenate([y[:, None], x], axis=1).reshape(n, t, p + 1)
    masked = np.zeros((n, t, p + 1), dtype=bool)
    if spec.missing_rate > 0:
        driver = x[:, spec.driver_index]
        prob = _calibrated_probabilities(driver, spec.missing_rate, spec.mar_strength)
        maskable = [0] if spec.mask_target else []
        maskable += [1 + j for j in range(p) if j != spec.driver_index]
        draws = rng.random((rows, len(maskable)))
        cell_mask = draws < prob[:, None]
        masked.reshape(rows, p + 1)[:, maskable] = cell_mask

    values = clean.copy()
    values[masked] = 0.0
    variables = [Variable(TARGET_NAME, CONTINUOUS, ROLE_TARGET)] + [
        Variable(name, CONTINUOUS, ROLE_COVARIATE) for name in _covariate_names(p)
    ]
    panel = PanelDataset(
        unit_ids=[f"u{i:04d}" for i in range(n)],
        time_points=list(range(1, t + 1)),
        variables=variables,
        values=values,
        mask=~masked,
    )
    return panel, GroundTruth(spec, beta, alpha, masked, clean)


def _calibrated_probabilities(driver, rate, strength):
    """Logistic missingness probabilities with the requested mean rate."""

    def mean_rate(intercept):
        return float(np.mean(_sigmoid(intercept + strength * driver))) - rate

    lo, hi = -40.0, 40.0
    intercept = brentq(mean_rate, lo, hi, xtol=1e-12)
    return _sigmoid(intercept + strength * driver)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
