"""Regression trees with unit-level random intercepts.

The model for a continuous panel variable is

    x[i, t] = u_i + mu(leaf of attributes[i, t]) + e[i, t]

with u_i a random intercept per unit.  Fitting alternates between a
regression tree on the intercept-adjusted response and a linear mixed model
on the tree's leaf indicators, until the restricted log-likelihood settles.

The random-intercept-plus-leaf-means structure lets REML be profiled down to
a one-dimensional search over the variance ratio psi = var(u) / var(e): for
fixed psi the GLS leaf means, the BLUP intercepts, and the residual variance
are all closed-form group sums, so no general mixed-model solver is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .trees import DecisionTree, TreeControls, fit_regression_tree

_LOG_PSI_LO = -30.0
_LOG_PSI_HI = 25.0


class ReemError(RuntimeError):
    """Fit failure; carries the last iterate where sensible."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass
class LmmFit:
    """Random-intercept linear mixed model on a leaf partition."""

    leaf_ids: np.ndarray  # distinct leaf labels, sorted
    leaf_means: np.ndarray  # GLS estimate per leaf
    unit_labels: np.ndarray  # distinct unit labels, sorted
    random_intercepts: np.ndarray  # BLUP per unit
    resid_variance: float
    intercept_variance: float
    reml_loglik: float

    def mean_for_leaf(self, leaf_id) -> float:
        return float(self.leaf_means[np.searchsorted(self.leaf_ids, leaf_id)])


class _LmmWorkspace:
    """Index structures reused across REML objective evaluations."""

    def __init__(self, leaf_index, y, unit_ids):
        self.y = np.asarray(y, dtype=float).ravel()
        leaf_index = np.asarray(leaf_index).ravel()
        unit_ids = np.asarray(unit_ids).ravel()
        if not (self.y.shape == leaf_index.shape == unit_ids.shape):
            raise ReemError("leaf_index, y and unit_ids must have equal length")
        if self.y.size == 0:
            raise ReemError("empty input")
        self.leaf_ids, self.leaf_of = np.unique(leaf_index, return_inverse=True)
        self.unit_labels, self.unit_of = np.unique(unit_ids, return_inverse=True)
        self.n = self.y.size
        self.q = self.leaf_ids.size
        self.n_units = self.unit_labels.size
        self.leaf_counts = np.bincount(self.leaf_of, minlength=self.q).astype(float)
        self.unit_counts = np.bincount(self.unit_of, minlength=self.n_units).astype(float)
        self.leaf_sums = np.bincount(self.leaf_of, weights=self.y, minlength=self.q)
        # cross-counts: rows of leaf p falling in unit i
        self.cross = np.zeros((self.q, self.n_units))
        np.add.at(self.cross, (self.leaf_of, self.unit_of), 1.0)
        self.unit_sums = np.bincount(self.unit_of, weights=self.y, minlength=self.n_units)

    def solve(self, psi):
        """GLS leaf means, BLUPs and profiled REML pieces at a variance ratio."""
        ci = psi / (1.0 + psi * self.unit_counts)
        A = np.diag(self.leaf_counts) - (self.cross * ci) @ self.cross.T
        rhs = self.leaf_sums - self.cross @ (ci * self.unit_sums)
        try:
            mu = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            mu = np.linalg.lstsq(A, rhs, rcond=None)[0]
        resid = self.y - mu[self.leaf_of]
        s = np.bincount(self.unit_of, weights=resid, minlength=self.n_units)
        # The all-ones direction of A weakens as psi grows (a constant moves
        # freely between leaf means and intercepts), so re-impose its normal
        # equation sum_i s_i / (1 + psi T_i) = 0 exactly; the shift is linear
        # and leaves the well-conditioned directions untouched.
        w = 1.0 / (1.0 + psi * self.unit_counts)
        shift = float(np.sum(s * w) / np.sum(self.unit_counts * w))
        mu = mu + shift
        resid = resid - shift
        s = s - self.unit_counts * shift
        unit_mean = s / self.unit_counts
        within_sse = np.bincount(
            self.unit_of, weights=(resid - unit_mean[self.unit_of]) ** 2,
            minlength=self.n_units,
        )
        # r' V0^-1 r written as non-negative group sums (no cancellation)
        quad = float(np.sum(within_sse + s * s / (self.unit_counts * (1.0 + psi * self.unit_counts))))
        df = self.n - self.q
        if df <= 0:
            raise ReemError("more leaves than residual degrees of freedom")
        sigma2 = max(quad / df, 1e-300)
        sign, logdet_a = np.linalg.slogdet(A)
        if sign <= 0:
            logdet_a = np.inf
        neg2_reml = (
            df * np.log(sigma2)
            + float(np.sum(np.log1p(psi * self.unit_counts)))
            + logdet_a
            + df
        )
        u_hat = psi * s / (1.0 + psi * self.unit_counts)
        return mu, u_hat, sigma2, neg2_reml


def fit_lmm_on_leaves(leaf_index, y, unit_ids, tol: float = 1e-6,
                      max_iter: int = 200) -> LmmFit:
    """REML fit of y = u_unit + mu_leaf + e over the leaf partition.

    The variance ratio is found by a bounded scalar search on the log scale;
    the boundary psi = 0 (no random intercept) is always evaluated and kept
    when it wins.

    Raises ReemError (carrying the last iterate) if the scalar search hits
    its iteration cap without converging.
    """
    ws = _LmmWorkspace(leaf_index, y, unit_ids)

    def objective(log_psi):
        return ws.solve(np.exp(log_psi))[3]

    res = minimize_scalar(
        objective, bounds=(_LOG_PSI_LO, _LOG_PSI_HI), method="bounded",
        options={"xatol": tol, "maxiter": max_iter},
    )
    if not res.success:
        raise ReemError(
            f"variance-ratio search did not converge within {max_iter} evaluations",
            last_iterate=float(np.exp(res.x)),
        )
    psi = float(np.exp(res.x))
    boundary = ws.solve(0.0)
    interior = ws.solve(psi)
    if boundary[3] <= interior[3]:
        psi, (mu, u_hat, sigma2, neg2) = 0.0, boundary
    else:
        mu, u_hat, sigma2, neg2 = interior
    return LmmFit(
        leaf_ids=ws.leaf_ids,
        leaf_means=mu,
        unit_labels=ws.unit_labels,
        random_intercepts=u_hat,
        resid_variance=float(sigma2),
        intercept_variance=float(psi * sigma2),
        reml_loglik=-0.5 * float(neg2),
    )


@dataclass
class ReemModel:
    """Alternating tree / mixed-model fit with adjusted leaf responses."""

    tree: DecisionTree  # leaf values already replaced by the GLS leaf means
    lmm: LmmFit
    iterations: int
    converged: bool
    loglik_trace: list

    def predict(self, X: np.ndarray, unit_ids) -> np.ndarray:
        """Leaf mean plus the unit's estimated intercept.

        Units outside the estimation sample get intercept zero: there is no
        data to estimate their random effect from.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        unit_ids = np.asarray(unit_ids).ravel()
        base = self.tree.predict(X)
        pos = np.searchsorted(self.lmm.unit_labels, unit_ids)
        pos = np.clip(pos, 0, self.lmm.unit_labels.size - 1)
        seen = self.lmm.unit_labels[pos] == unit_ids
        u = np.where(seen, self.lmm.random_intercepts[pos], 0.0)
        return base + u


def fit_reem(X_attrs: np.ndarray, x_response: np.ndarray, unit_ids,
             controls: TreeControls = TreeControls(), tol: float = 1e-4,
             max_iter: int = 50) -> ReemModel:
    """Alternate tree estimation and mixed-model updates until the restricted
    log-likelihood changes by less than ``tol``.

    Starts from zero intercepts; the returned tree's leaf predictions are the
    mixed model's leaf means, so ``predict`` is consistent with the final fit.
    When the alternation cap is reached the model is returned with
    ``converged=False`` and the caller decides.
    """
    X_attrs = np.atleast_2d(np.asarray(X_attrs, dtype=float))
    x_response = np.asarray(x_response, dtype=float).ravel()
    unit_ids = np.asarray(unit_ids).ravel()
    unit_labels, unit_of = np.unique(unit_ids, return_inverse=True)
    u = np.zeros(unit_labels.size)

    tree = None
    lmm = None
    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        tree = fit_regression_tree(X_attrs, x_response - u[unit_of], controls)
        leaves = tree.apply(X_attrs)
        lmm = fit_lmm_on_leaves(leaves, x_response, unit_ids)
        u = lmm.random_intercepts
        trace.append(lmm.reml_loglik)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break

    adjusted = tree.with_leaf_values(
        {int(leaf): lmm.mean_for_leaf(leaf) for leaf in lmm.leaf_ids}
    )
    return ReemModel(adjusted, lmm, iterations, converged, trace)


def predict_reem(model: ReemModel, X: np.ndarray, unit_ids) -> np.ndarray:
    return model.predict(X, unit_ids)
