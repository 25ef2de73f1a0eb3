"""L1-penalised least squares on demeaned designs, plus model-choice criteria.

The objective is the empirical-norm form

    (1/n) * ||y - X theta||^2  +  lambda * ||theta||_1

with n the number of rows, solved by cyclic coordinate descent on the Gram
matrix.  The matching zero threshold is lambda_max = (2/n) * max_j |X_j' y|.
Everything here is deterministic; randomisation (bootstrap, candidate
subsets) lives in the pipeline module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

MAX_SWEEPS = 100_000
CD_TOL = 1e-7

BIC = "bic"
AIC = "aic"
CP = "cp"
CRITERIA = (BIC, AIC, CP)


class LassoError(RuntimeError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass
class LassoSolution:
    lam: float
    coefficients: np.ndarray
    objective: float
    iterations: int

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients != 0.0)


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray  # strictly decreasing
    lambda_max: float
    delta: float

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class CriterionValue:
    kind: str
    value: float
    k_used: int
    sigma2_hat: float


@njit(cache=True)
def _cd_gram(gram, xty, n, lam, theta, tol, max_sweeps):  # pragma: no cover
    p = gram.shape[0]
    thr = 0.5 * n * lam
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            rho = xty[j] - np.dot(gram[j], theta) + gjj * theta[j]
            if rho > thr:
                new = (rho - thr) / gjj
            elif rho < -thr:
                new = (rho + thr) / gjj
            else:
                new = 0.0
            delta = abs(new - theta[j])
            if delta > max_delta:
                max_delta = delta
            theta[j] = new
        if max_delta < tol:
            return sweep + 1
    return -1


def _objective(X, y, theta, lam):
    resid = y - X @ theta
    n = y.size
    return float(resid @ resid / n + lam * np.abs(theta).sum())


def lasso_fit(X: np.ndarray, y: np.ndarray, lam: float,
              theta0: np.ndarray = None, tol: float = CD_TOL) -> LassoSolution:
    """Cyclic coordinate descent for one penalty level.

    Converged when the largest coefficient change in a sweep drops below
    ``tol``; raises LassoError carrying the last iterate after the sweep cap.
    ``theta0`` provides an optional warm start.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if lam < 0:
        raise LassoError("negative penalty")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise LassoError("non-finite design or response")
    theta = np.zeros(X.shape[1]) if theta0 is None else np.array(theta0, dtype=float)
    gram = X.T @ X
    xty = X.T @ y
    sweeps = _cd_gram(gram, xty, float(y.size), float(lam), theta, tol, MAX_SWEEPS)
    if sweeps < 0:
        raise LassoError(
            f"coordinate descent did not converge in {MAX_SWEEPS} sweeps",
            last_iterate=theta,
        )
    return LassoSolution(float(lam), theta, _objective(X, y, theta, lam), int(sweeps))


def lasso_path(X: np.ndarray, y: np.ndarray, grid: LambdaGrid,
               tol: float = CD_TOL) -> list:
    """Solutions along a decreasing penalty grid, warm-started left to right."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    gram = X.T @ X
    xty = X.T @ y
    n = float(y.size)
    theta = np.zeros(X.shape[1])
    out = []
    for lam in grid.values:
        sweeps = _cd_gram(gram, xty, n, float(lam), theta, tol, MAX_SWEEPS)
        if sweeps < 0:
            raise LassoError(
                f"coordinate descent did not converge in {MAX_SWEEPS} sweeps",
                last_iterate=theta,
            )
        out.append(LassoSolution(float(lam), theta.copy(),
                                 _objective(X, y, theta, lam), int(sweeps)))
    return out


def kkt_violation(X: np.ndarray, y: np.ndarray, solution: LassoSolution) -> float:
    """Largest stationarity violation of a solution, for testing and audits.

    At an exact optimum the correlation (2/n) X_j'(y - X theta) equals
    lambda * sign(theta_j) on the active set and lies within [-lambda,
    lambda] elsewhere.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    theta = solution.coefficients
    corr = 2.0 / y.size * (X.T @ (y - X @ theta))
    active = theta != 0.0
    worst = 0.0
    if active.any():
        worst = float(np.max(np.abs(corr[active] - solution.lam * np.sign(theta[active]))))
    if (~active).any():
        worst = max(worst, float(np.max(np.abs(corr[~active]) - solution.lam)))
    return worst


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty at which the solution is identically zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if not np.any(y):
        return 0.0
    return float(2.0 / y.size * np.max(np.abs(X.T @ y)))


def pooled_lambda_max(lambda_zeros) -> float:
    """Maximum of per-sample zero thresholds (shared-grid construction)."""
    values = list(lambda_zeros)
    if not values:
        raise LassoError("need at least one sample")
    return float(max(values))


def build_lambda_grid(lam_max: float, k: int = 100, delta: float = 0.001) -> LambdaGrid:
    """K log-equally-spaced penalties from lam_max down to delta * lam_max."""
    if lam_max <= 0:
        raise LassoError("lambda_max must be positive to build a grid")
    if k < 1:
        raise LassoError("grid needs at least one point")
    if k == 1:
        values = np.array([lam_max])
    else:
        values = np.exp(np.linspace(math.log(lam_max), math.log(delta * lam_max), k))
    return LambdaGrid(values, float(lam_max), float(delta))


def post_lasso_ols(active_set, X: np.ndarray, y: np.ndarray):
    """OLS refit on the selected columns; zeros elsewhere.

    Collinear selections are repaired by dropping later-indexed columns until
    the remainder has full rank.  Returns (coefficients, dropped_indices).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    active = sorted(int(j) for j in active_set)
    beta = np.zeros(X.shape[1])
    if not active:
        return beta, []
    if np.linalg.matrix_rank(X[:, active]) == len(active):
        kept, dropped = active, []
    else:
        kept = []
        dropped = []
        rank = 0
        for j in active:
            new_rank = np.linalg.matrix_rank(X[:, kept + [j]])
            if new_rank > rank:
                kept.append(j)
                rank = new_rank
            else:
                dropped.append(j)
    coef, *_ = np.linalg.lstsq(X[:, kept], y, rcond=None)
    beta[kept] = coef
    return beta, dropped


def information_criterion(residuals: np.ndarray, n_units: int, n_periods: int,
                          k_used: int, kind: str,
                          sigma2_hat: float = None) -> CriterionValue:
    """Model-choice score of a residual vector.

    ``n_units`` counts the intercept parameters (the per-unit fixed effects;
    1 for a pooled model with a common intercept).  For Mallows' Cp,
    ``sigma2_hat`` must be the residual variance of the model with all
    regressors, estimated with denominator NT - N - p.
    """
    residuals = np.asarray(residuals, dtype=float).ravel()
    nt = residuals.size
    if nt <= 0:
        raise LassoError("empty residual vector")
    rss = float(residuals @ residuals)
    if kind in (BIC, AIC):
        if rss <= 0.0:
            raise LassoError("degenerate fit: zero residual sum of squares")
        base = nt * math.log(rss / nt)
        penalty = (math.log(nt) if kind == BIC else 2.0) * (n_units + k_used)
        return CriterionValue(kind, base + penalty, int(k_used),
                              float(sigma2_hat) if sigma2_hat else float("nan"))
    if kind == CP:
        if sigma2_hat is None or sigma2_hat <= 0:
            raise LassoError("Mallows' Cp needs a positive full-model variance")
        return CriterionValue(CP, rss / sigma2_hat - nt + 2.0 * k_used,
                              int(k_used), float(sigma2_hat))
    raise LassoError(f"unknown criterion {kind!r}")


def full_model_sigma2(X: np.ndarray, y: np.ndarray, n_units: int) -> float:
    """Residual variance of the all-regressors model, denominator NT - N - p."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    nt, p = X.shape
    df = nt - n_units - p
    if df <= 0:
        raise LassoError(
            f"full-model variance undefined: NT - N - p = {df} is not positive"
        )
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return float(resid @ resid / df)


def select_lambda_oc(X: np.ndarray, y: np.ndarray, grid: LambdaGrid, kind: str,
                     n_units: int, sigma2_hat: float = None):
    """Penalty level minimising the requested criterion along the grid.

    Each grid point is scored on the residuals of the bias-reduced refit (OLS
    on that point's active set) with K_used the active-set size, so the
    criterion judges the selection rather than the shrinkage; the returned
    solution is still the raw lasso fit at the winning penalty.  Ties go to
    the larger penalty (the sparser model).
    """
    if kind == CP and (sigma2_hat is None or sigma2_hat <= 0):
        sigma2_hat = full_model_sigma2(X, y, n_units)
    solutions = lasso_path(X, y, grid)
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    best = None
    best_score = math.inf
    refit_cache = {}
    for sol in solutions:  # grid is decreasing: first hit wins ties (larger lambda)
        key = sol.active_set.tobytes()
        if key not in refit_cache:
            refit_cache[key] = post_lasso_ols(sol.active_set, X, y)[0]
        resid = y - X @ refit_cache[key]
        try:
            score = information_criterion(resid, n_units, 0, sol.active_set.size,
                                          kind, sigma2_hat).value
        except LassoError:
            continue
        if score < best_score:
            best_score = score
            best = sol
    if best is None:
        raise LassoError("all fits along the grid were degenerate")
    return best.lam, best
