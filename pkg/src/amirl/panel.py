"""Panel data containers, balanced-window extraction, and the within-transformation.

A panel is a rectangular unit x time x variable array with an explicit
observation mask.  Everything downstream (imputation, penalised fitting,
inference) consumes this representation; the helpers here also cover
standardisation, per-unit demeaning, and recovery of the unit intercepts
from a fitted slope vector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
import pandas as pd

CONTINUOUS = "continuous"
BINARY = "binary"

ROLE_TARGET = "target"
ROLE_COVARIATE = "covariate"
ROLE_EXCLUDED = "excluded"


class PanelError(ValueError):
    """Raised for structurally invalid panel inputs."""


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str = CONTINUOUS
    role: str = ROLE_COVARIATE

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, BINARY):
            raise PanelError(f"unknown variable kind {self.kind!r}")
        if self.role not in (ROLE_TARGET, ROLE_COVARIATE, ROLE_EXCLUDED):
            raise PanelError(f"unknown variable role {self.role!r}")


@dataclass
class PanelDataset:
    """Rectangular panel: values[i, t, j] for unit i, period t, variable j.

    ``mask`` is True where a value was actually observed.  Binary variables
    must be 0/1 wherever observed.
    """

    unit_ids: list
    time_points: list
    variables: list  # of Variable
    values: np.ndarray  # (N, T, p) float
    mask: np.ndarray  # (N, T, p) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        n, t, p = len(self.unit_ids), len(self.time_points), len(self.variables)
        if self.values.shape != (n, t, p):
            raise PanelError(
                f"values shape {self.values.shape} does not match "
                f"(units={n}, periods={t}, variables={p})"
            )
        if self.mask.shape != self.values.shape:
            raise PanelError("mask and values must have identical dimensions")
        if list(self.time_points) != sorted(self.time_points):
            raise PanelError("time points must be ordered")
        for j, var in enumerate(self.variables):
            if var.kind == BINARY:
                observed = self.values[:, :, j][self.mask[:, :, j]]
                if observed.size and not np.isin(observed, (0.0, 1.0)).all():
                    raise PanelError(f"binary variable {var.name!r} has values outside {{0, 1}}")

    # -- shape helpers -------------------------------------------------

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_periods(self) -> int:
        return len(self.time_points)

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def variable_names(self) -> list:
        return [v.name for v in self.variables]

    def column(self, name: str) -> int:
        try:
            return self.variable_names.index(name)
        except ValueError:
            raise PanelError(f"unknown variable {name!r}") from None

    def is_balanced(self) -> bool:
        """True when every (unit, period) row has at least one observation."""
        return bool(self.mask.any(axis=2).all())

    def missing_fraction(self) -> float:
        return float(1.0 - self.mask.mean())

    def with_roles(self, target: str, excluded: Sequence[str] = ()) -> "PanelDataset":
        """Return a copy with ``target``/``excluded`` roles reassigned."""
        excluded = set(excluded)
        unknown = ({target} | excluded) - set(self.variable_names)
        if unknown:
            raise PanelError(f"unknown variable {sorted(unknown)[0]!r}")
        if target in excluded:
            raise PanelError(f"target {target!r} cannot also be excluded")
        new_vars = []
        for v in self.variables:
            if v.name == target:
                role = ROLE_TARGET
            elif v.name in excluded:
                role = ROLE_EXCLUDED
            else:
                role = ROLE_COVARIATE
            new_vars.append(Variable(v.name, v.kind, role))
        return replace(self, variables=new_vars)

    def target_index(self) -> int:
        idx = [j for j, v in enumerate(self.variables) if v.role == ROLE_TARGET]
        if len(idx) != 1:
            raise PanelError(f"expected exactly one target variable, found {len(idx)}")
        return idx[0]

    def covariate_indices(self) -> list:
        return [j for j, v in enumerate(self.variables) if v.role == ROLE_COVARIATE]

    # -- I/O -----------------------------------------------------------

    @classmethod
    def from_long(cls, frame: pd.DataFrame, binary: Sequence[str] = None) -> "PanelDataset":
        """Build a panel from a long table with columns unit, year, variable, value.

        Absent rows and empty values both count as missing.  Variable kinds
        are inferred (binary iff all observed values are 0/1) unless listed
        explicitly in ``binary``.
        """
        required = {"unit", "year", "variable", "value"}
        if not required.issubset(frame.columns):
            raise PanelError(f"long table needs columns {sorted(required)}")
        if frame.empty:
            raise PanelError("no data")
        units = sorted(frame["unit"].unique(), key=str)
        years = sorted(int(y) for y in frame["year"].unique())
        names = list(pd.unique(frame["variable"]))
        n, t, p = len(units), len(years), len(names)
        values = np.full((n, t, p), np.nan)
        uix = {u: i for i, u in enumerate(units)}
        tix = {y: i for i, y in enumerate(years)}
        vix = {v: i for i, v in enumerate(names)}
        val = pd.to_numeric(frame["value"], errors="coerce").to_numpy()
        rows = frame["unit"].map(uix).to_numpy()
        cols = frame["year"].astype(int).map(tix).to_numpy()
        depth = frame["variable"].map(vix).to_numpy()
        values[rows, cols, depth] = val
        mask = np.isfinite(values)
        values[~mask] = 0.0
        variables = _infer_variables(names, values, mask, binary)
        return cls(units, years, variables, values, mask)

    @classmethod
    def from_wide(cls, frame: pd.DataFrame, binary: Sequence[str] = None) -> "PanelDataset":
        """Build a panel from a wide table: one row per (unit, year)."""
        if not {"unit", "year"}.issubset(frame.columns):
            raise PanelError("wide table needs 'unit' and 'year' columns")
        if frame.empty:
            raise PanelError("no data")
        names = [c for c in frame.columns if c not in ("unit", "year")]
        units = sorted(frame["unit"].unique(), key=str)
        years = sorted(int(y) for y in frame["year"].unique())
        n, t, p = len(units), len(years), len(names)
        values = np.full((n, t, p), np.nan)
        uix = {u: i for i, u in enumerate(units)}
        tix = {y: i for i, y in enumerate(years)}
        rows = frame["unit"].map(uix).to_numpy()
        cols = frame["year"].astype(int).map(tix).to_numpy()
        block = frame[names].apply(pd.to_numeric, errors="coerce").to_numpy()
        values[rows, cols, :] = block
        mask = np.isfinite(values)
        values[~mask] = 0.0
        variables = _infer_variables(names, values, mask, binary)
        return cls(units, years, variables, values, mask)

    def to_wide(self) -> pd.DataFrame:
        """Wide frame with one row per (unit, year); missing cells become NaN."""
        n, t, p = self.values.shape
        out = self.values.reshape(n * t, p).copy()
        out[~self.mask.reshape(n * t, p)] = np.nan
        frame = pd.DataFrame(out, columns=self.variable_names)
        frame.insert(0, "year", np.tile(self.time_points, n))
        frame.insert(0, "unit", np.repeat(self.unit_ids, t))
        return frame

    def to_long(self) -> pd.DataFrame:
        wide = self.to_wide()
        long = wide.melt(id_vars=["unit", "year"], var_name="variable", value_name="value")
        return long.sort_values(["unit", "year", "variable"], kind="stable").reset_index(drop=True)


def _infer_variables(names, values, mask, binary):
    binary = set(binary or ())
    variables = []
    for j, name in enumerate(names):
        observed = values[:, :, j][mask[:, :, j]]
        is_binary = name in binary or (observed.size > 0 and np.isin(observed, (0.0, 1.0)).all())
        variables.append(Variable(str(name), BINARY if is_binary else CONTINUOUS))
    return variables


# -- balanced-window extraction -----------------------------------------


@dataclass(frozen=True)
class WindowCandidate:
    """A candidate balanced window [start_year, end_year] with its unit count."""

    start_year: int
    end_year: int
    n_units: int

    @property
    def length(self) -> int:
        return self.end_year - self.start_year + 1

    @property
    def panel_size(self) -> int:
        return self.n_units * self.length


def default_availability(values: np.ndarray, mask: np.ndarray) -> bool:
    """A unit-year counts as available when it has any observed non-zero value."""
    return bool((mask & (values != 0.0)).any())


def select_balanced_window(
    raw: pd.DataFrame,
    min_length: int = 1,
    slack: float = 0.01,
    availability: Callable[[np.ndarray, np.ndarray], bool] = default_availability,
) -> list:
    """Enumerate and rank every contiguous year window of a long-format table.

    A unit belongs to a window when the availability predicate holds in every
    year of the window.  Windows whose panel size is within ``slack`` of the
    best panel size are preferred, longest span first, then larger panel,
    then earlier start; the remaining windows follow, larger panel first.

    Parameters
    ----------
    raw : long table with columns unit, year, variable, value.
    min_length : smallest admissible window length in years.
    slack : fraction of the maximum panel size defining the preference band.
    availability : predicate on the (p,) values/mask slice of one unit-year.

    Returns
    -------
    list of WindowCandidate, best first.
    """
    panel = PanelDataset.from_long(raw)
    years = panel.time_points
    n, t = panel.n_units, panel.n_periods

    # availability[i, t] = unit i usable in year t
    avail = np.zeros((n, t), dtype=bool)
    for i in range(n):
        for k in range(t):
            avail[i, k] = availability(panel.values[i, k], panel.mask[i, k])

    candidates = []
    for a in range(t):
        ok = avail[:, a].copy()
        for b in range(a, t):
            if b > a:
                ok &= avail[:, b]
            length = b - a + 1
            if length < min_length:
                continue
            candidates.append(WindowCandidate(years[a], years[b], int(ok.sum())))

    feasible = [c for c in candidates if c.n_units > 0]
    if not feasible:
        raise PanelError("no feasible window")

    best = max(c.panel_size for c in feasible)
    cutoff = (1.0 - slack) * best

    def sort_key(c: WindowCandidate):
        in_band = c.panel_size >= cutoff
        if in_band:
            return (0, -c.length, -c.panel_size, c.start_year)
        return (1, -c.panel_size, -c.length, c.start_year)

    return sorted(feasible, key=sort_key)


def extract_window(panel: PanelDataset, window: WindowCandidate,
                   availability: Callable = default_availability) -> PanelDataset:
    """Restrict a panel to the units available throughout ``window``."""
    t_keep = [k for k, y in enumerate(panel.time_points) if window.start_year <= y <= window.end_year]
    keep_units = []
    for i in range(panel.n_units):
        if all(availability(panel.values[i, k], panel.mask[i, k]) for k in t_keep):
            keep_units.append(i)
    if not keep_units:
        raise PanelError("no feasible window")
    return PanelDataset(
        [panel.unit_ids[i] for i in keep_units],
        [panel.time_points[k] for k in t_keep],
        list(panel.variables),
        panel.values[np.ix_(keep_units, t_keep)],
        panel.mask[np.ix_(keep_units, t_keep)],
    )


# -- transformations -----------------------------------------------------


@dataclass
class DemeanedPanel:
    """Per-unit time-demeaned values plus the unit means needed to refold."""

    values: np.ndarray  # (N, T, p)
    unit_means: np.ndarray  # (N, p)


def within_transform(values: np.ndarray) -> DemeanedPanel:
    """Remove the per-unit time mean from every variable.

    Requires complete data (run after imputation) and at least two periods,
    otherwise the unit intercept is not identified.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 3:
        raise PanelError("expected a (units, periods, variables) array")
    if values.shape[1] < 2:
        raise PanelError("fixed effect unidentifiable: need at least two periods per unit")
    if not np.isfinite(values).all():
        raise PanelError("within transform requires complete data")
    unit_means = values.mean(axis=1)
    return DemeanedPanel(values - unit_means[:, None, :], unit_means)


def standardize(columns: np.ndarray, names: Sequence[str] = None):
    """Scale each column to zero mean and unit sample standard deviation.

    Uses the n-1 denominator.  Constant columns are rejected by name since a
    zero-variance regressor cannot be scaled.

    Returns (standardized matrix, means, sds).
    """
    x = np.asarray(columns, dtype=float)
    if x.ndim != 2:
        raise PanelError("expected a 2-d matrix of columns")
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(sds > 0))
    if bad.size:
        label = names[bad[0]] if names is not None else f"column {bad[0]}"
        raise PanelError(f"constant column {label!r} cannot be standardized")
    return (x - means) / sds, means, sds


def recover_fixed_effects(beta: np.ndarray, y_unit_means: np.ndarray,
                          x_unit_means: np.ndarray) -> np.ndarray:
    """Unit intercepts implied by a slope vector: a_i = mean_y_i - mean_x_i' beta."""
    beta = np.asarray(beta, dtype=float)
    x_unit_means = np.asarray(x_unit_means, dtype=float)
    if x_unit_means.ndim != 2 or x_unit_means.shape[1] != beta.shape[0]:
        raise PanelError(
            f"dimension mismatch: beta has {beta.shape[0]} entries, "
            f"unit means have {x_unit_means.shape[-1]} columns"
        )
    return np.asarray(y_unit_means, dtype=float) - x_unit_means @ beta
