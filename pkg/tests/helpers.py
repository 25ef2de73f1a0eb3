"""Shared fixture builders for the test suite."""

import numpy as np
import pandas as pd

from amirl.panel import PanelDataset, Variable, CONTINUOUS, ROLE_COVARIATE, ROLE_TARGET

# Units available exactly in the year interval [start, end]: this multiset
# reproduces the published 2009-2014 availability sub-grid, e.g. 213 units
# spanning the full six years and 321 spanning 2011-2014.
AVAILABILITY_RUNS = {
    (2009, 2009): 12, (2009, 2010): 10, (2009, 2011): 37, (2009, 2012): 39,
    (2009, 2013): 19, (2009, 2014): 213,
    (2010, 2010): 1, (2010, 2011): 23, (2010, 2012): 12, (2010, 2013): 6,
    (2010, 2014): 15,
    (2011, 2011): 33, (2011, 2012): 41, (2011, 2013): 21, (2011, 2014): 93,
    (2012, 2012): 59, (2012, 2013): 19, (2012, 2014): 75,
    (2013, 2013): 31, (2013, 2014): 125,
    (2014, 2014): 150,
}

# The unit counts the fixture must reproduce, keyed by window.
EXPECTED_WINDOW_UNITS = {
    (2009, 2009): 330, (2009, 2010): 318, (2009, 2011): 308, (2009, 2012): 271,
    (2009, 2013): 232, (2009, 2014): 213,
    (2010, 2010): 375, (2010, 2011): 364, (2010, 2012): 304, (2010, 2013): 253,
    (2010, 2014): 228,
    (2011, 2011): 552, (2011, 2012): 459, (2011, 2013): 367, (2011, 2014): 321,
    (2012, 2012): 612, (2012, 2013): 461, (2012, 2014): 396,
    (2013, 2013): 617, (2013, 2014): 521,
    (2014, 2014): 671,
}


def availability_fixture() -> pd.DataFrame:
    """Long table whose per-window availability counts match the sub-grid."""
    rows = []
    unit = 0
    for (start, end), count in AVAILABILITY_RUNS.items():
        for _ in range(count):
            name = f"mfi{unit:05d}"
            unit += 1
            for year in range(start, end + 1):
                rows.append((name, year, "activity", 1.0))
    return pd.DataFrame(rows, columns=["unit", "year", "variable", "value"])


def staggered_fixture() -> pd.DataFrame:
    """Five units with staggered entry and exit plus zero/missing years."""
    spans = {
        "a": [(2000, 1.0), (2001, 1.0), (2002, 1.0), (2003, 1.0)],
        "b": [(2001, 2.0), (2002, 0.0), (2003, 1.0)],  # zero year breaks availability
        "c": [(2000, 3.5), (2001, 1.0)],
        "d": [(2002, 1.0), (2003, 2.0)],
        "e": [(2000, 1.0), (2002, 2.0), (2003, 1.0)],  # gap in 2001
    }
    rows = [
        (unit, year, "v", value)
        for unit, pairs in spans.items() for year, value in pairs
    ]
    return pd.DataFrame(rows, columns=["unit", "year", "variable", "value"])


def small_panel(values: np.ndarray, mask: np.ndarray = None,
                binary=(), target_first=True) -> PanelDataset:
    """Wrap an (N, T, p) array as a PanelDataset, first variable the target."""
    values = np.asarray(values, dtype=float)
    n, t, p = values.shape
    if mask is None:
        mask = np.ones_like(values, dtype=bool)
    variables = []
    for j in range(p):
        role = ROLE_TARGET if (j == 0 and target_first) else ROLE_COVARIATE
        kind = "binary" if j in binary else CONTINUOUS
        variables.append(Variable(f"v{j}", kind, role))
    return PanelDataset(
        unit_ids=[f"u{i}" for i in range(n)],
        time_points=list(range(t)),
        variables=variables,
        values=values,
        mask=np.asarray(mask, dtype=bool),
    )
