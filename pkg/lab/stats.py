"""
Small statistical helpers for directional acceptance checks.
"""

import math

import numpy as np
from scipy import stats


def one_sided_greater(a, b):
    """p-value of Welch's t-test for mean(a) > mean(b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    result = stats.ttest_ind(a, b, equal_var=False, alternative='greater')
    p = float(result.pvalue)
    if math.isnan(p):
        # Both samples constant: decide on the means alone.
        return 0.0 if a.mean() > b.mean() else 1.0
    return p


def spearman(x, y):
    result = stats.spearmanr(x, y)
    return float(result.statistic), float(result.pvalue)


def window_means(series, fraction=0.1):
    """Mean of the first and of the last `fraction` of a series."""
    series = np.asarray(series, dtype=np.float64)
    if series.size == 0:
        return math.nan, math.nan
    width = max(1, int(round(series.size * fraction)))
    return float(series[:width].mean()), float(series[-width:].mean())


def non_increasing(values, tolerance=0.0):
    return all(b <= a + tolerance for a, b in zip(values, values[1:]))


def summarize(values):
    values = np.asarray(values, dtype=np.float64)
    return {'mean': float(values.mean()), 'std': float(values.std(ddof=1)) if values.size > 1 else 0.0,
            'n': int(values.size)}
