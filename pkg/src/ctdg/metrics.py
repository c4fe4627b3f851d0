"""Workload metrics: set similarity, access-distribution fits, load CV."""

from __future__ import annotations

import numpy as np


def jaccard(set_a, set_b) -> float:
    """|A intersect B| / |A union B|; 0 when both sets are empty."""
    a, b = set(set_a), set(set_b)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def coefficient_of_variation(values) -> float:
    """Population stddev over mean; defined as 0 for zero mean."""
    arr = np.asarray(values, dtype=np.float64)
    if len(arr) == 0:
        return 0.0
    mean = arr.mean()
    if mean == 0:
        return 0.0
    return float(arr.std() / mean)


def _r2(x: np.ndarray, y: np.ndarray) -> float:
    """R^2 of an ordinary least-squares line fit of y on x."""
    coeffs = np.polyfit(x, y, 1)
    pred = np.polyval(coeffs, x)
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - ss_res / ss_tot


def access_distribution(counts) -> dict:
    """Rank-frequency analysis of access counts.

    Fits a line to the rank-frequency curve in log-log space (power law) and
    in lin-log space (exponential) and reports both R^2 values, so a caller
    can judge which shape the workload follows. Zero counts are excluded
    from the fit; all-zero input is an error.
    """
    arr = np.asarray(counts, dtype=np.float64)
    if len(arr) == 0 or not np.any(arr > 0):
        raise ValueError("access counts are all zero; distribution fit undefined")
    freq = np.sort(arr[arr > 0])[::-1]
    ranks = np.arange(1, len(freq) + 1, dtype=np.float64)
    degenerate = bool(np.all(freq == freq[0]))
    if degenerate or len(freq) < 3:
        powerlaw_r2 = exponential_r2 = float("nan")
    else:
        powerlaw_r2 = _r2(np.log(ranks), np.log(freq))
        exponential_r2 = _r2(ranks, np.log(freq))
    return {
        "ranks": ranks,
        "frequencies": freq,
        "powerlaw_r2": powerlaw_r2,
        "exponential_r2": exponential_r2,
        "degenerate": degenerate,
    }
