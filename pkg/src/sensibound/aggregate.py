"""Deterministic aggregation of per-query CAPO bounds.

CATE intervals difference the two arms' CAPO intervals; APO and ATE are
plain means over an empirical covariate set.  The aggregates are valid
(they contain every selection of per-x values inside their intervals) but
not sharp in general.
"""

from __future__ import annotations

import numpy as np


def _check_pair(lower, upper, name):
    if not (np.isfinite(lower) and np.isfinite(upper)):
        raise ValueError(f"{name} bounds must be finite")
    if lower > upper:
        raise ValueError(f"{name} bounds are unordered: {lower} > {upper}")


def cate_bounds(lower0, upper0, lower1, upper1):
    """CATE interval from the two arms' CAPO intervals at one x."""
    _check_pair(lower0, upper0, "arm-0")
    _check_pair(lower1, upper1, "arm-1")
    return (lower1 - upper0, upper1 - lower0)


def apo_bounds(bounds):
    """Componentwise mean of per-x (lower, upper) CAPO bounds."""
    if len(bounds) == 0:
        raise ValueError("bounds list is empty")
    for lo, hi in bounds:
        _check_pair(lo, hi, "per-x")
    arr = np.asarray(bounds, dtype=float)
    return (float(arr[:, 0].mean()), float(arr[:, 1].mean()))


def ate_bounds(cate_bounds_list):
    """Componentwise mean of per-x CATE bounds."""
    return apo_bounds(cate_bounds_list)
