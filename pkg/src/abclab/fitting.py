"""Least-squares power-law fits on log-log data."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class LogLogFit(NamedTuple):
    slope: float
    intercept: float
    residual: float
    degenerate: bool


def loglog_fit(x, y) -> LogLogFit:
    """Fit ``log y = slope * log x + intercept``.

    Non-positive or non-finite samples are dropped; fewer than two usable
    samples give a degenerate fit with NaN slope.  ``residual`` is the RMS
    of the log residuals.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if np.count_nonzero(ok) < 2 or np.ptp(np.log(x[ok])) == 0:
        return LogLogFit(float("nan"), float("nan"), float("nan"), True)
    lx, ly = np.log(x[ok]), np.log(y[ok])
    slope, intercept = np.polyfit(lx, ly, 1)
    res = ly - (slope * lx + intercept)
    return LogLogFit(float(slope), float(intercept), float(np.sqrt(np.mean(res ** 2))), False)
