"""Composite quadrature on uniform grids."""

import numpy as np


def composite_simpson(values, dx, axis=0):
    """Composite Simpson rule over equally spaced samples along ``axis``.

    With an odd number of intervals the last panel is integrated with the
    trapezoid rule. Returns ``(integral, used_fallback)``.
    """
    y = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    n_int = y.shape[0] - 1
    if n_int < 1:
        raise ValueError("need at least two samples")
    fallback = n_int % 2 == 1
    m = n_int - 1 if fallback else n_int
    total = np.zeros(y.shape[1:])
    if m >= 2:
        total = dx / 3.0 * (y[0] + 4.0 * y[1:m:2].sum(axis=0) + 2.0 * y[2:m - 1:2].sum(axis=0) + y[m])
    if fallback:
        total = total + 0.5 * dx * (y[-2] + y[-1])
    return total, fallback


def cumulative_trapezoid(values, t):
    """Running trapezoid integral, starting at 0 (same length as ``t``)."""
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    out[1:] = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(t))
    return out
