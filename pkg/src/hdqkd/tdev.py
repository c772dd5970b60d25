"""Time deviation of a clock-offset series."""

from __future__ import annotations

import numpy as np

from .errors import SeriesTooShort

__all__ = ["tdev", "tdev_white_pm"]


def tdev(x, sample_interval: float, taus) -> np.ndarray:
    """Overlapping time deviation at averaging times ``taus``.

    ``TDEV(m)^2 = <(sum_{j=i}^{i+m-1} x[j+2m] - 2 x[j+m] + x[j])^2> / (6 m^2)``
    with ``m = tau / sample_interval``. For ``m = 1`` this is the plain second
    difference ``<(x[i+2] - 2x[i+1] + x[i])^2>/6``. A linear ramp gives 0 and
    white phase noise falls as ``tau**-0.5``.

    Raises
    ------
    SeriesTooShort
        If the series holds fewer than ``3 m`` samples for some ``tau``.
    """
    x = np.asarray(x, dtype=float)
    if sample_interval <= 0:
        raise ValueError("sample_interval must be positive")
    out = []
    csum = np.concatenate([[0.0], np.cumsum(x)])
    for tau in np.atleast_1d(np.asarray(taus, dtype=float)):
        m = int(round(tau / sample_interval))
        if m < 1 or abs(m * sample_interval - tau) > 1e-9 * tau:
            raise ValueError(f"tau={tau} is not a multiple of the sample interval")
        n = len(x) - 3 * m + 1
        if n < 1:
            raise SeriesTooShort(f"need at least {3 * m} samples for tau={tau}, have {len(x)}")
        i = np.arange(n)
        # block sums of length m starting at i, i+m, i+2m
        s0 = csum[i + m] - csum[i]
        s1 = csum[i + 2 * m] - csum[i + m]
        s2 = csum[i + 3 * m] - csum[i + 2 * m]
        second = s2 - 2.0 * s1 + s0
        out.append(np.sqrt(np.mean(second**2) / (6.0 * m * m)))
    return np.asarray(out)


def tdev_white_pm(sigma: float, m) -> np.ndarray:
    """Expected TDEV (root of the mean square) for white phase noise of std ``sigma``."""
    return sigma / np.sqrt(np.asarray(m, dtype=float))
