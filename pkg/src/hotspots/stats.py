"""Small statistics helpers: Wilson intervals, mean intervals, slopes."""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import stats as _st

Z95 = float(_st.norm.ppf(0.975))


class Estimate(NamedTuple):
    value: float
    lo: float
    hi: float
    n: int

    @property
    def half_width(self):
        return 0.5 * (self.hi - self.lo)

    def as_dict(self):
        return {"value": self.value, "lo": self.lo, "hi": self.hi, "n": self.n}


def wilson(k, n, z=Z95) -> Estimate:
    """Wilson score interval for a binomial proportion ``k / n``."""
    if n <= 0:
        return Estimate(float("nan"), 0.0, 1.0, 0)
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return Estimate(float(p), lo, hi, int(n))


def mean_ci(x, z=Z95) -> Estimate:
    """Sample mean with a normal-approximation interval."""
    x = np.asarray(x, float)
    n = x.size
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return Estimate(m, m - z * se, m + z * se, int(n))


def std_error(x):
    x = np.asarray(x, float)
    return float(x.std(ddof=1) / math.sqrt(x.size))


def log_slope(t, p, weights=None):
    """Least-squares slope of ``log p`` against ``t`` (points with p > 0)."""
    t = np.asarray(t, float)
    p = np.asarray(p, float)
    ok = p > 0
    if ok.sum() < 2:
        return float("nan")
    w = None if weights is None else np.sqrt(np.asarray(weights, float)[ok])
    return float(np.polyfit(t[ok], np.log(p[ok]), 1, w=w)[0])


def reflected_normal_cdf(y, x0, t):
    """CDF of |x0 + N(0, t)| restricted to [0, inf) (reflected Brownian motion on a half-line)."""
    s = math.sqrt(t)
    y = np.asarray(y, float)
    return np.where(y < 0, 0.0, _st.norm.cdf((y - x0) / s) - _st.norm.cdf((-y - x0) / s))


def ks_1samp(x, cdf):
    r = _st.kstest(np.asarray(x, float), cdf)
    return float(r.statistic), float(r.pvalue)


def ks_2samp(a, b):
    r = _st.ks_2samp(np.asarray(a, float), np.asarray(b, float))
    return float(r.statistic), float(r.pvalue)


def spearman(a, b):
    return float(_st.spearmanr(a, b)[0])
