"""Pearson correlation and independent two-sample t-tests with exact two-tailed p-values."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc


@dataclass(frozen=True)
class StatTestResult:
    statistic: float | None
    p_value: float | None
    df: float
    n: int


def t_two_tailed_p(t: float, df: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return float(min(1.0, max(0.0, betainc(0.5 * df, 0.5, df / (df + t * t)))))


def pearson(x, y) -> StatTestResult:
    """Product-moment correlation with a two-tailed test of ``r = 0`` on ``n - 2`` df."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-D samples of equal length")
    n = len(x)
    if n < 3:
        raise ValueError("pearson needs at least three observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson is undefined for a constant sample")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        return StatTestResult(r, 0.0, df, n)
    t = r * math.sqrt(df / (1.0 - r * r))
    return StatTestResult(r, t_two_tailed_p(t, df), df, n)


def ttest_ind(a, b, welch: bool = False) -> StatTestResult:
    """Independent two-sample t-test (pooled variance by default, Welch if asked).

    When both samples are constant and equal the statistic is undefined and
    returned as ``None`` along with its p-value.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("each sample needs at least two observations")
    ma, mb = a.mean(), b.mean()
    va = float(((a - ma) ** 2).sum() / (na - 1))
    vb = float(((b - mb) ** 2).sum() / (nb - 1))
    diff = float(ma - mb)
    if welch:
        se2 = va / na + vb / nb
        if se2 > 0:
            df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
        else:
            df = float(na + nb - 2)
    else:
        df = float(na + nb - 2)
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se2 = pooled * (1.0 / na + 1.0 / nb)
    if se2 == 0.0:
        if diff == 0.0:
            return StatTestResult(None, None, df, na + nb)
        return StatTestResult(math.copysign(math.inf, diff), 0.0, df, na + nb)
    t = diff / math.sqrt(se2)
    return StatTestResult(t, t_two_tailed_p(t, df), df, na + nb)
