"""Hypothesis tests used by the design analysis: Welch's t-test for
continuous design variables, Pearson's chi-squared for discrete ones, and
Fisher's method for combining per-environment p-values.

The underlying regularized incomplete beta / gamma functions are implemented
with the classic series / continued-fraction evaluations (absolute accuracy
around 1e-10 over the argument ranges that occur here).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_FPMIN = 1e-300
_EPS = 1e-15
_MAX_ITER = 500

P_FLOOR = 1e-300


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


def gammainc_lower_reg(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if x < 0.0 or a <= 0.0:
        raise ValueError("gammainc requires x >= 0 and a > 0")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammainc_upper_reg(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x) = 1 - P(a, x)."""
    if x < 0.0 or a <= 0.0:
        raise ValueError("gammainc requires x >= 0 and a > 0")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def _gamma_series(a: float, x: float) -> float:
    ap = a
    total = 1.0 / a
    term = total
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


@dataclass(frozen=True)
class StatTest:
    p_value: float
    statistic: float
    dof: float
    degenerate: bool = False


def welch_t_test(sample_a, sample_b) -> StatTest:
    """Two-sided Welch's t-test with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two observations")
    na, nb = len(a), len(b)
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    if se2 == 0.0:
        return StatTest(
            p_value=1.0 if ma == mb else 0.0,
            statistic=0.0 if ma == mb else math.inf,
            dof=float(na + nb - 2),
            degenerate=True,
        )
    t = (ma - mb) / math.sqrt(se2)
    dof = se2**2 / (sa**2 / (na - 1) + sb**2 / (nb - 1))
    p = betainc_reg(dof / 2.0, 0.5, dof / (dof + t * t))
    return StatTest(p_value=min(max(p, 0.0), 1.0), statistic=float(t), dof=float(dof))


def chi_squared_test(table) -> StatTest:
    """Pearson chi-squared test of independence on a 2 x k contingency table."""
    obs = np.asarray(table, dtype=float)
    if obs.ndim != 2 or obs.shape[0] != 2 or obs.shape[1] < 2:
        raise ValueError("contingency table must be 2 x k with k >= 2")
    if np.any(obs < 0):
        raise ValueError("counts must be nonnegative")
    row = obs.sum(axis=1)
    col = obs.sum(axis=0)
    n = obs.sum()
    if np.any(row == 0) or np.any(col == 0) or n == 0:
        return StatTest(p_value=1.0, statistic=0.0, dof=float(obs.shape[1] - 1), degenerate=True)
    expected = np.outer(row, col) / n
    stat = float(np.sum((obs - expected) ** 2 / expected))
    dof = obs.shape[1] - 1
    p = gammainc_upper_reg(dof / 2.0, stat / 2.0)
    return StatTest(p_value=min(max(p, 0.0), 1.0), statistic=stat, dof=float(dof))


def chi_squared_gof(observed, expected) -> StatTest:
    """Goodness-of-fit test of observed counts against expected counts."""
    obs = np.asarray(observed, dtype=float)
    exp = np.asarray(expected, dtype=float)
    if obs.shape != exp.shape or obs.ndim != 1:
        raise ValueError("observed and expected must be 1-D with matching shapes")
    if np.any(exp <= 0):
        raise ValueError("expected counts must be positive")
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(obs) - 1
    p = gammainc_upper_reg(dof / 2.0, stat / 2.0)
    return StatTest(p_value=min(max(p, 0.0), 1.0), statistic=stat, dof=float(dof))


def fisher_combine(p_values) -> StatTest:
    """Fisher's method: X^2 = -2 sum(ln p_i) against chi-squared with 2k dof."""
    ps = np.asarray(p_values, dtype=float)
    if len(ps) == 0:
        raise ValueError("need at least one p-value")
    if np.any(ps <= 0) or np.any(ps > 1):
        ps = np.clip(ps, P_FLOOR, 1.0)
    stat = float(-2.0 * np.sum(np.log(np.maximum(ps, P_FLOOR))))
    dof = 2 * len(ps)
    p = gammainc_upper_reg(dof / 2.0, stat / 2.0)
    return StatTest(p_value=min(max(p, 0.0), 1.0), statistic=stat, dof=float(dof))
