"""Confidence machinery shared by the statistical checkers.

One-sided empirical-Bernstein bounds for means of bounded samples,
Clopper-Pearson binomial bounds, and a Hill-estimator heavy-tail guard.
All bounds are conservative and distribution-free; callers apply Bonferroni
across grid points by shrinking delta.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps


def empirical_bernstein_ucb(samples, delta: float) -> float:
    """Upper 1-delta confidence bound on the mean using the observed range.

    mean + sqrt(2 v log(2/d) / n) + 7 R log(2/d) / (3 (n-1)), R the sample
    range.  The range is taken from the data, so for unbounded variables this
    is statistical evidence, not proof.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        return float("inf")
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    rng_width = float(x.max() - x.min())
    log_term = math.log(2.0 / delta)
    return mean + math.sqrt(2.0 * var * log_term / n) + 7.0 * rng_width * log_term / (3.0 * (n - 1))


def mean_ci(samples, z: float = 1.959963984540054) -> tuple[float, float, float]:
    """(mean, half-width, stderr) with a normal-approximation two-sided CI."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return mean, z * se, se


def binom_ucb(k: int, n: int, delta: float) -> float:
    """Clopper-Pearson upper bound on a binomial proportion."""
    if k >= n:
        return 1.0
    return float(sps.beta.ppf(1.0 - delta, k + 1, n - k))


def binom_lcb(k: int, n: int, delta: float) -> float:
    """Clopper-Pearson lower bound on a binomial proportion."""
    if k <= 0:
        return 0.0
    return float(sps.beta.ppf(delta, k, n - k + 1))


def adjusted_sigma(k: int, n: int) -> float:
    """Agresti-Coull style standard error; never zero at k = 0 or k = n."""
    p = (k + 2.0) / (n + 4.0)
    return math.sqrt(p * (1.0 - p) / n)


def hill_tail_index(samples, top_fraction: float = 0.05) -> float | None:
    """Hill estimator of the tail index from the largest order statistics.

    Values <= 1 suggest an infinite mean; the checkers treat indices below
    ~1.5 as heavy-tail warnings.  Returns None when there is not enough
    spread to estimate.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    x = x[x > 0]
    if x.size < 20:
        return None
    k = max(5, int(top_fraction * x.size))
    top = x[-k:]
    x_k = top[0]
    if x_k <= 0 or np.all(top == x_k):
        return None
    logs = np.log(top / x_k)
    mean_log = float(logs.mean())
    if mean_log <= 0:
        return None
    return 1.0 / mean_log


def truncated_mean_report(samples, quantile: float = 1.0 - 1e-6) -> dict:
    """Mean after truncating at an empirical quantile, plus the clipped mass.

    Used for moment estimates of the form E[a^T] where rare huge samples make
    the raw mean unstable; the clipped contribution is reported alongside so
    the caller can see what the truncation removed.
    """
    x = np.asarray(samples, dtype=float)
    cut = float(np.quantile(x, quantile))
    clipped = x[x > cut]
    kept = np.minimum(x, cut)
    return {
        "mean": float(kept.mean()),
        "cutoff": cut,
        "clipped_count": int(clipped.size),
        "clipped_mass": float((clipped - cut).sum() / x.size) if clipped.size else 0.0,
        "raw_mean": float(x.mean()),
    }


def decreasing_within_tol(values, rel_tol: float = 1e-12) -> int | None:
    """Index of the first strict increase, or None if non-increasing."""
    v = np.asarray(values, dtype=float)
    inc = np.nonzero(np.diff(v) > rel_tol * np.maximum(1.0, np.abs(v[:-1])))[0]
    return int(inc[0] + 1) if inc.size else None
