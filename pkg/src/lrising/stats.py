"""Error bars for Markov chain time series and simple trend tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

MIN_BATCHES = 8


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n_samples: int
    tau_int: float

    def z_score(self, target: float) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean == target else math.inf
        return (self.mean - target) / self.stderr


def exact_estimate(value: float) -> Estimate:
    return Estimate(float(value), 0.0, 0, 0.5)


def tau_int(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with self-consistent window W >= c tau(W)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        return 0.5
    y = x - x.mean()
    var = y @ y / n
    if var == 0:
        return 0.5
    f = np.fft.rfft(y, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = 0.5
    for w in range(1, n):
        tau += acf[w]
        if w >= c * tau:
            break
    return max(float(tau), 0.5)


def batch_means(x, n_batches: int = 16) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if n_batches < MIN_BATCHES:
        raise ValueError(f"need at least {MIN_BATCHES} batches")
    size = len(x) // n_batches
    if size < 1:
        raise ValueError("fewer samples than batches")
    b = x[len(x) - size * n_batches:].reshape(n_batches, size).mean(axis=1)
    return float(b.mean()), float(b.std(ddof=1) / math.sqrt(n_batches))


def estimate_series(x, n_batches: int = 16) -> Estimate:
    x = np.asarray(x, dtype=float)
    mean, se = batch_means(x, n_batches)
    return Estimate(mean, se, len(x), tau_int(x))


def merge_estimates(parts) -> Estimate:
    """Combine independent chains; callers pass them ordered by chain id."""
    parts = list(parts)
    if len(parts) == 1:
        return parts[0]
    n = sum(p.n_samples for p in parts)
    mean = math.fsum(p.n_samples * p.mean for p in parts) / n
    se = math.sqrt(math.fsum((p.n_samples / n) ** 2 * p.stderr ** 2 for p in parts))
    tau = math.fsum(p.n_samples * p.tau_int for p in parts) / n
    return Estimate(mean, se, n, tau)


def kendall_trend(values, alternative: str = "two-sided") -> tuple[float, float]:
    """Kendall tau of ``values`` against their index, with its p-value."""
    v = np.asarray(values, dtype=float)
    if len(v) < 3:
        return 0.0, 1.0
    res = sps.kendalltau(np.arange(len(v)), v, alternative=alternative)
    tau = 0.0 if np.isnan(res.statistic) else float(res.statistic)
    p = 1.0 if np.isnan(res.pvalue) else float(res.pvalue)
    return tau, p


def weighted_linear_fit(x, y, sigma=None):
    """Least squares y = a + b x; returns (a, b, stderr_a, stderr_b)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if sigma is None else 1.0 / np.maximum(np.asarray(sigma, dtype=float), 1e-300) ** 2
    X = np.stack([np.ones_like(x), x], axis=1)
    A = X.T @ (X * w[:, None])
    coef = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    if sigma is None:
        resid = y - X @ coef
        dof = max(len(x) - 2, 1)
        cov = cov * (resid @ resid / dof)
    return float(coef[0]), float(coef[1]), float(math.sqrt(cov[0, 0])), float(math.sqrt(cov[1, 1]))
