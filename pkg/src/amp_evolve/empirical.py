"""Normalized empirical statistics of finite vectors.

All averages divide by the vector length, so ``inner(u, v)`` is
``(1/n) * sum(u * v)`` rather than the Euclidean dot product. Sums go
through numpy's pairwise reduction, which keeps the rounding error at
O(log n) ulps for the sizes used here.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import InvalidInput


def as_sample(v, name: str = "v") -> np.ndarray:
    """Return ``v`` as a contiguous 1-D float array, rejecting empty or non-finite input."""
    arr = np.ascontiguousarray(v, dtype=float)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        raise InvalidInput(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains NaN or Inf")
    return arr


def _mean(x: np.ndarray) -> float:
    return float(np.sum(x) / x.size)


def emp_mean(v) -> float:
    return _mean(as_sample(v))


def emp_second_moment(v) -> float:
    x = as_sample(v)
    return _mean(x * x)


def emp_variance(v) -> float:
    x = as_sample(v)
    d = x - _mean(x)
    return _mean(d * d)


def inner(u, v) -> float:
    """Normalized inner product ``<u, v> = (1/n) sum u_i v_i``."""
    a = as_sample(u, "u")
    b = as_sample(v, "v")
    if a.size != b.size:
        raise InvalidInput(f"length mismatch: {a.size} != {b.size}")
    return _mean(a * b)


def power_mean(v, p: float) -> float:
    """``(1/n) sum |v_i|^p`` for ``p >= 1``."""
    if not p >= 1:
        raise InvalidInput(f"power_mean needs p >= 1, got {p}")
    x = as_sample(v)
    if p == 2:
        return _mean(x * x)
    return _mean(np.abs(x) ** p)


def ks_distance(samples, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """One-sample Kolmogorov-Smirnov statistic of ``samples`` against ``cdf``.

    ``cdf`` must accept an array and return values in [0, 1] that are
    nondecreasing along sorted input.
    """
    x = np.sort(as_sample(samples, "samples"))
    n = x.size
    F = np.asarray(cdf(x), dtype=float)
    if F.shape != x.shape:
        raise InvalidInput("cdf must map an array to an array of the same shape")
    if not np.all(np.isfinite(F)) or F.min() < 0.0 or F.max() > 1.0:
        raise InvalidInput("cdf values must lie in [0, 1]")
    if np.any(np.diff(F) < -1e-12):
        raise InvalidInput("cdf is not nondecreasing")
    i = np.arange(1, n + 1)
    upper = np.abs(i / n - F)
    lower = np.abs((i - 1) / n - F)
    return float(max(upper.max(), lower.max()))
