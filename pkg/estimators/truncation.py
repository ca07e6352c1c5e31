"""Truncated realized variation, bipower variation and threshold calibration."""
from __future__ import annotations

import math
from typing import Sequence

import numba as nb
import numpy as np


class EstimatorInputError(ValueError):
    """Raised when an estimator receives increments it cannot work with."""


def _as_increments(increments: Sequence[float] | np.ndarray) -> np.ndarray:
    return np.asarray(increments, dtype=np.float64).ravel()


def trqv(increments: Sequence[float] | np.ndarray, eps: float) -> float:
    """Truncated realized quadratic variation ``Σ Δ² 1{|Δ| <= eps}``."""
    x = _as_increments(increments)
    kept = x[np.abs(x) <= eps]
    return math.fsum(kept * kept)


def realized_variance(increments: Sequence[float] | np.ndarray) -> float:
    x = _as_increments(increments)
    return math.fsum(x * x)


def bipower_sigma2(increments: Sequence[float] | np.ndarray) -> float:
    """Bipower variation ``(pi/2) Σ_{i>=2} |Δ_{i-1}| |Δ_i|``."""
    x = np.abs(_as_increments(increments))
    if x.size < 2:
        raise EstimatorInputError("bipower variation needs at least two increments")
    return (math.pi / 2.0) * math.fsum(x[1:] * x[:-1])


def threshold(c0: float, h: float, omega: float) -> float:
    """Truncation level ``eps = c0 h^omega``."""
    return c0 * h**omega


class TruncatedVariation:
    """Sorted view of one block of increments answering ``trqv`` at any threshold.

    Squared increments are sorted by absolute size once; each query is a
    binary search plus a lookup in the compensated cumulative sum, so the
    many thresholds used by the debiasing steps cost ``O(log n)`` each.
    The result depends only on the multiset of increments.
    """

    def __init__(self, increments: Sequence[float] | np.ndarray) -> None:
        x = _as_increments(increments)
        abs_sorted = np.sort(np.abs(x))
        squares = abs_sorted * abs_sorted
        self._abs_sorted = abs_sorted
        # compensated prefix sums keep the differences of nearby thresholds accurate
        self._cumulative = np.concatenate(([0.0], _compensated_cumsum(squares)))
        self.size = x.size

    def __call__(self, eps: float | np.ndarray) -> float | np.ndarray:
        counts = np.searchsorted(self._abs_sorted, eps, side="right")
        values = self._cumulative[counts]
        return float(values) if np.ndim(values) == 0 else values

    @property
    def total(self) -> float:
        return float(self._cumulative[-1])


@nb.njit(cache=True)
def _compensated_cumsum(values):
    """Kahan-compensated running sum."""
    out = np.empty_like(values)
    total = 0.0
    carry = 0.0
    for i in range(values.size):
        y = values[i] - carry
        t = total + y
        carry = (t - total) - y
        total = t
        out[i] = total
    return out


__all__ = [
    "EstimatorInputError",
    "trqv",
    "realized_variance",
    "bipower_sigma2",
    "threshold",
    "TruncatedVariation",
]
