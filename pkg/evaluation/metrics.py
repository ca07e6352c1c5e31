"""Monte Carlo summary statistics and CLT diagnostics for volatility estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

SUMMARY_COLUMNS = ["estimator", "sample_mean", "sample_sd", "rel_err_mean", "rel_err_sd", "mse", "mad"]


class MetricInputError(ValueError):
    """Raised when a metric receives empty or out-of-domain inputs."""


@dataclass(frozen=True)
class PathRecord:
    """Estimates of one simulated path against its true integrated variance."""

    path: int
    truth: float
    values: Mapping[str, float]
    flags: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class EstimatorSummary:
    estimator: str
    sample_mean: float
    sample_sd: float
    rel_err_mean: float
    rel_err_sd: float
    mse: float
    mad: float
    flagged: int = 0

    def as_row(self) -> dict[str, float | str]:
        return {column: getattr(self, column) for column in SUMMARY_COLUMNS}


@dataclass(frozen=True)
class McSummary:
    estimators: list[EstimatorSummary]
    paths: int
    seed: int | None = None
    wall_time: float = 0.0
    records: tuple[PathRecord, ...] = field(default=(), repr=False, compare=False)

    def __getitem__(self, name: str) -> EstimatorSummary:
        for summary in self.estimators:
            if summary.estimator == name:
                return summary
        raise KeyError(name)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([summary.as_row() for summary in self.estimators], columns=SUMMARY_COLUMNS)


def _sd(values: np.ndarray) -> float:
    if values.size == 1:
        return 0.0
    mean = math.fsum(values) / values.size
    return math.sqrt(math.fsum((values - mean) ** 2) / (values.size - 1))


def summarise_estimator(name: str, estimates: Sequence[float], truths: Sequence[float], *, flagged: int = 0) -> EstimatorSummary:
    """Six-column summary of one estimator; ``truths`` may vary by path."""
    est = np.asarray(estimates, dtype=np.float64)
    truth = np.asarray(truths, dtype=np.float64)
    if est.size == 0:
        raise MetricInputError(f"no estimates for {name!r}")
    if est.shape != truth.shape:
        raise MetricInputError(f"{name!r}: {est.size} estimates for {truth.size} truths")
    if np.any(truth <= 0.0):
        raise MetricInputError(f"{name!r}: true integrated variance must be positive")
    errors = est - truth
    relative = errors / truth
    n = est.size
    return EstimatorSummary(
        estimator=name,
        sample_mean=math.fsum(est) / n,
        sample_sd=_sd(est),
        rel_err_mean=math.fsum(relative) / n,
        rel_err_sd=_sd(relative),
        mse=math.fsum(errors * errors) / n,
        mad=float(np.median(np.abs(errors))),
        flagged=flagged,
    )


def summarise_records(
    records: Iterable[PathRecord],
    names: Sequence[str],
    *,
    seed: int | None = None,
    wall_time: float = 0.0,
) -> McSummary:
    """Ordered reduce over path index; independent of the order records arrive in."""
    ordered = sorted(records, key=lambda record: record.path)
    if not ordered:
        raise MetricInputError("no path records to summarise")
    indices = [record.path for record in ordered]
    if len(set(indices)) != len(indices):
        raise MetricInputError("duplicate path indices in records")
    truths = [record.truth for record in ordered]
    summaries = []
    for name in names:
        values = [record.values[name] for record in ordered]
        flagged = sum(1 for record in ordered if record.flags.get(name))
        summaries.append(summarise_estimator(name, values, truths, flagged=flagged))
    return McSummary(estimators=summaries, paths=len(ordered), seed=seed, wall_time=wall_time, records=tuple(ordered))


def normalized_errors(estimates: Sequence[float], truth: float | Sequence[float], n_steps: int) -> np.ndarray:
    """``sqrt(n) (est - truth) / sqrt(2 truth^2)`` per path; ``truth`` may vary by path."""
    truth = np.asarray(truth, dtype=np.float64)
    if not np.all(truth > 0.0):
        raise MetricInputError(f"truth must be positive, got {truth}")
    if n_steps < 1:
        raise MetricInputError(f"n_steps must be positive, got {n_steps}")
    est = np.asarray(estimates, dtype=np.float64)
    return math.sqrt(n_steps) * (est - truth) / (math.sqrt(2.0) * truth)


def ks_statistic(sample: Sequence[float]) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF and ``N(0, 1)``."""
    values = np.asarray(sample, dtype=np.float64).ravel()
    if values.size == 0:
        raise MetricInputError("KS statistic needs a nonempty sample")
    if not np.all(np.isfinite(values)):
        raise MetricInputError("KS statistic needs finite values")
    return float(stats.kstest(values, "norm").statistic)


def binned_histogram(sample: Sequence[float], bins: int = 40, span: float = 5.0) -> pd.DataFrame:
    """Density histogram on ``[-span, span]`` next to the standard normal density."""
    values = np.asarray(sample, dtype=np.float64).ravel()
    if values.size == 0:
        raise MetricInputError("histogram needs a nonempty sample")
    counts, edges = np.histogram(values, bins=bins, range=(-span, span))
    width = edges[1] - edges[0]
    centers = 0.5 * (edges[:-1] + edges[1:])
    return pd.DataFrame(
        {
            "bin_left": edges[:-1],
            "bin_right": edges[1:],
            "count": counts,
            "density": counts / (values.size * width),
            "normal_density": stats.norm.pdf(centers),
        }
    )


__all__ = [
    "SUMMARY_COLUMNS",
    "MetricInputError",
    "PathRecord",
    "EstimatorSummary",
    "McSummary",
    "summarise_estimator",
    "summarise_records",
    "normalized_errors",
    "ks_statistic",
    "binned_histogram",
]
