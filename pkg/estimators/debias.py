"""One- and two-step debiasing of truncated realized variation.

The sign-aware estimators remove the positive jump bias first
(``eta1 >= 0``) and the remaining negative bias second (``eta2 <= 0``).
A negative estimate triggers a recomputation of the offending ``eta``
with a shrunken threshold; once ``max_retries`` shrinks are spent the
step contributes no correction and the result is flagged.
"""
from __future__ import annotations

import enum
import logging
import math
import sys
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from config import DEFAULT_OMEGA, ConfigurationError
from estimators.truncation import (
    EstimatorInputError,
    TruncatedVariation,
    bipower_sigma2,
    threshold,
)

logger = logging.getLogger(__name__)

_TINY = sys.float_info.min


class EstimateFlag(enum.Flag):
    NEGATIVE_CLAMPED = enum.auto()
    DENOM_GUARDED = enum.auto()
    RETRY_EXHAUSTED = enum.auto()

    @classmethod
    def none(cls) -> "EstimateFlag":
        return cls(0)

    def label(self) -> str:
        return "|".join(flag.name.lower() for flag in EstimateFlag if flag in self)


def omega_window(y: float) -> tuple[float, float]:
    """Admissible range of the threshold exponent for activity index ``y``."""
    lower = max(1.0 / (4.0 - y), 1.0 / (2.0 + y / 2.0))
    return lower, 4.0 / (8.0 + y)


@dataclass(frozen=True)
class EstimatorConfig:
    omega: float = DEFAULT_OMEGA
    c0_mode: Literal["bipower", "fixed"] = "bipower"
    c0: Optional[float] = None
    zeta1: float = 1.2
    zeta2: float = 1.2
    p1: float = 0.65
    p2: float = 0.75
    retry_shrink: float = 2.0 / 3.0
    max_retries: int = 3
    denom_guard: float = 1e-12

    def __post_init__(self) -> None:
        prefix = "estimators"
        if self.c0_mode not in ("bipower", "fixed"):
            raise ConfigurationError(f"{prefix}.c0_mode", f"expected 'bipower' or 'fixed', got {self.c0_mode!r}")
        if self.c0_mode == "fixed" and (self.c0 is None or not self.c0 > 0.0):
            raise ConfigurationError(f"{prefix}.c0", "a positive c0 is required when c0_mode = 'fixed'")
        if not (self.zeta1 > 1.0 and self.zeta2 > 1.0):
            raise ConfigurationError(f"{prefix}.zeta", "zeta1 and zeta2 must exceed 1")
        if not (0.0 < self.p1 <= 1.0 and 0.0 < self.p2 <= 1.0):
            raise ConfigurationError(f"{prefix}.p", "p1 and p2 must lie in (0, 1]")
        if not 0.0 < self.retry_shrink < 1.0:
            raise ConfigurationError(f"{prefix}.retry_shrink", "must lie in (0, 1)")
        if self.max_retries < 0:
            raise ConfigurationError(f"{prefix}.max_retries", "must be non-negative")
        if self.denom_guard < 0.0:
            raise ConfigurationError(f"{prefix}.denom_guard", "must be non-negative")

    def check_window(self, y: float) -> None:
        lower, upper = omega_window(y)
        if not lower < self.omega < upper:
            raise ConfigurationError(
                "estimators.omega",
                f"{self.omega:.6g} is outside the admissible window ({lower:.6g}, {upper:.6g}) for Y={y}",
            )

    def base_threshold(self, increments: np.ndarray, h: float) -> float:
        """``c0 h^omega`` with ``c0`` fixed or the block's annualised bipower volatility."""
        if self.c0_mode == "fixed":
            return threshold(self.c0, h, self.omega)
        span = increments.size * h
        c0 = math.sqrt(bipower_sigma2(increments) / span)
        return threshold(c0, h, self.omega)


@dataclass(frozen=True)
class EstimateResult:
    value: float
    eps_used: float
    eta1: float = 0.0
    eta2: float = 0.0
    retries: int = 0
    flags: EstimateFlag = field(default_factory=EstimateFlag.none)


def debias_step(f_eps: float, f_zeps: float, f_z2eps: float, guard: float) -> tuple[float, float, bool]:
    """Remove one power-law term from ``f`` sampled at ``(eps, zeta eps, zeta^2 eps)``.

    Returns ``(value, eta, guarded)``. For ``f(x) = a + b x^alpha`` the value
    is exactly ``a``, whatever ``b`` and ``alpha``.
    """
    first = f_zeps - f_eps
    second = math.fsum((f_z2eps, -2.0 * f_zeps, f_eps))
    scale = max(abs(f_eps), abs(f_zeps), abs(f_z2eps), _TINY)
    if abs(second) < guard * scale or second == 0.0:
        return f_eps, 0.0, True
    eta = first / second
    return f_eps - eta * first, eta, False


def bias_term_A(cbar: float, chi_pow_y: float, sigma2_weighted: float, y: float, eps: float, h: float) -> float:
    """Leading bias ``A(eps, h)`` of truncated realized variation (diagnostic)."""
    jump_term = cbar / (2.0 - y) * chi_pow_y * eps ** (2.0 - y)
    gauss_term = cbar * (y + 1.0) * (y + 2.0) / (2.0 * y) * sigma2_weighted * h * eps ** (-y)
    return jump_term - gauss_term


# ----------------------------------------------------------------------
# Unsigned debiasing (no clamps, no retries)
# ----------------------------------------------------------------------
def _one_step_at(table: TruncatedVariation, x: float, zeta1: float, guard: float) -> tuple[float, float, bool]:
    return debias_step(table(x), table(zeta1 * x), table(zeta1 * zeta1 * x), guard)


def debias_one_step(increments: Sequence[float] | np.ndarray, eps: float, zeta1: float, guard: float = 1e-12) -> EstimateResult:
    """Plain first-step estimator ``C'(eps, zeta1)``."""
    table = TruncatedVariation(increments)
    value, eta, guarded = _one_step_at(table, eps, zeta1, guard)
    flags = EstimateFlag.DENOM_GUARDED if guarded else EstimateFlag.none()
    return EstimateResult(value=value, eps_used=eps, eta1=eta, flags=flags)


def debias_two_step(
    increments: Sequence[float] | np.ndarray, eps: float, zeta1: float, zeta2: float, guard: float = 1e-12
) -> EstimateResult:
    """Plain two-step estimator ``C''(eps, zeta2, zeta1)``."""
    table = TruncatedVariation(increments)
    stages = [_one_step_at(table, scale * eps, zeta1, guard) for scale in (1.0, zeta2, zeta2 * zeta2)]
    value, eta2, guarded = debias_step(stages[0][0], stages[1][0], stages[2][0], guard)
    flags = EstimateFlag.none()
    if guarded or any(stage[2] for stage in stages):
        flags |= EstimateFlag.DENOM_GUARDED
    return EstimateResult(value=value, eps_used=eps, eta1=stages[0][1], eta2=eta2, flags=flags)


# ----------------------------------------------------------------------
# Sign-aware debiasing over one or several pooled blocks
# ----------------------------------------------------------------------
@dataclass
class _Stage:
    values: np.ndarray
    eta: float
    retries: int
    flags: EstimateFlag


class _PooledDebiaser:
    """Sign-aware debiasing where every ``eta`` pools numerators and denominators over blocks.

    Block-level bias differences use only the block's own increments and
    threshold; a single block reproduces the whole-sample estimators.
    """

    def __init__(self, tables: Sequence[TruncatedVariation], eps: np.ndarray, cfg: EstimatorConfig) -> None:
        self.tables = list(tables)
        self.eps = np.asarray(eps, dtype=np.float64)
        self.cfg = cfg
        self._first_cache: dict[float, _Stage] = {}

    def trqv(self, scale: float) -> np.ndarray:
        return np.array([table(scale * eps) for table, eps in zip(self.tables, self.eps)])

    def _pooled_eta(self, evaluate, scale: float, zeta: float) -> tuple[float, bool]:
        pooled = [math.fsum(evaluate(scale * z)) for z in (1.0, zeta, zeta * zeta)]
        _, eta, guarded = debias_step(*pooled, self.cfg.denom_guard)
        return eta, guarded

    def first_step(self, scale: float) -> _Stage:
        cached = self._first_cache.get(scale)
        if cached is not None:
            return cached
        cfg = self.cfg
        base = self.trqv(scale)
        bias = self.trqv(cfg.zeta1 * scale) - base
        flags = EstimateFlag.none()
        eta_scale = scale
        retries = 0
        while True:
            eta, guarded = self._pooled_eta(self.trqv, cfg.p1 * eta_scale, cfg.zeta1)
            if guarded:
                flags |= EstimateFlag.DENOM_GUARDED
            elif eta < 0.0:
                flags |= EstimateFlag.NEGATIVE_CLAMPED
            eta = max(eta, 0.0)
            values = base - eta * bias
            if np.all(values >= 0.0):
                stage = _Stage(values, eta, retries, flags)
                break
            if retries >= cfg.max_retries:
                logger.debug("First-step retries exhausted at scale %.4g", scale)
                stage = _Stage(base, 0.0, retries, flags | EstimateFlag.RETRY_EXHAUSTED)
                break
            retries += 1
            eta_scale *= cfg.retry_shrink
            logger.debug("Negative first-step estimate; recomputing eta1 with eps x %.4g", eta_scale)
        self._first_cache[scale] = stage
        return stage

    def _first_values(self, scale: float) -> np.ndarray:
        return self.first_step(scale).values

    def second_step(self) -> tuple[_Stage, _Stage]:
        cfg = self.cfg
        first = self.first_step(1.0)
        upper = self.first_step(cfg.zeta2)
        diff = upper.values - first.values
        flags = first.flags | upper.flags
        if np.any(diff < 0.0):
            flags |= EstimateFlag.NEGATIVE_CLAMPED
        bias = np.maximum(diff, 0.0)
        eta_scale = 1.0
        retries = 0
        while True:
            eta, guarded = self._pooled_eta(self._first_values, cfg.p2 * eta_scale, cfg.zeta2)
            for z in (1.0, cfg.zeta2, cfg.zeta2 * cfg.zeta2):
                flags |= self.first_step(cfg.p2 * eta_scale * z).flags
            if guarded:
                flags |= EstimateFlag.DENOM_GUARDED
            elif eta > 0.0:
                flags |= EstimateFlag.NEGATIVE_CLAMPED
            eta = min(eta, 0.0)
            values = first.values - eta * bias
            if np.all(values >= 0.0):
                return first, _Stage(values, eta, retries, flags)
            if retries >= cfg.max_retries:
                logger.debug("Second-step retries exhausted")
                return first, _Stage(first.values, 0.0, retries, flags | EstimateFlag.RETRY_EXHAUSTED)
            retries += 1
            eta_scale *= cfg.retry_shrink
            logger.debug("Negative second-step estimate; recomputing eta2 with eps x %.4g", eta_scale)


def _single_block(increments: Sequence[float] | np.ndarray, cfg: EstimatorConfig, h: float) -> _PooledDebiaser:
    x = np.asarray(increments, dtype=np.float64).ravel()
    eps = cfg.base_threshold(x, h)
    return _PooledDebiaser([TruncatedVariation(x)], np.array([eps]), cfg)


def estimate_pb(increments: Sequence[float] | np.ndarray, cfg: EstimatorConfig, h: float) -> EstimateResult:
    """One-step estimator removing the positive jump bias (``eta1 >= 0``)."""
    debiaser = _single_block(increments, cfg, h)
    stage = debiaser.first_step(1.0)
    return EstimateResult(
        value=float(stage.values[0]),
        eps_used=float(debiaser.eps[0]),
        eta1=stage.eta,
        retries=stage.retries,
        flags=stage.flags,
    )


def estimate_nb(increments: Sequence[float] | np.ndarray, cfg: EstimatorConfig, h: float) -> EstimateResult:
    """Two-step estimator additionally removing the negative bias (``eta2 <= 0``)."""
    debiaser = _single_block(increments, cfg, h)
    first, second = debiaser.second_step()
    return EstimateResult(
        value=float(second.values[0]),
        eps_used=float(debiaser.eps[0]),
        eta1=first.eta,
        eta2=second.eta,
        retries=first.retries + second.retries,
        flags=second.flags,
    )


@dataclass(frozen=True)
class PooledEstimates:
    """Per-block first-step and two-step estimates sharing pooled ``eta`` factors."""

    one_step: list[EstimateResult]
    two_step: list[EstimateResult]

    def __len__(self) -> int:
        return len(self.two_step)

    def __getitem__(self, block: int) -> EstimateResult:
        return self.two_step[block]

    def __iter__(self):
        return iter(self.two_step)


def estimate_daily_pooled(
    blocks: Sequence[Sequence[float] | np.ndarray], cfg: EstimatorConfig, h: float
) -> PooledEstimates:
    """Daily estimates whose ``eta1``/``eta2`` are pooled over the whole horizon.

    Each block keeps its own threshold (from its own bipower volatility when
    ``c0_mode = 'bipower'``) and its own bias differences; only the ratio
    defining each ``eta`` sums over blocks before clamping.
    """
    arrays = [np.asarray(block, dtype=np.float64).ravel() for block in blocks]
    if not arrays:
        raise EstimatorInputError("at least one block of increments is required")
    eps = np.array([cfg.base_threshold(block, h) for block in arrays])
    debiaser = _PooledDebiaser([TruncatedVariation(block) for block in arrays], eps, cfg)
    first, second = debiaser.second_step()
    if second.flags & EstimateFlag.RETRY_EXHAUSTED:
        logger.warning("Pooled second-step retries exhausted; eta2 set to zero for all blocks")
    if second.flags & EstimateFlag.DENOM_GUARDED:
        logger.warning("Pooled debiasing hit the denominator guard; the guarded eta is zero")

    one_step = [
        EstimateResult(value=float(v), eps_used=float(e), eta1=first.eta, retries=first.retries, flags=first.flags)
        for v, e in zip(first.values, eps)
    ]
    two_step = [
        EstimateResult(
            value=float(v),
            eps_used=float(e),
            eta1=first.eta,
            eta2=second.eta,
            retries=first.retries + second.retries,
            flags=second.flags,
        )
        for v, e in zip(second.values, eps)
    ]
    return PooledEstimates(one_step=one_step, two_step=two_step)


__all__ = [
    "EstimateFlag",
    "EstimatorConfig",
    "EstimateResult",
    "PooledEstimates",
    "omega_window",
    "debias_step",
    "bias_term_A",
    "debias_one_step",
    "debias_two_step",
    "estimate_pb",
    "estimate_nb",
    "estimate_daily_pooled",
]
