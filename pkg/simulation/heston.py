"""Jump-diffusion paths with constant or Heston volatility and their true integrated variance."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional

import numba as nb
import numpy as np

from config import ConfigurationError
from simulation.levy import GridSpec, LevyJumpSpec, ParameterError, sample_levy_path

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiffusionSpec:
    kind: Literal["constant", "heston"] = "constant"
    sigma: float = 0.2
    kappa: float = 5.0
    xi: float = 0.5
    theta: float = 0.16
    rho: float = -0.5
    v0: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "heston"):
            raise ParameterError(f"unknown diffusion kind {self.kind!r}")
        if self.kind == "constant" and not self.sigma > 0.0:
            raise ParameterError("sigma must be positive for constant volatility")
        if self.kind == "heston":
            # xi = 0 is accepted: it is the deterministic-variance reference case
            if not (self.kappa > 0.0 and self.theta > 0.0 and self.xi >= 0.0):
                raise ParameterError("kappa and theta must be positive and xi non-negative")
            if self.v0 is not None and not self.v0 > 0.0:
                raise ParameterError("v0 must be positive")
        if abs(self.rho) > 1.0:
            raise ParameterError(f"rho must lie in [-1, 1], got {self.rho}")

    @property
    def initial_variance(self) -> float:
        if self.kind == "constant":
            return self.sigma**2
        # stationary start when v0 is not given
        return self.theta if self.v0 is None else self.v0

    @property
    def reference_sigma(self) -> float:
        """Volatility scale used for threshold and cutoff defaults."""
        return math.sqrt(self.initial_variance)


@dataclass(frozen=True)
class ModelSpec:
    diffusion: DiffusionSpec
    jumps: Optional[LevyJumpSpec] = None
    chi: float = 1.0
    drift_b: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.chi):
            raise ParameterError("chi must be finite")
        if not math.isfinite(self.drift_b):
            raise ParameterError("drift_b must be finite")


@dataclass(frozen=True, eq=False)
class PathSample:
    increments: np.ndarray
    block_iv: np.ndarray
    blocks: int
    seed: int = -1

    @property
    def total_iv(self) -> float:
        return math.fsum(self.block_iv)

    def block_increments(self, block: int) -> np.ndarray:
        size = self.increments.size // self.blocks
        return self.increments[block * size:(block + 1) * size]


def heston_iv_closed_form(diffusion: DiffusionSpec, t0: float, t1: float) -> float:
    """``∫_{t0}^{t1} V_s ds`` for the deterministic (``xi = 0``) variance path."""
    v0 = diffusion.initial_variance
    kappa, theta = diffusion.kappa, diffusion.theta
    decay = (math.exp(-kappa * t0) - math.exp(-kappa * t1)) / kappa
    return theta * (t1 - t0) + (v0 - theta) * decay


@nb.njit(cache=True)
def _full_truncation_euler(v0, kappa, theta, xi, rho, h, substeps, blocks, z_w, z_b):
    n_steps = z_w.size // substeps
    dt = h / substeps
    sqrt_dt = math.sqrt(dt)
    rho_perp = math.sqrt(max(1.0 - rho * rho, 0.0))
    per_block = n_steps // blocks

    increments = np.zeros(n_steps)
    block_iv = np.zeros(blocks)
    v = v0
    v_pos = max(v, 0.0)
    k = 0
    for step in range(n_steps):
        dx = 0.0
        iv = 0.0
        for _ in range(substeps):
            dw = sqrt_dt * z_w[k]
            db = rho * dw + rho_perp * sqrt_dt * z_b[k]
            vol = math.sqrt(v_pos)
            dx += vol * dw
            v = v + kappa * (theta - v_pos) * dt + xi * vol * db
            v_next_pos = max(v, 0.0)
            iv += 0.5 * (v_pos + v_next_pos) * dt
            v_pos = v_next_pos
            k += 1
        increments[step] = dx
        block_iv[step // per_block] += iv
    return increments, block_iv


def simulate_path(
    model: ModelSpec,
    grid: GridSpec,
    blocks: int,
    substeps: int,
    tau: float | None,
    rng: np.random.Generator,
    *,
    seed: int = -1,
) -> PathSample:
    """Simulate the increments of ``X = X^c + chi * J`` on ``grid``.

    Heston variance follows the full-truncation Euler scheme on an internal
    grid of ``substeps`` points per observation, with ``V+`` in both drift
    and diffusion, and the true block variance is the trapezoid integral of
    ``V+`` on that grid. ``tau`` is the small-jump cutoff and is ignored for
    jump-free models.
    """
    if blocks < 1 or grid.n_steps % blocks != 0:
        raise ConfigurationError("run.blocks", f"{blocks} blocks do not divide {grid.n_steps} steps")
    if substeps < 1:
        raise ConfigurationError("run.substeps", f"must be at least 1, got {substeps}")

    h = grid.h
    diffusion = model.diffusion
    if diffusion.kind == "constant":
        continuous = diffusion.sigma * math.sqrt(h) * rng.standard_normal(grid.n_steps)
        block_iv = np.full(blocks, diffusion.sigma**2 * grid.horizon_t / blocks)
    else:
        size = grid.n_steps * substeps
        z_w = rng.standard_normal(size)
        z_b = rng.standard_normal(size)
        continuous, block_iv = _full_truncation_euler(
            diffusion.initial_variance,
            diffusion.kappa,
            diffusion.theta,
            diffusion.xi,
            diffusion.rho,
            h,
            substeps,
            blocks,
            z_w,
            z_b,
        )

    increments = continuous + model.drift_b * h
    if model.jumps is not None:
        if tau is None:
            raise ConfigurationError("run.tau", "a small-jump cutoff is required when jumps are enabled")
        increments = increments + model.chi * sample_levy_path(model.jumps, grid, tau, rng)
    return PathSample(increments=increments, block_iv=block_iv, blocks=blocks, seed=seed)


def true_iv(path: PathSample, block: int) -> float:
    if not 0 <= block < path.blocks:
        raise IndexError(f"block {block} out of range for {path.blocks} blocks")
    return float(path.block_iv[block])


__all__ = [
    "DiffusionSpec",
    "ModelSpec",
    "PathSample",
    "heston_iv_closed_form",
    "simulate_path",
    "true_iv",
]
