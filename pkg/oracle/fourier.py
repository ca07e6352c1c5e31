"""FFT density inversion and truncated moments of ``sigma W_h + S_h + drift h``.

``S`` is strictly stable with characteristic exponent
``c1 |u|^Y + i c2 |u|^Y sgn(u)``. Densities are tabulated on a uniform
grid ``x_j = -L + j dx`` by a single inverse FFT of the characteristic
function; truncated moments integrate ``x^(2k)`` against that table.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import fft, integrate, interpolate, special

from simulation.levy import LevyJumpSpec, ParameterError

logger = logging.getLogger(__name__)

MIN_GRID_POINTS = 2**12
MAX_GRID_POINTS = 2**23
# Grid spacing relative to the narrowest component scale of the law
POINTS_PER_SCALE = 128
# Gaussian mass beyond this many standard deviations is below double precision
GAUSSIAN_SUPPORT = 24.0
# Half-width in units of eps when the law has power tails
JUMP_WIDTH_FACTOR = 256.0
TAIL_MARGIN = 16.0


class ResolutionError(RuntimeError):
    """Raised when the Fourier grid cannot resolve the requested law or moment."""


@dataclass(frozen=True)
class CharExponentSpec:
    c1: float
    c2: float
    sigma: float
    y: float
    drift: float = 0.0
    # Levy-measure provenance used by the asymptotic expansions
    c_plus: Optional[float] = None
    c_minus: Optional[float] = None

    def __post_init__(self) -> None:
        if self.c1 > 0.0:
            raise ParameterError(f"c1 must be non-positive, got {self.c1}")
        if self.c1 == 0.0 and self.c2 != 0.0:
            raise ParameterError("c2 must vanish when c1 = 0")
        if self.sigma < 0.0:
            raise ParameterError(f"sigma must be non-negative, got {self.sigma}")
        if not 0.0 < self.y <= 2.0:
            raise ParameterError(f"y must lie in (0, 2], got {self.y}")
        if self.c1 == 0.0 and self.sigma == 0.0:
            raise ParameterError("degenerate law: both c1 and sigma vanish")

    @classmethod
    def from_levy(cls, spec: LevyJumpSpec, sigma: float, drift: float = 0.0) -> "CharExponentSpec":
        y = spec.y_index
        gamma = special.gamma(-y)
        c1 = spec.cbar * math.cos(math.pi * y / 2.0) * gamma
        c2 = (spec.c_minus - spec.c_plus) * math.sin(math.pi * y / 2.0) * gamma
        return cls(c1=c1, c2=c2, sigma=sigma, y=y, drift=drift, c_plus=spec.c_plus, c_minus=spec.c_minus)

    @classmethod
    def gaussian(cls, sigma: float, y: float = 1.5, drift: float = 0.0) -> "CharExponentSpec":
        """Jump-free law, carrying zero jump intensities for the expansions."""
        return cls(c1=0.0, c2=0.0, sigma=sigma, y=y, drift=drift, c_plus=0.0, c_minus=0.0)

    @property
    def has_jumps(self) -> bool:
        return self.c1 != 0.0

    @property
    def cbar(self) -> float:
        if self.c_plus is None or self.c_minus is None:
            raise ParameterError("jump intensities C+ and C- are unknown for this exponent")
        return self.c_plus + self.c_minus

    def gaussian_scale(self, h: float) -> float:
        return self.sigma * math.sqrt(h)

    def stable_scale(self, h: float) -> float:
        return (-self.c1 * h) ** (1.0 / self.y) if self.has_jumps else 0.0

    def char_function(self, u: np.ndarray, h: float) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        au = np.abs(u) ** self.y
        exponent = (self.c1 * au - 0.5 * self.sigma**2 * u * u) * h + 1j * (
            self.c2 * au * np.sign(u) + u * self.drift
        ) * h
        return np.exp(exponent)


@dataclass(frozen=True, eq=False)
class DensityTable:
    x: np.ndarray
    density: np.ndarray

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def half_width(self) -> float:
        return float(-self.x[0])

    def mass(self) -> float:
        return float(integrate.simpson(self.density, dx=self.dx))

    def __call__(self, points: np.ndarray | float) -> np.ndarray:
        return np.interp(points, self.x, self.density)


def density_fft(spec: CharExponentSpec, h: float, grid_half_width: float, grid_points: int) -> DensityTable:
    """Tabulate the density of ``sigma W_h + S_h + drift h`` on ``[-L, L)``.

    ``f(x_j) = du/(2 pi) (-1)^j FFT[phi(u_k) (-1)^(k - N/2)]_j`` with
    ``du = pi / L`` and ``u_k = (k - N/2) du``.
    """
    n = int(grid_points)
    if n < MIN_GRID_POINTS or n & (n - 1):
        raise ResolutionError(f"grid_points must be a power of two >= {MIN_GRID_POINTS}, got {grid_points}")
    scale = max(spec.gaussian_scale(h), spec.stable_scale(h))
    half_width = float(grid_half_width)
    if half_width < 12.0 * scale + abs(spec.drift) * h:
        raise ResolutionError(
            f"half-width {half_width:.3e} covers fewer than 12 scales (scale {scale:.3e}, drift {spec.drift * h:.3e})"
        )
    du = math.pi / half_width
    k = np.arange(n)
    u = (k - n // 2) * du
    phi = spec.char_function(u, h)
    edge = abs(phi[0])
    if edge > 1e-13:
        raise ResolutionError(
            f"characteristic function is {edge:.3e} at the Nyquist frequency; "
            f"dx = {2.0 * half_width / n:.3e} is too coarse for scale {scale:.3e}"
        )
    signs = np.where((k - n // 2) % 2 == 0, 1.0, -1.0)
    transformed = fft.fft(phi * signs)
    density = du / (2.0 * math.pi) * np.where(k % 2 == 0, 1.0, -1.0) * transformed.real
    x = -half_width + k * (2.0 * half_width / n)
    return DensityTable(x=x, density=density)


def stable_density_at_zero(spec: CharExponentSpec, h: float) -> float:
    """Density of the symmetric stable ``S_h`` at the origin."""
    if spec.c2 != 0.0 or spec.sigma != 0.0 or not spec.has_jumps:
        raise ParameterError("closed form holds only for symmetric stable laws without a Gaussian part")
    return special.gamma(1.0 + 1.0 / spec.y) / (math.pi * (-spec.c1 * h) ** (1.0 / spec.y))


def gaussian_truncated_moment(sigma: float, h: float, eps: float, k: int) -> float:
    """``E[X^(2k) 1{|X| <= eps}]`` for ``X ~ N(0, sigma^2 h)``."""
    if k < 1:
        raise ParameterError(f"moment order must be at least 1, got {k}")
    var = sigma * sigma * h
    full = var**k * 2.0**k * special.gamma(k + 0.5) / math.sqrt(math.pi)
    if math.isinf(eps):
        return full
    return full * special.gammainc(k + 0.5, eps * eps / (2.0 * var))


@dataclass(frozen=True)
class MomentEvaluation:
    value: float
    grid_points: int
    half_width: float
    # relative change of the value when grid_points is doubled
    grid_change: float


def _grid_for_moment(spec: CharExponentSpec, eps: float, h: float) -> tuple[float, float, int]:
    gauss = spec.gaussian_scale(h)
    stable = spec.stable_scale(h)
    scale = max(gauss, stable)
    shift = abs(spec.drift) * h
    if spec.has_jumps:
        limit = eps
        half_width = JUMP_WIDTH_FACTOR * eps + TAIL_MARGIN * scale + shift
    else:
        limit = min(eps, GAUSSIAN_SUPPORT * gauss + shift)
        half_width = limit + TAIL_MARGIN * gauss + shift
    dx = scale / POINTS_PER_SCALE
    points = max(MIN_GRID_POINTS, 1 << math.ceil(math.log2(2.0 * half_width / dx)))
    return limit, half_width, points


def _integrate_moment(table: DensityTable, k: int, limit: float) -> float:
    x = table.x
    dx = table.dx
    weights = x ** (2 * k) * table.density
    lo = int(math.ceil((x[0] * -1.0 - limit) / dx - 1e-9))
    hi = int(math.floor((limit - x[0]) / dx + 1e-9))
    if hi - lo < 4 or lo < 4 or hi > x.size - 5:
        raise ResolutionError(f"truncation level {limit:.3e} is not resolved by the grid (dx = {dx:.3e})")
    if (hi - lo) % 2:
        hi -= 1
    interior = integrate.simpson(weights[lo:hi + 1], dx=dx)
    # cubic refinement of the partial cells next to +-eps
    left = interpolate.CubicSpline(x[lo - 4:lo + 4], weights[lo - 4:lo + 4])
    right = interpolate.CubicSpline(x[hi - 3:hi + 5], weights[hi - 3:hi + 5])
    edges = float(left.integrate(-limit, x[lo])) + float(right.integrate(x[hi], limit))
    return math.fsum((float(interior), edges))


def evaluate_truncated_moment(
    spec: CharExponentSpec, k: int, eps: float, h: float, *, certify: bool = True
) -> MomentEvaluation:
    """Truncated moment with an optional grid-doubling convergence certificate."""
    if k < 1:
        raise ParameterError(f"moment order must be at least 1, got {k}")
    if not eps > 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")
    limit, half_width, points = _grid_for_moment(spec, eps, h)
    if points > MAX_GRID_POINTS:
        raise ResolutionError(
            f"moment at eps={eps:.3e}, h={h:.3e} needs {points} grid points (cap {MAX_GRID_POINTS})"
        )
    logger.debug("Fourier grid for k=%d eps=%.3e h=%.3e: L=%.3e N=%d", k, eps, h, half_width, points)
    value = _integrate_moment(density_fft(spec, h, half_width, points), k, limit)
    change = float("nan")
    if certify:
        if 2 * points > MAX_GRID_POINTS:
            raise ResolutionError(f"cannot certify: doubled grid exceeds {MAX_GRID_POINTS} points")
        refined = _integrate_moment(density_fft(spec, h, half_width, 2 * points), k, limit)
        change = abs(refined - value) / max(abs(refined), np.finfo(float).tiny)
        value = refined
    return MomentEvaluation(value=value, grid_points=points, half_width=half_width, grid_change=change)


def truncated_moment_numeric(spec: CharExponentSpec, k: int, eps: float, h: float) -> float:
    """``∫_{-eps}^{eps} x^(2k) f(x) dx`` from the FFT density table."""
    return evaluate_truncated_moment(spec, k, eps, h, certify=False).value


__all__ = [
    "ResolutionError",
    "CharExponentSpec",
    "DensityTable",
    "MomentEvaluation",
    "density_fft",
    "stable_density_at_zero",
    "gaussian_truncated_moment",
    "evaluate_truncated_moment",
    "truncated_moment_numeric",
]
