"""Small-time expansions of truncated moments and their numerical residual orders."""
from __future__ import annotations

import json
import logging
import math
import pathlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import special

from oracle.fourier import CharExponentSpec, evaluate_truncated_moment
from simulation.levy import ParameterError

logger = logging.getLogger(__name__)

DEFAULT_BAND = 0.25
# Residuals this small relative to the moment are at quadrature precision
EXPONENTIAL_FLOOR = 1e-8


def expansion_predicted(spec: CharExponentSpec, k: int, eps: float, h: float, *, coef_scale: float = 1.0) -> float:
    """Leading terms of ``E[X_h^(2k) 1{|X_h| <= eps}]``.

    ``coef_scale`` multiplies the jump intensity in the prediction only.
    """
    if not 1.0 < spec.y < 2.0:
        raise ParameterError(f"expansions hold for y in (1, 2), got {spec.y}")
    if k < 1:
        raise ParameterError(f"moment order must be at least 1, got {k}")
    y = spec.y
    cbar = coef_scale * spec.cbar
    sigma2 = spec.sigma**2
    if k == 1:
        correction = cbar / (2.0 - y) * eps ** (2.0 - y) - cbar * (y + 1.0) * (y + 2.0) / (2.0 * y) * sigma2 * h * eps ** (-y)
        return sigma2 * h + correction * h
    gaussian = float(special.factorial2(2 * k - 1, exact=True)) * sigma2**k * h**k
    return gaussian + cbar / (2.0 * k - y) * h * eps ** (2.0 * k - y)


def theoretical_remainder_order(k: int, y: float, omega: float) -> float:
    """Power of ``h`` of the dominant remainder when ``eps = h^omega``."""
    if k == 1:
        return min(3.0 - (y + 2.0) * omega, 2.0 - (2.0 * y - 2.0) * omega)
    return 2.0 + (2.0 * k - y - 2.0) * omega


def retained_jump_order(k: int, y: float, omega: float) -> float:
    """Power of ``h`` of the smallest jump term kept in the expansion."""
    if k == 1:
        return 1.0 + (2.0 - y) * omega
    return 1.0 + (2.0 * k - y) * omega


@dataclass(frozen=True, eq=False)
class ExpansionReport:
    k: int
    y: float
    sigma: float
    omega: float
    h_values: np.ndarray
    eps_rule: str
    numeric: np.ndarray
    predicted: np.ndarray
    residual: np.ndarray
    fitted_order: float
    theoretical_order: float
    retained_order: float
    exponential_regime: bool
    grid_convergence: np.ndarray
    band: float = DEFAULT_BAND
    coef_scale: float = 1.0
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        if self.exponential_regime:
            return True
        if self.k == 1:
            return abs(self.fitted_order - self.theoretical_order) <= self.band
        # higher moments: the remainder must decay faster than the last retained term
        return self.fitted_order > self.retained_order

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "h": self.h_values,
                "eps": self.h_values**self.omega,
                "numeric": self.numeric,
                "predicted": self.predicted,
                "residual": self.residual,
                "grid_change": self.grid_convergence,
            }
        )

    def to_dict(self) -> dict:
        fitted = self.fitted_order if math.isfinite(self.fitted_order) else None
        return {
            "k": self.k,
            "y": self.y,
            "sigma": self.sigma,
            "omega": self.omega,
            "eps_rule": self.eps_rule,
            "fitted_order": fitted,
            "theoretical_order": self.theoretical_order,
            "retained_order": self.retained_order,
            "exponential_regime": self.exponential_regime,
            "band": self.band,
            "coef_scale": self.coef_scale,
            "passed": self.passed,
            "max_grid_change": float(np.nanmax(self.grid_convergence)) if self.grid_convergence.size else None,
            "notes": list(self.notes),
            "rows": self.to_frame().to_dict(orient="records"),
        }

    def write_json(self, path: str | pathlib.Path) -> pathlib.Path:
        target = pathlib.Path(path)
        with target.open("w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        return target

    def write_csv(self, path: str | pathlib.Path) -> pathlib.Path:
        target = pathlib.Path(path)
        self.to_frame().to_csv(target, index=False, float_format="%.17g")
        return target


def residual_order_check(
    spec: CharExponentSpec,
    k: int,
    h_sequence: Sequence[float],
    omega: float,
    *,
    coef_scale: float = 1.0,
    band: float = DEFAULT_BAND,
) -> ExpansionReport:
    """Fit the log-log slope of ``numeric - predicted`` along ``eps = h^omega``."""
    h_values = np.asarray(h_sequence, dtype=np.float64)
    if h_values.size < 4:
        raise ParameterError("at least four h values are required")
    if np.any(np.diff(h_values) >= 0.0) or np.any(h_values <= 0.0):
        raise ParameterError("h_sequence must be positive and strictly decreasing")

    numeric = np.empty_like(h_values)
    predicted = np.empty_like(h_values)
    changes = np.empty_like(h_values)
    for i, h in enumerate(h_values):
        eps = h**omega
        evaluation = evaluate_truncated_moment(spec, k, eps, h)
        numeric[i] = evaluation.value
        changes[i] = evaluation.grid_change
        predicted[i] = expansion_predicted(spec, k, eps, h, coef_scale=coef_scale)
    residual = numeric - predicted

    notes: list[str] = []
    relative = np.abs(residual) / np.abs(numeric)
    exponential = bool(np.all(relative < EXPONENTIAL_FLOOR))
    if exponential:
        fitted = math.inf
        notes.append("exponential regime: residuals at quadrature precision")
    else:
        if np.any(residual == 0.0):
            raise ParameterError("a residual is exactly zero; cannot fit a log-log slope")
        signs = np.sign(residual)
        if np.any(signs != signs[0]):
            notes.append("residual changes sign along the h sequence")
        fitted = float(np.polyfit(np.log(h_values), np.log(np.abs(residual)), 1)[0])

    theoretical = theoretical_remainder_order(k, spec.y, omega)
    report = ExpansionReport(
        k=k,
        y=spec.y,
        sigma=spec.sigma,
        omega=omega,
        h_values=h_values,
        eps_rule=f"eps = h^{omega:.6g}",
        numeric=numeric,
        predicted=predicted,
        residual=residual,
        fitted_order=fitted,
        theoretical_order=theoretical,
        retained_order=retained_jump_order(k, spec.y, omega),
        exponential_regime=exponential,
        grid_convergence=changes,
        band=band,
        coef_scale=coef_scale,
        notes=notes,
    )
    logger.info(
        "k=%d Y=%.3g sigma=%.3g: fitted order %s (theory %.4g)%s",
        k,
        spec.y,
        spec.sigma,
        "inf" if exponential else f"{fitted:.4g}",
        theoretical,
        "" if report.passed else " OUT OF BAND",
    )
    return report


__all__ = [
    "ExpansionReport",
    "expansion_predicted",
    "theoretical_remainder_order",
    "retained_jump_order",
    "residual_order_check",
]
