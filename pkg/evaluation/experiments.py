"""Monte Carlo experiment orchestration for the volatility estimators."""
from __future__ import annotations

import dataclasses
import functools
import json
import logging
import pathlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Literal, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from config import (
    DEFAULT_N_STEPS,
    DEFAULT_OMEGA,
    DEFAULT_SUBSTEPS,
    DEFAULT_WORKERS,
    ConfigurationError,
    section,
    take,
)
from estimators.debias import (
    EstimateFlag,
    EstimatorConfig,
    debias_one_step,
    debias_two_step,
    estimate_daily_pooled,
    estimate_nb,
    estimate_pb,
    omega_window,
)
from estimators.truncation import bipower_sigma2, realized_variance, trqv
from evaluation.metrics import SUMMARY_COLUMNS, McSummary, PathRecord, summarise_estimator, summarise_records
from simulation.heston import DiffusionSpec, ModelSpec, PathSample, simulate_path
from simulation.levy import GridSpec, LevyJumpSpec, ParameterError, default_truncation

logger = logging.getLogger(__name__)

EstimatorKind = Literal["rv", "bipower", "trqv", "one_step", "two_step", "pb", "nb"]
ESTIMATOR_KINDS = ("rv", "bipower", "trqv", "one_step", "two_step", "pb", "nb")
CELL_TABLE_COLUMNS = ["cell", *SUMMARY_COLUMNS, "flagged", "error"]


class SimulationError(RuntimeError):
    """Raised when simulating or estimating one Monte Carlo path fails."""

    def __init__(self, path: int, message: str) -> None:
        super().__init__(path, message)
        self.path = path
        self.message = message

    def __str__(self) -> str:
        return f"path {self.path}: {self.message}"


@dataclass(frozen=True)
class NamedEstimator:
    name: str
    kind: EstimatorKind
    config: EstimatorConfig = field(default_factory=EstimatorConfig)

    def __post_init__(self) -> None:
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigurationError(f"estimators.{self.name}.kind", f"unknown estimator kind {self.kind!r}")

    def apply(self, increments: np.ndarray, h: float) -> tuple[float, str]:
        """Estimate integrated variance of ``increments``; returns ``(value, flag label)``."""
        cfg = self.config
        if self.kind == "rv":
            return realized_variance(increments), ""
        if self.kind == "bipower":
            return bipower_sigma2(increments), ""
        if self.kind == "pb":
            result = estimate_pb(increments, cfg, h)
        elif self.kind == "nb":
            result = estimate_nb(increments, cfg, h)
        else:
            eps = cfg.base_threshold(increments, h)
            if self.kind == "trqv":
                return trqv(increments, eps), ""
            if self.kind == "one_step":
                result = debias_one_step(increments, eps, cfg.zeta1, cfg.denom_guard)
            else:
                result = debias_two_step(increments, eps, cfg.zeta1, cfg.zeta2, cfg.denom_guard)
        return result.value, result.flags.label()


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    grid: GridSpec
    estimators: tuple[NamedEstimator, ...]
    paths: int = 1
    blocks: int = 1
    master_seed: int = 0
    workers: int = DEFAULT_WORKERS
    substeps: int = DEFAULT_SUBSTEPS
    tau: Optional[float] = None
    # first path index; disjoint offsets give mergeable partial runs
    path_offset: int = 0
    name: str = "experiment"

    def __post_init__(self) -> None:
        if self.paths < 1:
            raise ConfigurationError("run.paths", f"must be at least 1, got {self.paths}")
        if self.workers < 1:
            raise ConfigurationError("run.workers", f"must be at least 1, got {self.workers}")
        if self.path_offset < 0:
            raise ConfigurationError("run.path_offset", "must be non-negative")
        if self.master_seed < 0:
            raise ConfigurationError("run.master_seed", "must be non-negative")
        if self.tau is not None and not self.tau > 0.0:
            raise ConfigurationError("run.tau", f"must be positive, got {self.tau}")
        names = [estimator.name for estimator in self.estimators]
        if not names:
            raise ConfigurationError("estimators", "at least one estimator is required")
        if len(set(names)) != len(names):
            raise ConfigurationError("estimators.name", f"estimator names must be unique, got {names}")
        if self.blocks < 1 or self.grid.n_steps % self.blocks:
            raise ConfigurationError("run.blocks", f"{self.blocks} blocks do not divide {self.grid.n_steps} steps")

    @property
    def names(self) -> list[str]:
        return [estimator.name for estimator in self.estimators]

    @property
    def resolved_tau(self) -> Optional[float]:
        if self.model.jumps is None:
            return None
        if self.tau is not None:
            return self.tau
        return default_truncation(self.model.jumps, self.grid.h, self.model.diffusion.reference_sigma, DEFAULT_OMEGA)

    @property
    def path_indices(self) -> range:
        return range(self.path_offset, self.path_offset + self.paths)


def path_generator(master_seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream of one path, independent of scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([master_seed, path_index])))


def simulate_sample(cfg: ExperimentConfig, path_index: int) -> PathSample:
    """Simulate path ``path_index`` from its own counter-based stream."""
    rng = path_generator(cfg.master_seed, path_index)
    return simulate_path(cfg.model, cfg.grid, cfg.blocks, cfg.substeps, cfg.resolved_tau, rng, seed=path_index)


def _whole_path_worker(cfg: ExperimentConfig, path_index: int) -> PathRecord:
    try:
        sample = simulate_sample(cfg, path_index)
        values: dict[str, float] = {}
        flags: dict[str, str] = {}
        for estimator in cfg.estimators:
            values[estimator.name], flags[estimator.name] = estimator.apply(sample.increments, cfg.grid.h)
        return PathRecord(path=path_index, truth=sample.total_iv, values=values, flags=flags)
    except Exception as exc:
        raise SimulationError(path_index, f"{type(exc).__name__}: {exc}") from exc


@dataclass(frozen=True)
class DailyRecord:
    path: int
    day: int
    truth: float
    one_step: float
    two_step: float
    flags: str = ""


def _daily_worker(cfg: ExperimentConfig, estimator: NamedEstimator, path_index: int) -> list[DailyRecord]:
    try:
        sample = simulate_sample(cfg, path_index)
        blocks = [sample.block_increments(block) for block in range(cfg.blocks)]
        pooled = estimate_daily_pooled(blocks, estimator.config, cfg.grid.h)
        return [
            DailyRecord(
                path=path_index,
                day=block + 1,
                truth=float(sample.block_iv[block]),
                one_step=pooled.one_step[block].value,
                two_step=pooled.two_step[block].value,
                flags=pooled.two_step[block].flags.label(),
            )
            for block in range(cfg.blocks)
        ]
    except Exception as exc:
        raise SimulationError(path_index, f"{type(exc).__name__}: {exc}") from exc


def _map_paths(cfg: ExperimentConfig, worker) -> list:
    indices = list(cfg.path_indices)
    if cfg.workers == 1:
        return [worker(index) for index in indices]
    chunksize = max(1, len(indices) // (4 * cfg.workers))
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(worker, indices, chunksize=chunksize))


def _warn_window(cfg: ExperimentConfig) -> None:
    jumps = cfg.model.jumps
    if jumps is None or not 1.0 < jumps.y_index < 2.0:
        return
    for estimator in cfg.estimators:
        lower, upper = omega_window(jumps.y_index)
        if not lower < estimator.config.omega < upper:
            logger.warning(
                "%s: omega=%.4g outside the window (%.4g, %.4g) for Y=%.3g",
                estimator.name,
                estimator.config.omega,
                lower,
                upper,
                jumps.y_index,
            )


def simulate_records(cfg: ExperimentConfig) -> list[PathRecord]:
    """Per-path estimates of every configured estimator, ordered by path index."""
    _warn_window(cfg)
    return _map_paths(cfg, functools.partial(_whole_path_worker, cfg))


def run_experiment(cfg: ExperimentConfig) -> McSummary:
    logger.info(
        "Running %s: %d paths from %d, %d workers, seed %d", cfg.name, cfg.paths, cfg.path_offset, cfg.workers, cfg.master_seed
    )
    started = time.perf_counter()
    records = simulate_records(cfg)
    wall_time = time.perf_counter() - started
    summary = summarise_records(records, cfg.names, seed=cfg.master_seed, wall_time=wall_time)
    logger.info("Finished %s in %.1fs", cfg.name, wall_time)
    return summary


def simulate_daily_records(cfg: ExperimentConfig, estimator: NamedEstimator) -> list[DailyRecord]:
    """Pooled daily estimates for every path and block (day)."""
    _warn_window(cfg)
    per_path = _map_paths(cfg, functools.partial(_daily_worker, cfg, estimator))
    return [record for records in per_path for record in records]


def summarise_daily(records: Sequence[DailyRecord], days: Iterable[int] | None = None) -> pd.DataFrame:
    """Per-day statistics across paths plus a ``mean`` row averaging over every simulated day.

    ``days`` only selects which per-day rows are reported; the ``mean`` row
    always covers all blocks.
    """
    frame = pd.DataFrame([dataclasses.asdict(record) for record in records])
    simulated = sorted(set(frame["day"]))
    selected = simulated if days is None else list(days)
    missing = sorted(set(selected) - set(simulated))
    if missing:
        raise ConfigurationError("daily.days", f"days {missing} are not simulated")
    rows = []
    for day in simulated:
        day_frame = frame[frame["day"] == day].sort_values("path")
        for stage in ("one_step", "two_step"):
            summary = summarise_estimator(stage, day_frame[stage].to_numpy(), day_frame["truth"].to_numpy())
            rows.append({"day": day, **summary.as_row()})
    table = pd.DataFrame(rows)
    numeric = [column for column in table.columns if column not in ("day", "estimator")]
    means = table.groupby("estimator", sort=False)[numeric].mean().reset_index()
    means.insert(0, "day", "mean")
    reported = table[table["day"].isin(selected)].copy()
    reported["day"] = reported["day"].astype(str)
    return pd.concat([reported, means], ignore_index=True)


# ----------------------------------------------------------------------
# Output
# ----------------------------------------------------------------------
def write_table(frame: pd.DataFrame, out_dir: pathlib.Path, stem: str) -> list[pathlib.Path]:
    """Write ``frame`` as ``<stem>.csv`` plus a ``<stem>.json`` records mirror."""
    csv_path = out_dir / f"{stem}.csv"
    json_path = out_dir / f"{stem}.json"
    frame.to_csv(csv_path, index=False, float_format="%.17g", lineterminator="\n")
    with json_path.open("w", encoding="utf-8") as fh:
        json.dump(frame.to_dict(orient="records"), fh, indent=2)
    return [csv_path, json_path]


def write_summary(
    summary: McSummary | Mapping[str, McSummary | str], out_dir: pathlib.Path, stem: str = "summary"
) -> list[pathlib.Path]:
    """Write one summary, or a per-cell table where a string value is the error of a failed cell."""
    if isinstance(summary, McSummary):
        return write_table(summary.to_frame(), out_dir, stem)
    rows: list[dict[str, Any]] = []
    for cell, outcome in summary.items():
        if isinstance(outcome, str):
            rows.append({"cell": cell, "estimator": "", "error": outcome})
            continue
        rows.extend(
            {"cell": cell, **estimator.as_row(), "flagged": estimator.flagged, "error": ""}
            for estimator in outcome.estimators
        )
    return write_table(pd.DataFrame(rows, columns=CELL_TABLE_COLUMNS), out_dir, stem)


def write_path_estimates(
    records: Sequence[PathRecord], names: Sequence[str], out_dir: pathlib.Path, stem: str = "paths"
) -> list[pathlib.Path]:
    rows = [
        {
            "path": record.path,
            "estimator": name,
            "value": record.values[name],
            "truth": record.truth,
            "flags": record.flags.get(name, ""),
        }
        for record in sorted(records, key=lambda record: record.path)
        for name in names
    ]
    return write_table(pd.DataFrame(rows, columns=["path", "estimator", "value", "truth", "flags"]), out_dir, stem)


def write_daily(records: Sequence[DailyRecord], out_dir: pathlib.Path, stem: str = "daily") -> list[pathlib.Path]:
    frame = pd.DataFrame([dataclasses.asdict(record) for record in records])
    return write_table(frame, out_dir, stem)


# ----------------------------------------------------------------------
# TOML parsing
# ----------------------------------------------------------------------
def parse_diffusion(data: Mapping[str, Any]) -> DiffusionSpec:
    prefix = "model.diffusion"
    defaults = DiffusionSpec()
    v0 = data.get("v0")
    try:
        return DiffusionSpec(
            kind=take(data, "kind", str, defaults.kind, prefix=prefix),
            sigma=take(data, "sigma", float, defaults.sigma, prefix=prefix),
            kappa=take(data, "kappa", float, defaults.kappa, prefix=prefix),
            xi=take(data, "xi", float, defaults.xi, prefix=prefix),
            theta=take(data, "theta", float, defaults.theta, prefix=prefix),
            rho=take(data, "rho", float, defaults.rho, prefix=prefix),
            v0=None if v0 is None else take(data, "v0", float, prefix=prefix),
        )
    except ParameterError as exc:
        raise ConfigurationError(prefix, str(exc)) from exc


def parse_jumps(data: Mapping[str, Any]) -> Optional[LevyJumpSpec]:
    prefix = "model.jumps"
    if not data or not data.get("enabled", True):
        return None
    c = data.get("c")
    try:
        return LevyJumpSpec(
            c_plus=take(data, "c_plus", float, c, prefix=prefix),
            c_minus=take(data, "c_minus", float, c, prefix=prefix),
            g_temper=take(data, "g", float, 0.0, prefix=prefix),
            m_temper=take(data, "m", float, 0.0, prefix=prefix),
            y_index=take(data, "y_index", float, prefix=prefix),
        )
    except ParameterError as exc:
        raise ConfigurationError(prefix, str(exc)) from exc


def parse_model(data: Mapping[str, Any]) -> ModelSpec:
    model = section(data, "model", required=True)
    try:
        return ModelSpec(
            diffusion=parse_diffusion(section(model, "diffusion")),
            jumps=parse_jumps(section(model, "jumps")),
            chi=take(model, "chi", float, 1.0, prefix="model"),
            drift_b=take(model, "drift_b", float, 0.0, prefix="model"),
        )
    except ParameterError as exc:
        raise ConfigurationError("model", str(exc)) from exc


def parse_grid(data: Mapping[str, Any]) -> GridSpec:
    grid = section(data, "grid")
    try:
        return GridSpec(
            horizon_t=take(grid, "horizon_t", float, 1.0, prefix="grid"),
            n_steps=take(grid, "n_steps", int, DEFAULT_N_STEPS, prefix="grid"),
        )
    except ParameterError as exc:
        raise ConfigurationError("grid", str(exc)) from exc


def parse_estimator(data: Mapping[str, Any], index: int) -> NamedEstimator:
    prefix = f"estimators[{index}]"
    name = take(data, "name", str, prefix=prefix)
    prefix = f"estimators.{name}"
    defaults = EstimatorConfig()
    c0 = data.get("c0")
    c0_mode = take(data, "c0_mode", str, "fixed" if c0 is not None else defaults.c0_mode, prefix=prefix)
    config = EstimatorConfig(
        omega=take(data, "omega", float, defaults.omega, prefix=prefix),
        c0_mode=c0_mode,
        c0=None if c0 is None else take(data, "c0", float, prefix=prefix),
        zeta1=take(data, "zeta1", float, defaults.zeta1, prefix=prefix),
        zeta2=take(data, "zeta2", float, defaults.zeta2, prefix=prefix),
        p1=take(data, "p1", float, defaults.p1, prefix=prefix),
        p2=take(data, "p2", float, defaults.p2, prefix=prefix),
        retry_shrink=take(data, "retry_shrink", float, defaults.retry_shrink, prefix=prefix),
        max_retries=take(data, "max_retries", int, defaults.max_retries, prefix=prefix),
        denom_guard=take(data, "denom_guard", float, defaults.denom_guard, prefix=prefix),
    )
    return NamedEstimator(name=name, kind=take(data, "kind", str, prefix=prefix), config=config)


def parse_estimators(entries: Sequence[Mapping[str, Any]] | None) -> tuple[NamedEstimator, ...]:
    if not entries:
        raise ConfigurationError("estimators", "at least one [[estimators]] entry is required")
    return tuple(parse_estimator(entry, index) for index, entry in enumerate(entries))


def _apply_cell(model: ModelSpec, cell: Mapping[str, Any]) -> ModelSpec:
    prefix = f"cells.{cell.get('name', '?')}"
    diffusion = model.diffusion
    jumps = model.jumps
    try:
        if "sigma" in cell:
            diffusion = dataclasses.replace(diffusion, sigma=take(cell, "sigma", float, prefix=prefix))
        for key in ("xi", "theta", "kappa", "rho"):
            if key in cell:
                diffusion = dataclasses.replace(diffusion, **{key: take(cell, key, float, prefix=prefix)})
        if jumps is not None and "y_index" in cell:
            jumps = dataclasses.replace(jumps, y_index=take(cell, "y_index", float, prefix=prefix))
        return dataclasses.replace(model, diffusion=diffusion, jumps=jumps)
    except ParameterError as exc:
        raise ConfigurationError(prefix, str(exc)) from exc


def build_experiment(
    data: Mapping[str, Any],
    *,
    cell: Mapping[str, Any] | None = None,
    paths: int | None = None,
    seed: int | None = None,
    workers: int | None = None,
) -> ExperimentConfig:
    """Assemble an :class:`ExperimentConfig` from parsed TOML plus CLI overrides."""
    run = section(data, "run")
    model = parse_model(data)
    estimators = parse_estimators(data.get("estimators"))
    name = "experiment"
    if cell is not None:
        model = _apply_cell(model, cell)
        estimators = estimators + parse_estimators(cell["estimators"]) if cell.get("estimators") else estimators
        name = str(cell.get("name", name))
    tau = run.get("tau")
    return ExperimentConfig(
        model=model,
        grid=parse_grid(data),
        estimators=estimators,
        paths=paths if paths is not None else take(run, "paths", int, 1, prefix="run"),
        blocks=take(run, "blocks", int, 1, prefix="run"),
        master_seed=seed if seed is not None else take(run, "master_seed", int, 0, prefix="run"),
        workers=workers if workers is not None else take(run, "workers", int, DEFAULT_WORKERS, prefix="run"),
        substeps=take(run, "substeps", int, DEFAULT_SUBSTEPS, prefix="run"),
        tau=None if tau is None else take(run, "tau", float, prefix="run"),
        path_offset=take(run, "path_offset", int, 0, prefix="run"),
        name=name,
    )


def flag_counts(records: Sequence[PathRecord], name: str) -> dict[str, int]:
    """How often each flag fired for one estimator across paths."""
    counts = {flag.name.lower(): 0 for flag in EstimateFlag}
    for record in records:
        for label in filter(None, record.flags.get(name, "").split("|")):
            counts[label] += 1
    return counts


__all__ = [
    "SimulationError",
    "NamedEstimator",
    "ExperimentConfig",
    "DailyRecord",
    "path_generator",
    "simulate_sample",
    "simulate_records",
    "run_experiment",
    "simulate_daily_records",
    "summarise_daily",
    "write_table",
    "write_summary",
    "write_path_estimates",
    "write_daily",
    "parse_model",
    "parse_grid",
    "parse_estimators",
    "build_experiment",
    "flag_counts",
]
