"""Command-line entry point for volscope experiments.

Every subcommand reads a TOML experiment file, writes plot-ready CSV/JSON
tables into ``--out`` and finishes with a ``manifest.json`` listing the
resolved configuration and the sha256 of every output.
"""
from __future__ import annotations

import argparse
import logging
import math
import pathlib
import sys
from typing import Any, Callable, Optional

import numpy as np
import pandas as pd

from config import LOG_LEVEL, RESULTS_DIR, ConfigurationError, load_toml, section, take
from evaluation.experiments import (
    ExperimentConfig,
    SimulationError,
    build_experiment,
    flag_counts,
    simulate_daily_records,
    run_experiment,
    simulate_records,
    simulate_sample,
    summarise_daily,
    write_daily,
    write_path_estimates,
    write_summary,
    write_table,
)
from evaluation.metrics import (
    McSummary,
    MetricInputError,
    binned_histogram,
    ks_statistic,
    normalized_errors,
)
from oracle.expansion import DEFAULT_BAND, residual_order_check
from oracle.fourier import CharExponentSpec, ResolutionError
from simulation.heston import heston_iv_closed_form
from simulation.levy import LevyJumpSpec, ParameterError
from utils.provenance import RunManifest, append_run_log, to_jsonable, write_manifest

logger = logging.getLogger("volscope")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_BAND = 3

# KS distance of the normalized errors from N(0,1) reported as within band
DEFAULT_KS_BAND = 0.15


class UsageError(RuntimeError):
    """Raised for invalid command-line usage such as a missing output directory."""


def _experiment_overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {"paths": args.paths, "seed": args.seed, "workers": args.threads}


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------
def cmd_mc_table(args: argparse.Namespace, data: dict, manifest: RunManifest) -> int:
    cells = data.get("cells") or [None]
    write_paths = bool(section(data, "run").get("write_paths", False))
    experiments = [build_experiment(data, cell=cell, **_experiment_overrides(args)) for cell in cells]
    names = [cfg.name for cfg in experiments]
    if len(set(names)) != len(names):
        raise ConfigurationError("cells.name", f"cell names must be unique, got {names}")
    manifest.resolved_config = to_jsonable(experiments)

    outcomes: dict[str, McSummary | str] = {}
    path_outputs: list[pathlib.Path] = []
    for cfg in experiments:
        logger.info("Cell %s: %d paths", cfg.name, cfg.paths)
        try:
            summary = run_experiment(cfg)
        except SimulationError as exc:
            logger.warning("Cell %s failed: %s", cfg.name, exc)
            outcomes[cfg.name] = str(exc)
            continue
        outcomes[cfg.name] = summary
        manifest.timings[cfg.name] = summary.wall_time
        for name in cfg.names:
            flags = flag_counts(summary.records, name)
            if any(flags.values()):
                logger.info("Cell %s / %s flags: %s", cfg.name, name, flags)
        if write_paths:
            stem = "mc_paths" if len(experiments) == 1 else f"mc_paths_{cfg.name}"
            path_outputs += write_path_estimates(summary.records, cfg.names, args.out, stem)

    outputs = write_summary(outcomes, args.out, "mc_table") + path_outputs
    manifest.record_outputs(outputs, args.out)
    failed = sum(1 for outcome in outcomes.values() if isinstance(outcome, str))
    print(f"mc-table: {len(experiments) - failed}/{len(experiments)} cells written to {args.out}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_clt_hist(args: argparse.Namespace, data: dict, manifest: RunManifest) -> int:
    clt = section(data, "clt")
    cfg = build_experiment(data, **_experiment_overrides(args))
    manifest.resolved_config = to_jsonable(cfg)
    selected = clt.get("estimators", cfg.names)
    unknown = set(selected) - set(cfg.names)
    if unknown:
        raise ConfigurationError("clt.estimators", f"unknown estimators {sorted(unknown)}")
    bins = take(clt, "bins", int, 0, prefix="clt")
    ks_band = take(clt, "ks_band", float, DEFAULT_KS_BAND, prefix="clt")

    records = sorted(simulate_records(cfg), key=lambda record: record.path)
    truths = np.array([record.truth for record in records])
    error_rows = []
    ks_rows = []
    hist_frames = []
    for name in selected:
        errors = normalized_errors([record.values[name] for record in records], truths, cfg.grid.n_steps)
        error_rows.extend(
            {"path": record.path, "estimator": name, "normalized_error": float(value)}
            for record, value in zip(records, errors)
        )
        ks = ks_statistic(errors)
        ks_rows.append(
            {"estimator": name, "paths": len(records), "seed": cfg.master_seed, "ks": ks, "ks_band": ks_band, "within_band": ks < ks_band}
        )
        logger.info("%s: KS distance from N(0,1) = %.4f", name, ks)
        if not ks < ks_band:
            logger.warning("%s: KS distance %.4f is not below %.3g at seed %d", name, ks, ks_band, cfg.master_seed)
        if bins > 0:
            hist = binned_histogram(errors, bins=bins, span=take(clt, "span", float, 5.0, prefix="clt"))
            hist.insert(0, "estimator", name)
            hist_frames.append(hist)

    outputs = write_table(pd.DataFrame(error_rows), args.out, "clt_errors")
    outputs += write_table(pd.DataFrame(ks_rows), args.out, "clt_ks")
    if hist_frames:
        outputs += write_table(pd.concat(hist_frames, ignore_index=True), args.out, "clt_histogram")
    manifest.record_outputs(outputs, args.out)
    print("clt-hist: KS " + ", ".join(f"{row['estimator']}={row['ks']:.4f}" for row in ks_rows))
    return EXIT_OK


def _oracle_spec(check: dict, prefix: str) -> CharExponentSpec:
    sigma = take(check, "sigma", float, prefix=prefix)
    y = take(check, "y", float, prefix=prefix)
    if check.get("gaussian", False):
        return CharExponentSpec.gaussian(sigma, y=y)
    c = check.get("c")
    jumps = LevyJumpSpec(
        c_plus=take(check, "c_plus", float, c, prefix=prefix),
        c_minus=take(check, "c_minus", float, c, prefix=prefix),
        g_temper=0.0,
        m_temper=0.0,
        y_index=y,
    )
    return CharExponentSpec.from_levy(jumps, sigma)


def cmd_oracle_check(args: argparse.Namespace, data: dict, manifest: RunManifest) -> int:
    oracle = section(data, "oracle", required=True)
    checks = oracle.get("checks")
    if not checks:
        raise ConfigurationError("oracle.checks", "at least one [[oracle.checks]] entry is required")

    resolved = []
    rows = []
    outputs: list[pathlib.Path] = []
    misses = 0
    for index, check in enumerate(checks):
        prefix = f"oracle.checks[{index}]"
        name = take(check, "name", str, f"check{index}", prefix=prefix)
        try:
            spec = _oracle_spec(check, prefix)
        except ParameterError as exc:
            raise ConfigurationError(prefix, str(exc)) from exc
        k = take(check, "k", int, 1, prefix=prefix)
        omega = take(check, "omega", float, 5.0 / 12.0, prefix=prefix)
        band = take(check, "band", float, DEFAULT_BAND, prefix=prefix)
        exponents = check.get("h_exponents")
        if exponents is not None:
            h_values = [2.0 ** (-int(e)) for e in exponents]
        else:
            h_values = [float(h) for h in take(check, "h_values", list, prefix=prefix)]
        resolved.append({"name": name, "spec": spec, "k": k, "omega": omega, "band": band, "h_values": h_values})

        report = residual_order_check(spec, k, h_values, omega, coef_scale=args.coef_scale, band=band)
        outputs.append(report.write_json(args.out / f"oracle_{name}.json"))
        outputs.append(report.write_csv(args.out / f"oracle_{name}.csv"))
        rows.append(
            {
                "check": name,
                "k": k,
                "fitted_order": report.fitted_order,
                "theoretical_order": report.theoretical_order,
                "retained_order": report.retained_order,
                "exponential_regime": report.exponential_regime,
                "passed": report.passed,
            }
        )
        if not report.passed:
            misses += 1
    manifest.resolved_config = to_jsonable({"coef_scale": args.coef_scale, "checks": resolved})
    outputs += write_table(pd.DataFrame(rows), args.out, "oracle_summary")
    manifest.record_outputs(outputs, args.out)
    print(f"oracle-check: {len(rows) - misses}/{len(rows)} checks within band")
    return EXIT_BAND if misses else EXIT_OK


def cmd_daily_iv(args: argparse.Namespace, data: dict, manifest: RunManifest) -> int:
    daily = section(data, "daily")
    cfg = build_experiment(data, **_experiment_overrides(args))
    manifest.resolved_config = to_jsonable(cfg)
    name = take(daily, "estimator", str, cfg.names[0], prefix="daily")
    matches = [estimator for estimator in cfg.estimators if estimator.name == name]
    if not matches:
        raise ConfigurationError("daily.estimator", f"unknown estimator {name!r}")
    days = daily.get("days")
    if days is not None and any(not 1 <= int(day) <= cfg.blocks for day in days):
        raise ConfigurationError("daily.days", f"days must lie in 1..{cfg.blocks}")

    records = simulate_daily_records(cfg, matches[0])
    summary = summarise_daily(records, days)
    outputs = write_daily(records, args.out)
    outputs += write_table(summary, args.out, "daily_summary")

    diffusion = cfg.model.diffusion
    if diffusion.kind == "heston" and diffusion.xi == 0.0:
        day_length = cfg.grid.horizon_t / cfg.blocks
        worst = max(
            abs(record.truth - heston_iv_closed_form(diffusion, (record.day - 1) * day_length, record.day * day_length))
            for record in records
        )
        logger.info("Deterministic variance: max |simulated - closed-form| daily IV = %.3e", worst)
        outputs += write_table(pd.DataFrame([{"max_abs_deviation": worst}]), args.out, "daily_closed_form")

    manifest.record_outputs(outputs, args.out)
    mean_row = summary[(summary["day"] == "mean") & (summary["estimator"] == "two_step")]
    mad = float(mean_row["mad"].iloc[0]) if not mean_row.empty else math.nan
    print(f"daily-iv: {cfg.paths} paths x {cfg.blocks} days, mean daily MAD {mad:.3e}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, data: dict, manifest: RunManifest) -> int:
    cfg: ExperimentConfig = build_experiment(data, **_experiment_overrides(args))
    manifest.resolved_config = to_jsonable(cfg)
    increments = []
    block_iv = []
    for path_index in cfg.path_indices:
        sample = simulate_sample(cfg, path_index)
        increments.append(
            pd.DataFrame({"path": path_index, "step": np.arange(sample.increments.size), "increment": sample.increments})
        )
        block_iv.append(pd.DataFrame({"path": path_index, "block": np.arange(cfg.blocks), "iv": sample.block_iv}))
    outputs = write_table(pd.concat(increments, ignore_index=True), args.out, "increments")
    outputs += write_table(pd.concat(block_iv, ignore_index=True), args.out, "block_iv")
    manifest.record_outputs(outputs, args.out)
    print(f"simulate: {cfg.paths} paths of {cfg.grid.n_steps} increments written to {args.out}")
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace, dict, RunManifest], int]] = {
    "mc-table": cmd_mc_table,
    "clt-hist": cmd_clt_hist,
    "oracle-check": cmd_oracle_check,
    "daily-iv": cmd_daily_iv,
    "simulate": cmd_simulate,
}


def parse_args(argv: Optional[list[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="volscope", description="Monte Carlo studies of debiased truncated realized variance")
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "mc-table": "Summary table per (Y, sigma) cell",
        "clt-hist": "Normalized errors and KS distance from N(0,1)",
        "oracle-check": "Residual orders of the truncated-moment expansions",
        "daily-iv": "Pooled daily integrated variance under Heston volatility",
        "simulate": "Dump raw simulated increments and block IV",
    }
    for command, help_text in helps.items():
        sub = subparsers.add_parser(command, help=help_text)
        sub.add_argument("--config", type=pathlib.Path, required=True, help="TOML experiment file")
        sub.add_argument("--out", type=pathlib.Path, default=None, help=f"Output directory (default: {RESULTS_DIR})")
        sub.add_argument("--seed", type=int, default=None, help="Override run.master_seed")
        sub.add_argument("--paths", type=int, default=None, help="Override run.paths")
        sub.add_argument("--threads", type=int, default=None, help="Worker processes (results do not depend on it)")
        sub.add_argument("--log-level", default=LOG_LEVEL, help="Logging level (default: %(default)s)")
        if command == "oracle-check":
            # negative control: scales the predicted jump coefficient
            sub.add_argument("--coef-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    return parser.parse_args(argv)


def _resolve_out(out: Optional[pathlib.Path]) -> pathlib.Path:
    if out is None:
        default = pathlib.Path(RESULTS_DIR)
        default.mkdir(parents=True, exist_ok=True)
        return default
    if not out.is_dir():
        raise UsageError(f"output directory does not exist: {out}")
    return out


def main(argv: Optional[list[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if not hasattr(args, "coef_scale"):
        args.coef_scale = 1.0

    try:
        args.out = _resolve_out(args.out)
        data = load_toml(args.config)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    manifest = RunManifest(command=args.command, config_path=str(args.config), resolved_config=None, seed=args.seed)
    try:
        status = COMMANDS[args.command](args, data, manifest)
    except (ConfigurationError, ParameterError) as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
    except (SimulationError, ResolutionError, MetricInputError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_PARTIAL

    manifest.finish("ok" if status == EXIT_OK else f"exit {status}")
    if manifest.seed is None and isinstance(manifest.resolved_config, dict):
        manifest.seed = manifest.resolved_config.get("master_seed")
    write_manifest(args.out, manifest)
    append_run_log(args.out, {"command": args.command, "config": str(args.config), "status": manifest.status, "outputs": manifest.outputs})
    return status


if __name__ == "__main__":
    sys.exit(main())
