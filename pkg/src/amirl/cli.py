"""Command-line entry point.

Subcommands: ``select-window`` ranks balanced-window candidates of a long
table, ``fit`` runs a pipeline mode on a balanced wide table, ``simulate``
emits a synthetic scenario, ``evaluate`` scores a fit report against a
simulation truth file.

Exit codes are a stable contract: 0 success, 2 input error, 3 config error,
4 numerical failure.  ``AMIRL_LOG`` sets the log level.  The fit config file
is a flat JSON object; see docs/config.md for the schema.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .datagen import ScenarioSpec, generate
from .impute import ImputationError
from .lasso import LassoError
from .panel import PanelDataset, PanelError, extract_window, select_balanced_window
from .pipeline import (MODE_AMIRL, MODE_LASSO_OLS, MODE_MIRL_POOLED,
                       AmirlReport, PipelineConfig, PipelineError,
                       UnbalancedPanelError, run_pipeline)
from .reem import ReemError
from .trees import TreeError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4

_MODE_ALIASES = {"amirl": MODE_AMIRL, "mirl": MODE_MIRL_POOLED,
                 "lasso-ols": MODE_LASSO_OLS}

log = logging.getLogger("amirl")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


@dataclass
class RunManifest:
    """Provenance record written beside every report.

    The deterministic part (everything except timings and the output
    directory) is embedded in report.json, so reports are byte-identical
    across worker counts and output locations; wall-clock timings live only
    in manifest.json.
    """

    tool_version: str
    command: str
    input_path: str
    config_path: str
    seed: int
    resolved_config: dict
    out_dir: str = ""
    timings: dict = field(default_factory=dict)

    def deterministic_part(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "command": self.command,
            "input": self.input_path,
            "config_file": self.config_path,
            "seed": self.seed,
            "resolved_config": self.resolved_config,
        }

    def to_dict(self) -> dict:
        out = self.deterministic_part()
        out["out_dir"] = self.out_dir
        out["timings_seconds"] = self.timings
        return out


def _read_table(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise CliError(f"no data: cannot read {path}: {exc}", EXIT_INPUT) from exc


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


# -- select-window -----------------------------------------------------------


def cmd_select_window(args) -> int:
    frame = _read_table(args.input)
    try:
        ranked = select_balanced_window(frame, min_length=args.min_length,
                                        slack=args.slack)
    except PanelError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    top = ranked[: args.top] if args.top else ranked
    table = pd.DataFrame(
        {
            "start_year": [c.start_year for c in top],
            "end_year": [c.end_year for c in top],
            "length": [c.length for c in top],
            "n_units": [c.n_units for c in top],
            "panel_size": [c.panel_size for c in top],
        }
    )
    print(table.to_string(index=False))
    if args.emit_balanced:
        panel = PanelDataset.from_long(frame)
        balanced = extract_window(panel, ranked[0])
        balanced.to_wide().to_csv(args.emit_balanced, index=False)
        print(f"balanced panel [{ranked[0].start_year}, {ranked[0].end_year}] "
              f"written to {args.emit_balanced}")
    return EXIT_OK


# -- fit ----------------------------------------------------------------------

_CONFIG_KEYS = {
    "target": str, "exclude": list, "mode": str, "criterion": str,
    "m": int, "b": int, "cycles": int, "seed": int, "threads": int,
    "candidate_fraction": float, "grid_size": int, "grid_decay": float,
    "compute_ci": bool, "ci_resamples": int, "ci_level": float,
    "include_imputed_target_in_threshold": bool,
    "exclude_target_derived": bool, "target_derived_threshold": float,
}


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_CONFIG) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}", EXIT_CONFIG) from exc
    if not isinstance(raw, dict):
        raise CliError("config must be a JSON object", EXIT_CONFIG)
    for key, value in raw.items():
        if key not in _CONFIG_KEYS:
            raise CliError(f"unknown config key {key!r}", EXIT_CONFIG)
        expected = _CONFIG_KEYS[key]
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            continue
        if not isinstance(value, expected) or isinstance(value, bool) != (expected is bool):
            raise CliError(
                f"config key {key!r} must be of type {expected.__name__}", EXIT_CONFIG
            )
    return raw


def _resolve_fit_settings(args) -> dict:
    settings = {
        "exclude": [], "mode": "amirl", "criterion": "bic", "m": 10, "b": 100,
        "cycles": 20, "seed": 0, "threads": 1, "candidate_fraction": 1.0 / 3.0,
        "grid_size": 100, "grid_decay": 0.001, "compute_ci": True,
        "ci_resamples": 1000, "ci_level": 0.90,
        "include_imputed_target_in_threshold": True,
        "exclude_target_derived": False, "target_derived_threshold": 0.95,
    }
    settings.update(_load_config(args.config))
    for key in ("mode", "criterion", "target", "seed", "threads", "cycles"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if args.m is not None:
        settings["m"] = args.m
    if args.b is not None:
        settings["b"] = args.b
    if args.exclude:
        settings["exclude"] = list(args.exclude)
    if args.exclude_target_derived:
        settings["exclude_target_derived"] = True
    if "target" not in settings or not settings["target"]:
        raise CliError("config must name a target variable", EXIT_CONFIG)
    if settings["mode"] not in _MODE_ALIASES:
        raise CliError(
            f"unknown mode {settings['mode']!r} (choose amirl, mirl, lasso-ols)",
            EXIT_CONFIG,
        )
    if settings["criterion"] not in ("bic", "aic", "cp", "all"):
        raise CliError(f"unknown criterion {settings['criterion']!r}", EXIT_CONFIG)
    return settings


def _target_derived(panel: PanelDataset, target: str, threshold: float) -> list:
    """Covariates almost definitionally identical to the target: pairwise
    complete |correlation| above the threshold."""
    j_t = panel.column(target)
    n, t, p = panel.values.shape
    values = panel.values.reshape(n * t, p)
    mask = panel.mask.reshape(n * t, p)
    out = []
    for j in range(p):
        if j == j_t:
            continue
        both = mask[:, j] & mask[:, j_t]
        if both.sum() < 3:
            continue
        a, b = values[both, j], values[both, j_t]
        if a.std() == 0 or b.std() == 0:
            continue
        if abs(float(np.corrcoef(a, b)[0, 1])) > threshold:
            out.append(panel.variables[j].name)
    return out


def _pipeline_config(settings, criterion) -> PipelineConfig:
    try:
        return PipelineConfig(
            mode=_MODE_ALIASES[settings["mode"]],
            criterion=criterion,
            n_imputations=settings["m"],
            n_bootstrap=settings["b"],
            candidate_fraction=settings["candidate_fraction"],
            seed=settings["seed"],
            grid_size=settings["grid_size"],
            grid_decay=settings["grid_decay"],
            n_cycles=settings["cycles"],
            threads=settings["threads"],
            compute_ci=settings["compute_ci"],
            ci_resamples=settings["ci_resamples"],
            ci_level=settings["ci_level"],
            include_imputed_target_in_threshold=settings[
                "include_imputed_target_in_threshold"
            ],
            keep_audit=False,
        )
    except PipelineError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc


def _coefficients_frame(report: AmirlReport) -> pd.DataFrame:
    rows = report.to_dict()["coefficients"]
    frame = pd.DataFrame(rows)
    return frame[["variable", "pi_hat", "b_init", "b_final", "selected",
                  "ci_low", "ci_high", "b_final_destd", "importance",
                  "significant"]]


def _stability_frame(report: AmirlReport) -> pd.DataFrame:
    return pd.DataFrame(report.to_dict()["threshold_table"])


def _write_report(report: AmirlReport, manifest: RunManifest, out_dir: Path,
                  suffix: str = "") -> None:
    payload = report.to_dict()
    payload["manifest"] = manifest.deterministic_part()
    _write_json(out_dir / f"report{suffix}.json", payload)
    _coefficients_frame(report).to_csv(out_dir / f"coefficients{suffix}.csv", index=False)
    _stability_frame(report).to_csv(out_dir / f"stability{suffix}.csv", index=False)
    diag_path = out_dir / f"diagnostics{suffix}.csv"
    if report.diagnostics is not None:
        report.diagnostics.to_csv(diag_path, index=False)
    else:
        pd.DataFrame(columns=["var_a", "var_b", "n_complete", "r_complete",
                              "r_imputed_mean", "r_imputed_sd",
                              "r_demeaned_mean", "r_demeaned_sd",
                              "flagged"]).to_csv(diag_path, index=False)


def cmd_fit(args) -> int:
    settings = _resolve_fit_settings(args)
    frame = _read_table(args.input)
    try:
        panel = PanelDataset.from_wide(frame)
    except PanelError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc

    excluded = list(settings["exclude"])
    try:
        if settings["exclude_target_derived"]:
            derived = _target_derived(panel, settings["target"],
                                      settings["target_derived_threshold"])
            log.info("excluding target-derived regressors: %s", derived)
            excluded += [name for name in derived if name not in excluded]
        panel = panel.with_roles(settings["target"], excluded)
    except PanelError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    criteria = (["bic", "aic", "cp"] if settings["criterion"] == "all"
                else [settings["criterion"]])
    manifest = RunManifest(
        tool_version=__version__,
        command="fit",
        input_path=str(args.input),
        config_path=str(args.config) if args.config else "",
        seed=settings["seed"],
        resolved_config={k: settings[k] for k in sorted(settings) if k != "threads"},
        out_dir=str(out_dir),
    )

    for criterion in criteria:
        config = _pipeline_config(settings, criterion)
        suffix = f"_{criterion}" if len(criteria) > 1 else ""
        started = time.perf_counter()
        try:
            report = run_pipeline(panel, config)
        except UnbalancedPanelError as exc:
            raise CliError(str(exc), EXIT_INPUT) from exc
        except (PipelineError, LassoError, ImputationError, ReemError,
                TreeError, PanelError) as exc:
            raise CliError(f"numerical failure: {exc}", EXIT_NUMERICAL) from exc
        manifest.timings[f"fit{suffix}"] = round(time.perf_counter() - started, 3)
        _write_report(report, manifest, out_dir, suffix)
        print(f"criterion={criterion} mode={report.mode} "
              f"stable set ({len(report.stable_set)}): {report.stable_names()}")

    _write_json(out_dir / "manifest.json", manifest.to_dict())
    return EXIT_OK


# -- simulate -----------------------------------------------------------------


def _parse_floats(text):
    return tuple(float(v) for v in text.split(",")) if text else ()


def _parse_ints(text):
    return tuple(int(v) for v in text.split(",")) if text else ()


def cmd_simulate(args) -> int:
    try:
        spec = ScenarioSpec(
            n_units=args.units,
            n_periods=args.periods,
            n_covariates=args.covariates,
            support=_parse_ints(args.support),
            beta=_parse_floats(args.beta),
            fixed_effect_scale=args.fe_scale,
            noise_scale=args.noise,
            block_size=args.block_size,
            rho=args.rho,
            missing_rate=args.missing_rate,
            mar_driver=args.mar_driver,
            mar_strength=args.mar_strength,
            seed=args.seed,
        )
    except Exception as exc:
        raise CliError(f"invalid scenario: {exc}", EXIT_CONFIG) from exc
    panel, truth = generate(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    panel.to_wide().to_csv(out_dir / "panel.csv", index=False)
    truth.to_json(out_dir / "truth.json")
    print(f"wrote {out_dir / 'panel.csv'} ({panel.n_units * panel.n_periods} rows) "
          f"and {out_dir / 'truth.json'}")
    return EXIT_OK


# -- evaluate -----------------------------------------------------------------


def cmd_evaluate(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text())
        truth = json.loads(Path(args.truth).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read inputs: {exc}", EXIT_INPUT) from exc

    beta = truth["beta"]
    coef_rows = {row["variable"]: row for row in report["coefficients"]}
    if set(coef_rows) != set(beta):
        raise CliError("report and truth describe different variable spaces",
                       EXIT_INPUT)

    support = {var for var, b in beta.items() if b != 0.0}
    stable = set(report["stable_set"])
    tp = len(stable & support)
    fp = len(stable - support)
    fn = len(support - stable)
    rmse = float(np.sqrt(np.mean([
        (coef_rows[var]["b_final_destd"] - beta[var]) ** 2 for var in support
    ]))) if support else float("nan")

    metrics = {
        "true_positives": tp,
        "false_positives": fp,
        "false_negatives": fn,
        "support_size": len(support),
        "stable_set_size": len(stable),
        "rmse_on_support": rmse,
        "r2_overall": report["fit"]["r2_overall"],
        "r2_within": report["fit"]["r2_within"],
    }
    for key, value in metrics.items():
        print(f"{key}: {value}")
    if args.json:
        _write_json(args.json, metrics)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amirl",
        description="Sparse model selection for incomplete panel data",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    w = sub.add_parser("select-window", help="rank balanced-window candidates")
    w.add_argument("input", help="long CSV with columns unit,year,variable,value")
    w.add_argument("--min-length", type=int, default=1)
    w.add_argument("--slack", type=float, default=0.01)
    w.add_argument("--top", type=int, default=15)
    w.add_argument("--emit-balanced", metavar="OUT.csv")
    w.set_defaults(fn=cmd_select_window)

    f = sub.add_parser("fit", help="run a selection pipeline on a balanced panel")
    f.add_argument("input", help="wide CSV: unit,year,<variables>")
    f.add_argument("--config", help="JSON config file (docs/config.md)")
    f.add_argument("--mode", choices=sorted(_MODE_ALIASES))
    f.add_argument("--criterion", choices=["bic", "aic", "cp", "all"])
    f.add_argument("--target")
    f.add_argument("--exclude", nargs="*", metavar="NAME")
    f.add_argument("--exclude-target-derived", action="store_true",
                   help="drop regressors nearly identical to the target")
    f.add_argument("-M", dest="m", type=int, help="imputed data sets")
    f.add_argument("-B", dest="b", type=int, help="bootstrap samples per imputation")
    f.add_argument("--cycles", type=int, help="chained-equation cycles")
    f.add_argument("--seed", type=int)
    f.add_argument("--threads", type=int)
    f.add_argument("--out", default="amirl_out")
    f.set_defaults(fn=cmd_fit)

    s = sub.add_parser("simulate", help="generate a synthetic scenario")
    s.add_argument("--units", type=int, default=60)
    s.add_argument("--periods", type=int, default=6)
    s.add_argument("--covariates", type=int, default=40)
    s.add_argument("--support", default="0,5,10,15,20")
    s.add_argument("--beta", default="1.0,-1.0,0.8,-0.7,0.6")
    s.add_argument("--fe-scale", type=float, default=1.0)
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--block-size", type=int, default=5)
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--missing-rate", type=float, default=0.0)
    s.add_argument("--mar-driver", type=int, default=-1)
    s.add_argument("--mar-strength", type=float, default=1.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="scenario")
    s.set_defaults(fn=cmd_simulate)

    e = sub.add_parser("evaluate", help="score a report against simulation truth")
    e.add_argument("report", help="report.json from fit")
    e.add_argument("truth", help="truth.json from simulate")
    e.add_argument("--json", metavar="OUT.json", help="also write metrics as JSON")
    e.set_defaults(fn=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("AMIRL_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
