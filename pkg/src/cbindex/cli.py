"""Command-line entry points for estimation, simulation, and curve export.

Three subcommands:

``estimate``
    Load a trial CSV, fit the benefit model, and write ``report.json``
    (coefficients, penalty, dispersion, concentration estimates, and
    optional bootstrap intervals / optimism corrections) plus
    ``benefit_histogram.csv`` and ``partial_sums.csv``.
``simulate``
    Run the synthetic-trial study and write ``table3.csv`` and
    ``simulation.json``.
``curve``
    Export the benefit-vs-treated-fraction curve with its integral
    identity check.

Every run requires an explicit ``--seed``; no command reads system
randomness.  Outputs embed the seed and a digest of the resolved
configuration so any file can be traced to the run that produced it.
Exit codes: 0 success, 1 configuration error, 2 data error,
3 estimation degenerate (diagnostics in the report).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import benefit as bn
from .errors import CbIndexError, ConfigError, DataError, EstimationError
from .inference import BootstrapConfig, bootstrap_intervals, optimism_adjust_all
from .nbglm import FittedBenefitModel
from .pipeline import BenefitPipeline
from .simulation import SimSettings, Scenario, SimulationReport, run_simulation
from .trial_data import balance_check, load_dataset

SCHEMA_VERSION = 1

_ESTIMATOR_CHOICES = ("parametric", "semiparametric", "both")


@dataclass
class RunConfig:
    """Resolved settings for one CLI invocation."""

    command: str
    seed: int
    out_dir: Path
    input_path: Path | None = None
    columns: dict[str, Any] = field(default_factory=dict)
    model: str = "ridge"
    estimator: str = "both"
    bootstrap: int = 0
    optimism: int = 0
    workers: int = 1
    cv: dict[str, Any] = field(default_factory=dict)
    smd_threshold: float = 0.05
    model_file: Path | None = None
    # simulate
    scenarios: list[str] = field(default_factory=list)
    n_values: list[int] = field(default_factory=list)
    replicates: int = 50
    population_size: int = 200_000
    theta: float = 10.0
    followup: str = "fixed"
    sim_optimism: int = 12
    # curve
    grid_size: int = 100
    p_values: list[float] | None = None

    def digest_payload(self) -> dict:
        payload = {
            "command": self.command,
            "seed": self.seed,
            "model": self.model,
            "estimator": self.estimator,
            "bootstrap": self.bootstrap,
            "optimism": self.optimism,
            "cv": self.cv,
            "columns": self.columns,
            "scenarios": self.scenarios,
            "n_values": self.n_values,
            "replicates": self.replicates,
            "population_size": self.population_size,
            "theta": self.theta,
            "followup": self.followup,
            "sim_optimism": self.sim_optimism,
            "grid_size": self.grid_size,
            "p_values": self.p_values,
            "smd_threshold": self.smd_threshold,
        }
        if self.input_path is not None and self.input_path.exists():
            payload["input_sha256"] = hashlib.sha256(
                self.input_path.read_bytes()
            ).hexdigest()
        return payload

    @property
    def digest(self) -> str:
        canon = json.dumps(self.digest_payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _json_safe(value):
    """Replace non-finite floats by strings so reports stay strict JSON."""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    return value


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_json_safe(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _meta_lines(cfg: RunConfig) -> list[str]:
    return [f"schema={SCHEMA_VERSION} command={cfg.command} config={cfg.digest} seed={cfg.seed}"]


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError("config file must hold a JSON object")
    return payload


def _require_seed(args, file_cfg) -> int:
    seed = args.seed if args.seed is not None else file_cfg.get("seed")
    if seed is None:
        raise ConfigError("--seed is required (no wall-clock default)")
    return int(seed)


def _estimator_kinds(selection: str) -> list[str]:
    if selection == "both":
        return ["parametric", "semiparametric"]
    return [selection]


def _build_pipeline(cfg: RunConfig) -> BenefitPipeline:
    cv = cfg.cv
    return BenefitPipeline(
        model=cfg.model,
        cv_folds=int(cv.get("folds", 10)),
        lambda_grid_size=int(cv.get("grid_size", 100)),
        lambda_min_ratio=float(cv.get("min_ratio", 1e-4)),
        cv_loss=str(cv.get("loss", "squared")),
    )


def _cb_block(estimates, failures, kind):
    est = estimates.get(kind)
    if est is None:
        return {"error": failures.get(kind, "not computed")}
    return est.as_dict()


def cmd_estimate(cfg: RunConfig) -> int:
    """Fit the model on a trial CSV and write the estimation report."""
    if cfg.input_path is None:
        raise ConfigError("estimate needs --input")
    if not cfg.columns:
        raise ConfigError("estimate needs a column mapping in the config file")
    data = load_dataset(str(cfg.input_path), cfg.columns)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)

    report: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "command": "estimate",
        "config_digest": cfg.digest,
        "seed": cfg.seed,
        "n_subjects": data.n,
        "n_missing_excluded": data.n_missing_excluded,
        "covariates": list(data.covariate_names),
    }
    if data.has_both_arms:
        bal = balance_check(data, threshold=cfg.smd_threshold)
        report["balance"] = {
            "smd": bal.as_dict(),
            "threshold": cfg.smd_threshold,
            "flagged": bal.flagged,
        }

    pipeline = _build_pipeline(cfg)
    kinds = _estimator_kinds(cfg.estimator)
    try:
        result = pipeline.estimate(data, seed=cfg.seed)
    except EstimationError as exc:
        report["error"] = str(exc)
        _write_json(cfg.out_dir / "report.json", report)
        print(f"estimation degenerate: {exc}", file=sys.stderr)
        return 3

    model = result.model
    report["model"] = {
        "kind": cfg.model,
        "lambda": model.penalty,
        "theta": model.dispersion,
        "converged": model.fit_meta.converged,
        "iterations": model.fit_meta.iterations,
        "coefficients": [
            {"name": name, "value": float(v)}
            for name, v in zip(model.coefficient_names, model.coefficients)
        ],
        "cv": None
        if result.cv is None
        else {
            "folds": result.cv.folds,
            "grid_size": int(result.cv.lambda_grid.size),
            "chosen_lambda": result.cv.chosen_lambda,
        },
    }
    report["estimates"] = {
        kind: _cb_block(result.estimates, result.failures, kind) for kind in kinds
    }

    degenerate = [k for k in kinds if k not in result.estimates]

    if cfg.bootstrap > 0 and not degenerate:
        boot_cfg = BootstrapConfig(
            replicates=cfg.bootstrap, seed=cfg.seed, workers=cfg.workers
        )
        intervals = bootstrap_intervals(data, pipeline, boot_cfg)
        report["intervals"] = {}
        for kind in kinds:
            iv = intervals.get(kind)
            if iv is None:
                continue
            report["intervals"][kind] = {
                "level": iv.level,
                "lower": iv.lower,
                "upper": iv.upper,
                "replicates": cfg.bootstrap,
                "failed": iv.n_failed,
                "unreliable": iv.unreliable,
            }
            iv.save_replicates(
                cfg.out_dir / f"bootstrap_{kind}.csv", header_lines=_meta_lines(cfg)
            )

    if cfg.optimism > 0 and not degenerate:
        opt_cfg = BootstrapConfig(
            replicates=cfg.optimism, seed=cfg.seed + 1, workers=cfg.workers
        )
        adjusted = optimism_adjust_all(data, pipeline, opt_cfg, original=result)
        report["optimism"] = {
            kind: {
                "replicates": cfg.optimism,
                "optimism": adj.optimism,
                "adjusted": adj.adjusted,
                "failed": adj.n_failed,
            }
            for kind, adj in adjusted.items()
            if kind in kinds
        }

    _write_json(cfg.out_dir / "report.json", report)
    model_payload = model.to_dict()
    model_payload.update(
        {"schema_version": SCHEMA_VERSION, "config_digest": cfg.digest, "seed": cfg.seed}
    )
    _write_json(cfg.out_dir / "model.json", model_payload)

    with open(cfg.out_dir / "benefit_histogram.csv", "w", encoding="utf-8", newline="\n") as fh:
        for line in _meta_lines(cfg):
            fh.write(f"# {line}\n")
        fh.write("subject_id,benefit\n")
        for sid, value in zip(data.ids, result.benefit.values):
            fh.write(f"{sid},{float(value)!r}\n")

    par_curve = bn.partial_sums_parametric(result.benefit)
    semi_curve = None
    if data.has_both_arms:
        semi_curve = bn.semiparametric_partial_sums(data, result.benefit)
    with open(cfg.out_dir / "partial_sums.csv", "w", encoding="utf-8", newline="\n") as fh:
        for line in _meta_lines(cfg):
            fh.write(f"# {line}\n")
        fh.write("k,parametric,semiparametric\n")
        for i, k in enumerate(par_curve.k):
            semi = "" if semi_curve is None else repr(float(semi_curve.values[i]))
            fh.write(f"{int(k)},{float(par_curve.values[i])!r},{semi}\n")

    if degenerate:
        msgs = "; ".join(f"{k}: {result.failures.get(k, 'unavailable')}" for k in degenerate)
        print(f"estimation degenerate: {msgs}", file=sys.stderr)
        return 3
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    """Run the synthetic-trial estimator study and write its tables."""
    if not cfg.scenarios:
        raise ConfigError("simulate needs --scenario")
    if not cfg.n_values:
        raise ConfigError("simulate needs --n")
    try:
        scenarios = [
            Scenario.by_name(name, theta=cfg.theta, followup=cfg.followup)
            for name in cfg.scenarios
        ]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    settings = SimSettings(
        population_size=cfg.population_size,
        optimism_replicates=cfg.sim_optimism,
        workers=cfg.workers,
    )
    all_rows = []
    reports: list[SimulationReport] = []
    for scenario in scenarios:
        rep = run_simulation(
            scenario, cfg.n_values, cfg.replicates, cfg.seed, settings=settings
        )
        reports.append(rep)
        all_rows.extend(rep.rows)
    merged = SimulationReport(
        rows=all_rows, replicates=cfg.replicates, seed=cfg.seed, settings=settings
    )
    merged.to_csv(str(cfg.out_dir / "table3.csv"), header_lines=_meta_lines(cfg))
    payload = merged.to_dict()
    payload.update(
        {
            "schema_version": SCHEMA_VERSION,
            "command": "simulate",
            "config_digest": cfg.digest,
        }
    )
    _write_json(cfg.out_dir / "simulation.json", payload)
    return 0


def cmd_curve(cfg: RunConfig) -> int:
    """Write the benefit(p) curve for a fitted model or a dataset."""
    if cfg.model_file is None and cfg.input_path is None:
        raise ConfigError("curve needs --input or --model-file")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.model_file is not None:
        if cfg.input_path is None:
            raise ConfigError("curve with --model-file still needs --input for covariates")
        model = FittedBenefitModel.load(str(cfg.model_file))
        data = load_dataset(str(cfg.input_path), cfg.columns)
        bv = bn.predicted_benefit(model, data)
    else:
        if not cfg.columns:
            raise ConfigError("curve needs a column mapping in the config file")
        data = load_dataset(str(cfg.input_path), cfg.columns)
        pipeline = _build_pipeline(cfg)
        try:
            result = pipeline.estimate(data, seed=cfg.seed)
        except EstimationError as exc:
            print(f"estimation degenerate: {exc}", file=sys.stderr)
            return 3
        bv = result.benefit

    if cfg.p_values:
        grid = np.asarray(sorted(cfg.p_values), dtype=np.float64)
    else:
        grid = np.arange(1, cfg.grid_size + 1, dtype=np.float64) / cfg.grid_size
    curve = bn.benefit_curve(bv, grid)
    integral = bn.benefit_curve(
        bv, np.linspace(1.0 / 10_000, 1.0, 10_000)
    ).integral()
    half_pair_max = 0.5 * bn.pair_max_parametric(bv) if bv.n >= 2 else math.nan
    lines = _meta_lines(cfg) + [
        f"integrated_benefit={integral!r}",
        f"half_pair_max={half_pair_max!r}",
    ]
    curve.to_csv(str(cfg.out_dir / "curve.csv"), header_lines=lines)
    return 0


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage problems as config errors."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="cbindex", description=__doc__, add_help=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="master seed (required)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--workers", type=int, default=None, help="parallel workers")

    est = sub.add_parser("estimate", help="fit a trial and estimate concentration")
    common(est)
    est.add_argument("--input", default=None, help="trial CSV")
    est.add_argument("--model", choices=("ridge", "ml"), default=None)
    est.add_argument("--estimator", choices=_ESTIMATOR_CHOICES, default=None)
    est.add_argument("--bootstrap", type=int, default=None, metavar="N",
                     help="bootstrap replicates for confidence intervals")
    est.add_argument("--optimism", type=int, default=None, metavar="N",
                     help="bootstrap replicates for optimism adjustment")

    sim = sub.add_parser("simulate", help="synthetic-trial estimator study")
    common(sim)
    sim.add_argument("--scenario", action="append", default=None,
                     help="strong, weak, null, or all (repeatable)")
    sim.add_argument("--n", action="append", type=int, default=None,
                     help="trial size (repeatable)")
    sim.add_argument("--replicates", type=int, default=None)
    sim.add_argument("--population-size", type=int, default=None)
    sim.add_argument("--theta", type=float, default=None)
    sim.add_argument("--followup", choices=("fixed", "uniform"), default=None)
    sim.add_argument("--optimism", type=int, default=None, metavar="N",
                     help="inner bootstrap count for adjusted estimators")

    cur = sub.add_parser("curve", help="export the benefit(p) curve")
    common(cur)
    cur.add_argument("--input", default=None, help="trial CSV")
    cur.add_argument("--model", choices=("ridge", "ml"), default=None)
    cur.add_argument("--model-file", default=None, help="previously saved model.json")
    cur.add_argument("--grid-size", type=int, default=None)
    cur.add_argument("--p", default=None, help="comma-separated p values in (0,1]")
    return parser


def _resolve(args) -> RunConfig:
    file_cfg = _load_config_file(args.config)
    seed = _require_seed(args, file_cfg)

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return file_cfg.get(key, default)

    cfg = RunConfig(
        command=args.command,
        seed=seed,
        out_dir=Path(pick(args.out, "out", ".")),
        workers=int(pick(args.workers, "workers", 1)),
        columns=file_cfg.get("columns", {}),
        cv=file_cfg.get("cv", {}),
        smd_threshold=float(file_cfg.get("smd_threshold", 0.05)),
    )
    if args.command in ("estimate", "curve"):
        input_path = pick(getattr(args, "input", None), "input", None)
        cfg.input_path = Path(input_path) if input_path else None
        cfg.model = str(pick(getattr(args, "model", None), "model", "ridge"))
    if args.command == "estimate":
        cfg.estimator = str(pick(args.estimator, "estimator", "both"))
        cfg.bootstrap = int(pick(args.bootstrap, "bootstrap", 0))
        cfg.optimism = int(pick(args.optimism, "optimism", 0))
    if args.command == "simulate":
        raw = pick(args.scenario, "scenarios", ["all"])
        names = []
        for item in raw:
            names.extend(["strong", "weak", "null"] if item == "all" else [item])
        cfg.scenarios = names
        cfg.n_values = [int(v) for v in pick(args.n, "n_values", [400])]
        cfg.replicates = int(pick(args.replicates, "replicates", 50))
        cfg.population_size = int(pick(args.population_size, "population_size", 200_000))
        cfg.theta = float(pick(args.theta, "theta", 10.0))
        cfg.followup = str(pick(args.followup, "followup", "fixed"))
        cfg.sim_optimism = int(pick(args.optimism, "sim_optimism", 12))
    if args.command == "curve":
        cfg.model_file = Path(args.model_file) if args.model_file else None
        cfg.grid_size = int(pick(args.grid_size, "grid_size", 100))
        if args.p:
            try:
                cfg.p_values = [float(v) for v in args.p.split(",") if v.strip()]
            except ValueError as exc:
                raise ConfigError(f"bad --p list: {args.p!r}") from exc
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
        handler = {"estimate": cmd_estimate, "simulate": cmd_simulate, "curve": cmd_curve}[
            cfg.command
        ]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"estimation degenerate: {exc}", file=sys.stderr)
        return 3
    except CbIndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
