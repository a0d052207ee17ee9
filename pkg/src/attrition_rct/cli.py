"""Command-line entry point.

Subcommands: ``simulate``, ``estimands``, ``montecarlo``, ``reanalyze`` and
``appendix-example``. Configuration is one YAML file; flags override it.
Exit status is 2 for bad configuration or input and 1 for estimation failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .design import (
    StrataAssignment,
    observe,
    pair_adjacent,
    randomize_stratified_block,
    randomize_within_pairs,
    stratify_by_quantiles,
)
from .dgp import PRESETS, DgpSpec, draw_sample
from .errors import (
    DesignError,
    EstimandUndefinedError,
    EstimationError,
    IngestionError,
    NumericError,
    SpecificationError,
)
from .estimands import DEFAULT_DRAWS, estimand_drop, estimand_obs, estimand_report, normal_quantile_cutpoints, true_ate
from .montecarlo import ExperimentConfig, convergence_study, run_replications
from .reanalysis import dual_estimates, load_csv
from .rng import child_seed

# Published reference values for the two appendix presets.
APPENDIX_VALUES = {
    "appendix-ex1": {"theta": 0.0, "theta_obs": 1.17, "theta_drop": -0.50},
    "appendix-ex2": {"theta": 0.0, "theta_obs": 0.56, "theta_drop": 0.86},
}

DEFAULTS: dict[str, Any] = {
    "dgp": {"preset": "appendix-ex1"},
    "design": "matched_pairs",
    "n_units": 1000,
    "replications": 200,
    "seed": 0,
    "draws": DEFAULT_DRAWS,
    "level": 0.95,
    "strata": 10,
    "cutpoints": None,
    "nu": 0.5,
    "estimators": None,
}


class ConfigError(SpecificationError):
    pass


def load_config(path: str | None) -> dict[str, Any]:
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    cfg.update(data)
    return cfg


def _apply_overrides(cfg: dict[str, Any], args: argparse.Namespace) -> dict[str, Any]:
    for key in ("seed", "n_units", "replications", "draws", "design", "strata", "nu", "level"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "preset", None):
        cfg["dgp"] = {"preset": args.preset}
    return cfg


def _spec(cfg: dict[str, Any]) -> DgpSpec:
    if not isinstance(cfg["dgp"], dict):
        raise ConfigError("dgp must be a mapping")
    return DgpSpec.from_dict(cfg["dgp"])


def _header(command: str, cfg: dict[str, Any]) -> str:
    return f"# attrition-rct {command}\n# seed: {cfg.get('seed')}\n# config: {json.dumps(cfg, sort_keys=True)}\n"


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _table(rows: list[dict[str, Any]], fmt: str) -> str:
    if not rows:
        return ""
    keys = list(dict.fromkeys(k for row in rows for k in row))
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for row in rows:
            w.writerow([_fmt(row.get(k)) for k in keys])
        return buf.getvalue()
    cells = [[k for k in keys]] + [[_text(row.get(k)) for k in keys] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(keys))]
    return "".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) + "\n" for r in cells)


def _text(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def _emit(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


# subcommands -------------------------------------------------------------------


def cmd_simulate(args, cfg) -> str:
    spec = _spec(cfg)
    seed = int(cfg["seed"])
    table = draw_sample(spec, int(cfg["n_units"]), child_seed(seed, 0), workers=args.threads)
    if cfg["design"] == "matched_pairs":
        pa = pair_adjacent(table.x)
        d = randomize_within_pairs(pa, child_seed(seed, 1))
        group = [f"p{j}" for j in pa.pair_ids()]
    elif cfg["design"] == "stratified":
        labels = stratify_by_quantiles(table.x, int(cfg["strata"]))
        d = randomize_stratified_block(StrataAssignment(labels, float(cfg["nu"]), int(cfg["strata"])), child_seed(seed, 1))
        group = [f"s{s}" for s in labels]
    else:
        raise ConfigError(f"unknown design {cfg['design']!r}")
    s = observe(table, d)
    rows = [
        {
            "unit": i,
            "x": float(table.x[i]),
            "outcome": float(s.y[i]) if s.r[i] else "",
            "r": int(s.r[i]),
            "treated": int(s.d[i]),
            "group": group[i],
        }
        for i in range(len(s))
    ]
    return _header("simulate", cfg) + _table(rows, "csv")


def cmd_estimands(args, cfg) -> str:
    spec = _spec(cfg)
    cut = None
    if cfg["design"] == "stratified":
        cut = cfg["cutpoints"] if cfg["cutpoints"] is not None else normal_quantile_cutpoints(int(cfg["strata"]))
    rep = estimand_report(spec, int(cfg["draws"]), int(cfg["seed"]), cutpoints=cut, nu=float(cfg["nu"]))
    if args.format == "csv":
        return _header("estimands", cfg) + _table([rep.as_flat()], "csv")
    return _header("estimands", cfg) + rep.to_text()


def _experiment(cfg, threads: int) -> ExperimentConfig:
    return ExperimentConfig(
        spec=_spec(cfg),
        design=cfg["design"],
        n_units=int(cfg["n_units"]),
        replications=int(cfg["replications"]),
        master_seed=int(cfg["seed"]),
        estimators=None if cfg["estimators"] is None else tuple(cfg["estimators"]),
        level=float(cfg["level"]),
        strata=int(cfg["strata"]),
        cutpoints=None if cfg["cutpoints"] is None else tuple(cfg["cutpoints"]),
        nu=float(cfg["nu"]),
        oracle_draws=int(cfg["draws"]),
        workers=threads,
    )


def cmd_montecarlo(args, cfg) -> str:
    exp = _experiment(cfg, args.threads)
    if args.grid:
        grid = [int(v) for v in args.grid.split(",")]
        results = convergence_study(exp, grid)
    else:
        results = [run_replications(exp)]
    rows = [row for res in results for row in res.rows()]
    oracle = results[0].oracle
    body = _table(rows, args.format)
    if args.format == "text":
        body = oracle.to_text() + "\n" + body
    return _header("montecarlo", cfg) + body


def cmd_reanalyze(args, cfg) -> str:
    covs = [c for c in (args.covariates or "").split(",") if c]
    ds = load_csv(args.input, args.outcome, args.treated, args.group, covs)
    est = dual_estimates(ds, use_covariates=bool(covs))
    row = {
        "file": Path(args.input).name,
        "n": len(ds),
        "original": est.original,
        "alternative": est.alternative,
        "abs_pct_diff": est.abs_pct_diff,
        "signed_pct_change": est.signed_pct_change,
        "attrition_rate": est.attrition_rate,
    }
    meta = {"input": Path(args.input).name, "outcome": args.outcome, "treated": args.treated, "group": args.group, "covariates": covs}
    return _header("reanalyze", meta) + _table([row], args.format)


def cmd_appendix(args, cfg) -> str:
    draws = int(args.draws or DEFAULT_DRAWS)
    seed = int(cfg["seed"])
    rows = []
    for name, printed in APPENDIX_VALUES.items():
        spec = PRESETS[name]
        obs = estimand_obs(spec, draws, seed)
        drop = estimand_drop(spec, draws, seed)
        for key, val, se in (("theta", true_ate(spec), 0.0), ("theta_obs", obs.value, obs.se), ("theta_drop", drop.value, drop.se)):
            rows.append({"preset": name, "quantity": key, "computed": val, "mc_se": se, "reference": printed[key], "diff": val - printed[key]})
    return _header("appendix-example", {"seed": seed, "draws": draws}) + _table(rows, args.format)


COMMANDS = {
    "simulate": cmd_simulate,
    "estimands": cmd_estimands,
    "montecarlo": cmd_montecarlo,
    "reanalyze": cmd_reanalyze,
    "appendix-example": cmd_appendix,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attrition-rct", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, fmt_default="text"):
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--output", "-o", help="output file (default: stdout)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--format", choices=("csv", "text"), default=fmt_default)
        p.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
        p.add_argument("--preset", choices=sorted(PRESETS), help="use a named DGP preset")

    p = sub.add_parser("simulate", help="draw one experiment and write the observed sample as CSV")
    common(p, "csv")
    p.add_argument("--n-units", dest="n_units", type=int)
    p.add_argument("--design", choices=("matched_pairs", "stratified"))
    p.add_argument("--strata", type=int)
    p.add_argument("--nu", type=float)

    p = sub.add_parser("estimands", help="population estimands for a DGP")
    common(p)
    p.add_argument("--draws", type=int)
    p.add_argument("--design", choices=("matched_pairs", "stratified"))
    p.add_argument("--strata", type=int)
    p.add_argument("--nu", type=float)

    p = sub.add_parser("montecarlo", help="replicated experiments summarized against oracle estimands")
    common(p)
    p.add_argument("--n-units", dest="n_units", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--draws", type=int, help="draws for the oracle estimands")
    p.add_argument("--design", choices=("matched_pairs", "stratified"))
    p.add_argument("--strata", type=int)
    p.add_argument("--nu", type=float)
    p.add_argument("--level", type=float)
    p.add_argument("--grid", help="comma-separated ascending sample sizes for a convergence study")

    p = sub.add_parser("reanalyze", help="estimates with and without group fixed effects from a CSV file")
    common(p)
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--outcome", default="outcome")
    p.add_argument("--treated", default="treated")
    p.add_argument("--group", default="group")
    p.add_argument("--covariates", help="comma-separated covariate columns added to both regressions")

    p = sub.add_parser("appendix-example", help="reproduce the two numerical-appendix DGPs")
    common(p)
    p.add_argument("--draws", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        text = COMMANDS[args.command](args, cfg)
        _emit(text, args.output)
    except (SpecificationError, DesignError, IngestionError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EstimationError, EstimandUndefinedError) as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
