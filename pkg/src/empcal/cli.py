"""Command-line entry point: ``empcal run ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from empcal.config import ScenarioConfig
from empcal.errors import ConfigError, ExcessiveFailures

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURES = 3

# CLI flag -> config field
_FLAG_FIELDS = {
    "scenario": "scenario",
    "suitability": "suitability",
    "subjects": "n_subjects",
    "iterations": "n_iterations",
    "confounders": "n_confounders",
    "negative_controls": "n_negative_controls",
    "error_model": "error_model",
    "targets": "positive_control_targets",
    "positivity_cutoffs": "positivity_cutoffs",
    "seed": "seed",
    "weight_truncation": "weight_truncation",
    "me_target": "me_target",
    "bias_denominator": "bias_denominator",
    "estimand": "estimand",
}


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="empcal",
        description="Monte Carlo assessment of empirical calibration with negative and positive controls.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and write manifest/summary/iterations/funnel files")
    # every config flag defaults to None so that only explicitly given flags override the file
    run.add_argument("--config", type=Path, help="JSON file with config keys (flags override it)")
    run.add_argument("--scenario")
    run.add_argument("--suitability")
    run.add_argument("--subjects", type=int)
    run.add_argument("--iterations", type=int)
    run.add_argument("--confounders", type=int)
    run.add_argument("--negative-controls", type=int)
    run.add_argument("--error-model")
    run.add_argument("--targets", type=_floats, help='log odds ratios, e.g. "0.405,0.693,1.386"')
    run.add_argument("--positivity-cutoffs", type=_floats, help='e.g. "0.05,0.95"')
    run.add_argument("--seed", type=int)
    run.add_argument("--weight-truncation", type=float, help="cap weights at this upper quantile")
    run.add_argument("--me-target", choices=("outcome", "treatment"))
    run.add_argument("--bias-denominator", choices=("own", "uncalibrated"))
    run.add_argument("--estimand", choices=("marginal", "conditional"))
    run.add_argument("--out", type=Path, required=True)
    run.add_argument("--threads", type=int, default=1)
    return parser


def parse_config(args: argparse.Namespace) -> ScenarioConfig:
    """Resolve defaults <- config file <- command-line flags into a validated config."""
    values = {}
    if getattr(args, "config", None) is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config: top level must be a JSON object")
        values.update(loaded)
    for flag, name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    if "positivity_cutoffs" in values and len(values["positivity_cutoffs"]) != 2:
        raise ConfigError("positivity_cutoffs: expected exactly two numbers")
    try:
        return ScenarioConfig.from_dict(values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = parse_config(args)
    except ConfigError as exc:
        print(f"empcal: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("empcal: config error: threads: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    from empcal.harness import run_scenario

    try:
        summary, _, manifest = run_scenario(config, threads=args.threads, out_dir=args.out)
    except ExcessiveFailures as exc:
        print(f"empcal: aborted: {exc}", file=sys.stderr)
        return EXIT_FAILURES
    print(
        f"{config.scenario.value}/{config.suitability.value}/{config.error_model.value}: "
        f"coverage {summary.coverage_uncal:.3f} -> {summary.coverage_cal:.3f}, "
        f"CI width {summary.mean_ci_width_uncal:.3f} -> {summary.mean_ci_width_cal:.3f}, "
        f"failed {summary.n_failed}/{config.n_iterations}"
    )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
