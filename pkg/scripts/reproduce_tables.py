"""Run the scenario grid and write coverage, bias and interval-width tables.

    python3 scripts/reproduce_tables.py --subjects 20000 --iterations 200 --out results/desk
    python3 scripts/reproduce_tables.py --subjects 50000 --iterations 500 --negative-controls 30 --out results/s30

Writes ``grid.csv`` (one row per cell) and ``tables.md`` under ``--out``.
"""

import argparse
import csv
import logging
import time
from pathlib import Path

from empcal.config import ScenarioConfig
from empcal.experiments import grid_cells, run_cell

COLUMNS = (
    "scenario", "suitability", "n", "iterations", "negative_controls",
    "coverage_uncal", "coverage_full", "coverage_null",
    "std_abs_bias_uncal", "std_abs_bias_full", "std_abs_bias_null",
    "ci_width_uncal", "ci_width_full", "ci_width_null",
    "n_failed_full", "n_failed_null", "seconds",
)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--subjects", type=int, default=20_000)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--negative-controls", type=int, default=5)
    p.add_argument("--seed", type=int, default=ScenarioConfig.seed)
    p.add_argument("--scenario", action="append", help="restrict to these scenarios (repeatable)")
    p.add_argument("--out", type=Path, required=True)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)

    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for scenario, suitability in grid_cells():
        if args.scenario and scenario.value not in args.scenario:
            continue
        cfg = ScenarioConfig(
            scenario=scenario,
            suitability=suitability,
            n_subjects=args.subjects,
            n_iterations=args.iterations,
            n_negative_controls=args.negative_controls,
            seed=args.seed,
        )
        t0 = time.time()
        res = run_cell(cfg)
        full, null = res.full, res.null
        row = dict(
            scenario=scenario.value, suitability=suitability.value, n=args.subjects,
            iterations=args.iterations, negative_controls=args.negative_controls,
            coverage_uncal=full.coverage_uncal, coverage_full=full.coverage_cal, coverage_null=null.coverage_cal,
            std_abs_bias_uncal=full.mean_std_abs_bias_uncal, std_abs_bias_full=full.mean_std_abs_bias_cal,
            std_abs_bias_null=null.mean_std_abs_bias_cal,
            ci_width_uncal=full.mean_ci_width_uncal, ci_width_full=full.mean_ci_width_cal,
            ci_width_null=null.mean_ci_width_cal,
            n_failed_full=full.n_failed, n_failed_null=null.n_failed, seconds=round(time.time() - t0, 1),
        )
        rows.append(row)
        print(
            f"{scenario.value:22s} {suitability.value:10s} coverage {full.coverage_uncal:.2f} -> "
            f"{full.coverage_cal:.2f} (null {null.coverage_cal:.2f})  width {full.mean_ci_width_uncal:.3f} -> "
            f"{full.mean_ci_width_cal:.3f}  [{row['seconds']}s]",
            flush=True,
        )

    with open(args.out / "grid.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)

    lines = [
        f"n = {args.subjects}, iterations = {args.iterations}, negative controls = {args.negative_controls}",
        "",
        "| scenario | suitability | coverage uncal | coverage full | coverage null | width uncal | width full "
        "| std abs bias uncal | std abs bias full |",
        "|---|---|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        lines.append(
            f"| {r['scenario']} | {r['suitability']} | {r['coverage_uncal']:.2f} | {r['coverage_full']:.2f} "
            f"| {r['coverage_null']:.2f} | {r['ci_width_uncal']:.3f} | {r['ci_width_full']:.3f} "
            f"| {r['std_abs_bias_uncal']:.2f} | {r['std_abs_bias_full']:.2f} |"
        )
    (args.out / "tables.md").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
