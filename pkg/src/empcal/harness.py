"""Per-iteration pipeline and whole-scenario runs: simulate, estimate, synthesize, calibrate, score."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from empcal import __version__
from empcal.calibrate import (
    ControlEstimate,
    SystematicErrorModel,
    calibrate_ci,
    fit_error_model,
)
from empcal.config import ErrorModelKind, ScenarioConfig
from empcal.controls import fit_negative_control, synthesize_positive_control
from empcal.errors import EmpCalError, ExcessiveFailures, IterationFailed, NonMonotonePredictive
from empcal.estimate import EffectEstimate, estimate_adjusted_effect, estimate_effects, propensity_scores, stabilized_weights
from empcal.metrics import Arm, IterationRecord, ScenarioSummary, build_funnel_rows, summarize
from empcal.simulate import POSITIVE_CONTROL_STREAM, build_study, iteration_rng

logger = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.2


@dataclass(frozen=True)
class IterationEstimates:
    """Everything estimated in one iteration, before any error model is fitted."""

    iteration: int
    theta_true: float
    outcome: EffectEstimate
    negatives: List[ControlEstimate]
    positives: List[ControlEstimate]


@dataclass
class RunManifest:
    config: dict
    tool_version: str = __version__
    started: str = ""
    finished: str = ""
    failures: List[dict] = field(default_factory=list)
    status: str = "running"

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def _target_key(theta_t: float) -> int:
    return int(np.float64(theta_t).view(np.uint64))


def estimate_iteration(
    config: ScenarioConfig, iteration: int, with_positives: Optional[bool] = None
) -> IterationEstimates:
    """Simulate one cohort and estimate the outcome of interest and every control.

    Propensity weights are fitted once and shared by all outcomes. Positive
    controls are synthesized only for the full error model unless
    ``with_positives`` says otherwise; they use their own random streams, so
    the study itself is identical either way.
    """
    if with_positives is None:
        with_positives = config.error_model is ErrorModelKind.FULL
    study = build_study(config, iteration)
    z = study.z
    ps = propensity_scores(study.x_observed, z)
    w = stabilized_weights(z, ps, config.weight_truncation)
    conditional = config.estimand == "conditional"

    def estimate_all(Y, ids):
        if not conditional:
            return estimate_effects(z, Y, w, ids)
        return [estimate_adjusted_effect(z, Y[:, j], study.x_observed, w, oid) for j, oid in enumerate(ids)]

    ids = ["outcome"] + [f"negative:{s}" for s in range(study.n_controls)]
    ests = estimate_all(np.column_stack([study.y_star, study.y_neg]), ids)
    outcome = ests[0]
    negatives = [ControlEstimate(e.theta_hat, e.se_hat, 0.0) for e in ests[1:]]

    positives = []
    if with_positives:
        pcs = []
        for s in range(study.n_controls):
            nc_fit = fit_negative_control(study, s)
            for theta_t in config.positive_control_targets:
                rng = iteration_rng(
                    config.seed, iteration, POSITIVE_CONTROL_STREAM, s, _target_key(theta_t)
                )
                pcs.append(synthesize_positive_control(nc_fit, study, theta_t, rng))
        ids = [f"positive:{pc.source_control}:{pc.target_effect:.6g}" for pc in pcs]
        ests = estimate_all(np.column_stack([pc.y_pos for pc in pcs]), ids)
        positives = [
            ControlEstimate(e.theta_hat, e.se_hat, pc.target_effect if conditional else pc.nominal_true_effect)
            for e, pc in zip(ests, pcs)
        ]

    return IterationEstimates(
        iteration=iteration,
        theta_true=study.truth.beta_z_star if conditional else study.theta_true,
        outcome=outcome,
        negatives=negatives,
        positives=positives,
    )


def score_iteration(
    est: IterationEstimates, kind: ErrorModelKind, alpha: float = 0.05
) -> Tuple[IterationRecord, SystematicErrorModel]:
    controls = est.negatives if kind is ErrorModelKind.NULL else est.negatives + est.positives
    model = fit_error_model(controls, kind)
    cal = calibrate_ci(est.outcome, model, alpha)
    covered = scored = 0
    for c in controls:
        try:
            cc = calibrate_ci(EffectEstimate(c.theta_hat, c.se_hat), model, alpha)
        except NonMonotonePredictive:
            # diagnostic only: a control whose interval is unbounded is skipped
            continue
        scored += 1
        covered += cc.ci_low <= c.true_effect <= cc.ci_high
    record = IterationRecord(
        iteration=est.iteration,
        theta_true=est.theta_true,
        theta_hat=est.outcome.theta_hat,
        se_hat=est.outcome.se_hat,
        cal=cal,
        control_cal_coverage=covered / scored if scored else float("nan"),
    )
    return record, model


def run_iteration(config: ScenarioConfig, iteration: int) -> IterationRecord:
    try:
        est = estimate_iteration(config, iteration)
        record, _ = score_iteration(est, config.error_model, config.alpha)
    except (EmpCalError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise IterationFailed(iteration, exc) from exc
    return record


def _safe_iteration(args) -> IterationRecord:
    config, iteration = args
    try:
        return run_iteration(config, iteration)
    except IterationFailed as exc:
        logger.warning("%s", exc)
        return IterationRecord.failure(iteration, getattr(exc.cause, "kind", type(exc.cause).__name__))


def run_records(config: ScenarioConfig, threads: int = 1) -> List[IterationRecord]:
    jobs = [(config, i) for i in range(config.n_iterations)]
    if threads <= 1:
        return [_safe_iteration(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_safe_iteration, jobs))


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def run_scenario(
    config: ScenarioConfig, threads: int = 1, out_dir: Optional[Path] = None
) -> Tuple[Optional[ScenarioSummary], List[IterationRecord], RunManifest]:
    """Run every iteration, aggregate, and (optionally) write outputs to ``out_dir``.

    Raises :class:`ExcessiveFailures` when more than 20% of iterations fail;
    the manifest is written first in that case.
    """
    manifest = RunManifest(config=config.to_dict(), started=_now())
    records = run_records(config, threads)
    manifest.failures = [
        {"iteration": r.iteration, "error": r.error} for r in records if r.failed
    ]
    manifest.finished = _now()
    n_failed = len(manifest.failures)
    if n_failed > MAX_FAILURE_FRACTION * config.n_iterations:
        manifest.status = "aborted"
        if out_dir is not None:
            write_manifest(Path(out_dir), manifest)
        raise ExcessiveFailures(f"{n_failed} of {config.n_iterations} iterations failed")
    summary = summarize(records, config.bias_denominator)
    manifest.status = "complete" if n_failed == 0 else "partial"
    if out_dir is not None:
        write_outputs(Path(out_dir), config, summary, records, manifest)
    return summary, records, manifest


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_manifest(out_dir: Path, manifest: RunManifest) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(manifest.to_json() + "\n")


SUMMARY_HEADER = (
    "scenario", "suitability", "error_model", "n", "iterations",
    "coverage_uncal", "coverage_cal", "std_abs_bias_uncal", "std_abs_bias_cal",
    "ci_width_uncal", "ci_width_cal", "control_cal_coverage", "n_failed",
)
ITERATIONS_HEADER = (
    "iteration", "arm", "theta_true", "estimate", "se", "ci_low", "ci_high",
    "covered", "p_value", "control_cal_coverage",
)
FUNNEL_HEADER = ("iteration", "arm", "bias", "se", "significant")


def write_outputs(
    out_dir: Path,
    config: ScenarioConfig,
    summary: ScenarioSummary,
    records: Sequence[IterationRecord],
    manifest: RunManifest,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, manifest)
    _write_csv(
        out_dir / "summary.csv",
        SUMMARY_HEADER,
        [(
            config.scenario.value, config.suitability.value, config.error_model.value,
            config.n_subjects, config.n_iterations,
            summary.coverage_uncal, summary.coverage_cal,
            summary.mean_std_abs_bias_uncal, summary.mean_std_abs_bias_cal,
            summary.mean_ci_width_uncal, summary.mean_ci_width_cal,
            summary.control_cal_coverage, summary.n_failed,
        )],
    )

    def iteration_rows():
        for r in sorted(records, key=lambda r: r.iteration):
            if r.failed:
                continue
            uncal_p = 2.0 * norm.sf(abs(r.theta_hat / r.se_hat))
            for which, p in ((Arm.UNCAL, uncal_p), (Arm.CAL, r.cal.p_cal)):
                est, se, lo, hi = r.arm(which)
                yield (
                    r.iteration, which.value, r.theta_true, est, se, lo, hi,
                    lo <= r.theta_true <= hi, float(p), r.control_cal_coverage,
                )

    _write_csv(out_dir / "iterations.csv", ITERATIONS_HEADER, iteration_rows())
    _write_csv(
        out_dir / "funnel.csv",
        FUNNEL_HEADER,
        ((f.iteration, f.arm, f.bias, f.se, f.significant) for f in build_funnel_rows(records)),
    )
