"""Aggregation of per-iteration results into coverage, standardized bias, CI width and funnel rows."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

from scipy.stats import norm

from empcal.calibrate import CalibratedEstimate
from empcal.errors import EmptyInput

Z95 = float(norm.ppf(0.975))


class Arm(str, Enum):
    UNCAL = "uncalibrated"
    CAL = "calibrated"


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    theta_true: float
    theta_hat: float
    se_hat: float
    cal: Optional[CalibratedEstimate]
    control_cal_coverage: float = float("nan")
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def ci_low(self) -> float:
        return self.theta_hat - Z95 * self.se_hat

    @property
    def ci_high(self) -> float:
        return self.theta_hat + Z95 * self.se_hat

    def arm(self, which: Arm):
        """``(estimate, se, ci_low, ci_high)`` for one arm."""
        if Arm(which) is Arm.UNCAL:
            return self.theta_hat, self.se_hat, self.ci_low, self.ci_high
        c = self.cal
        return c.theta_cal, c.se_cal, c.ci_low, c.ci_high

    @classmethod
    def failure(cls, iteration: int, error: str) -> "IterationRecord":
        nan = float("nan")
        return cls(iteration=iteration, theta_true=nan, theta_hat=nan, se_hat=nan, cal=None, error=error)


@dataclass(frozen=True)
class ScenarioSummary:
    coverage_uncal: float
    coverage_cal: float
    mean_std_abs_bias_uncal: float
    mean_std_abs_bias_cal: float
    mean_ci_width_uncal: float
    mean_ci_width_cal: float
    control_cal_coverage: float
    mean_bias_uncal: float
    mc_se_bias_uncal: float
    n_iterations_used: int
    n_failed: int


@dataclass(frozen=True)
class FunnelRow:
    iteration: int
    bias: float
    se: float
    calibrated: bool
    significant: bool

    @property
    def arm(self) -> str:
        return Arm.CAL.value if self.calibrated else Arm.UNCAL.value


def _usable(records: Sequence[IterationRecord]) -> List[IterationRecord]:
    if len(records) == 0:
        raise EmptyInput("no records")
    ok = sorted((r for r in records if not r.failed), key=lambda r: r.iteration)
    if not ok:
        raise EmptyInput("every record failed")
    return ok


def coverage(records: Sequence[IterationRecord], which: Arm) -> float:
    ok = _usable(records)
    hits = 0
    for r in ok:
        _, _, lo, hi = r.arm(which)
        hits += lo <= r.theta_true <= hi
    return hits / len(ok)


def mean_standardized_abs_bias(
    records: Sequence[IterationRecord], which: Arm, denominator: str = "own"
) -> float:
    """Mean of ``|estimate - truth| / se``.

    ``denominator="own"`` scales each arm by its own standard error;
    ``"uncalibrated"`` always uses the uncalibrated one.
    """
    ok = _usable(records)
    vals = []
    for r in ok:
        est, se, _, _ = r.arm(which)
        if denominator == "uncalibrated":
            se = r.se_hat
        vals.append(abs(est - r.theta_true) / se)
    return math.fsum(vals) / len(vals)


def mean_ci_width(records: Sequence[IterationRecord], which: Arm) -> float:
    ok = _usable(records)
    widths = []
    for r in ok:
        _, _, lo, hi = r.arm(which)
        widths.append(hi - lo)
    return math.fsum(widths) / len(widths)


def build_funnel_rows(records: Sequence[IterationRecord]) -> List[FunnelRow]:
    rows = []
    for r in _usable(records):
        for which in (Arm.UNCAL, Arm.CAL):
            est, se, lo, hi = r.arm(which)
            rows.append(
                FunnelRow(
                    iteration=r.iteration,
                    bias=est - r.theta_true,
                    se=se,
                    calibrated=which is Arm.CAL,
                    significant=not (lo <= r.theta_true <= hi),
                )
            )
    return rows


def _mc_se(values: List[float], mean: float) -> float:
    # fsum keeps the result independent of record order
    if len(values) < 2:
        return float("nan")
    var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return math.sqrt(var / len(values))


def summarize(records: Sequence[IterationRecord], denominator: str = "own") -> ScenarioSummary:
    ok = _usable(records)
    bias = [r.theta_hat - r.theta_true for r in ok]
    mean_bias = math.fsum(bias) / len(bias)
    ctrl = [r.control_cal_coverage for r in ok if not math.isnan(r.control_cal_coverage)]
    return ScenarioSummary(
        coverage_uncal=coverage(ok, Arm.UNCAL),
        coverage_cal=coverage(ok, Arm.CAL),
        mean_std_abs_bias_uncal=mean_standardized_abs_bias(ok, Arm.UNCAL, denominator),
        mean_std_abs_bias_cal=mean_standardized_abs_bias(ok, Arm.CAL, denominator),
        mean_ci_width_uncal=mean_ci_width(ok, Arm.UNCAL),
        mean_ci_width_cal=mean_ci_width(ok, Arm.CAL),
        control_cal_coverage=math.fsum(ctrl) / len(ctrl) if ctrl else float("nan"),
        mean_bias_uncal=mean_bias,
        mc_se_bias_uncal=_mc_se(bias, mean_bias),
        n_iterations_used=len(ok),
        n_failed=len(records) - len(ok),
    )
