"""Scenario grids: run a cell once and score it under both error models."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Tuple

from empcal.config import ErrorModelKind, Scenario, ScenarioConfig, Suitability
from empcal.errors import EmpCalError
from empcal.harness import estimate_iteration, score_iteration
from empcal.metrics import IterationRecord, ScenarioSummary, summarize

logger = logging.getLogger(__name__)

BIASED_SCENARIOS = (
    Scenario.UNMEASURED_CONFOUNDER,
    Scenario.QUADRATIC_TERM,
    Scenario.INTERACTION_TERM,
    Scenario.NON_POSITIVITY,
    Scenario.MEASUREMENT_ERROR,
)


def grid_cells(include_unsuitable: bool = True) -> Iterator[Tuple[Scenario, Suitability]]:
    """Every defined (scenario, suitability) cell, reference first."""
    yield Scenario.REFERENCE, Suitability.RANDOM_SUITABLE
    for sc in BIASED_SCENARIOS:
        for su in Suitability:
            if su is Suitability.UNSUITABLE and (sc is Scenario.MEASUREMENT_ERROR or not include_unsuitable):
                continue
            yield sc, su


@dataclass(frozen=True)
class CellResult:
    config: ScenarioConfig
    records: Dict[ErrorModelKind, List[IterationRecord]]

    def summary(self, kind: ErrorModelKind = ErrorModelKind.FULL) -> ScenarioSummary:
        return summarize(self.records[kind], self.config.bias_denominator)

    @property
    def full(self) -> ScenarioSummary:
        return self.summary(ErrorModelKind.FULL)

    @property
    def null(self) -> ScenarioSummary:
        return self.summary(ErrorModelKind.NULL)


def run_cell(config: ScenarioConfig) -> CellResult:
    """Estimate every iteration once, then calibrate with both the full and the null model.

    Both error models see the same cohort, outcome estimate and negative
    controls, so their comparison is paired.
    """
    records: Dict[ErrorModelKind, List[IterationRecord]] = {k: [] for k in ErrorModelKind}
    for i in range(config.n_iterations):
        try:
            est = estimate_iteration(config, i, with_positives=True)
        except EmpCalError as exc:
            logger.warning("iteration %d: %s", i, exc)
            for kind in ErrorModelKind:
                records[kind].append(IterationRecord.failure(i, exc.kind))
            continue
        for kind in ErrorModelKind:
            try:
                records[kind].append(score_iteration(est, kind, config.alpha)[0])
            except EmpCalError as exc:
                logger.warning("iteration %d (%s): %s", i, kind.value, exc)
                records[kind].append(IterationRecord.failure(i, exc.kind))
    return CellResult(config, records)
