"""Experiment configuration."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional, Tuple

from empcal.errors import ConfigError


class Scenario(str, Enum):
    REFERENCE = "reference"
    UNMEASURED_CONFOUNDER = "unmeasured-confounder"
    QUADRATIC_TERM = "quadratic"
    INTERACTION_TERM = "interaction"
    NON_POSITIVITY = "non-positivity"
    MEASUREMENT_ERROR = "measurement-error"


class Suitability(str, Enum):
    IDEAL_SUITABLE = "ideal"
    RANDOM_SUITABLE = "random"
    UNSUITABLE = "unsuitable"


class ErrorModelKind(str, Enum):
    FULL = "full"
    NULL = "null"


class OutcomeForm(str, Enum):
    LINEAR = "linear"
    PLUS_U = "plus-u"
    PLUS_QUADRATIC = "plus-quadratic"
    PLUS_INTERACTION = "plus-interaction"


SCENARIO_FORM = {
    Scenario.REFERENCE: OutcomeForm.LINEAR,
    Scenario.UNMEASURED_CONFOUNDER: OutcomeForm.PLUS_U,
    Scenario.QUADRATIC_TERM: OutcomeForm.PLUS_QUADRATIC,
    Scenario.INTERACTION_TERM: OutcomeForm.PLUS_INTERACTION,
    Scenario.NON_POSITIVITY: OutcomeForm.LINEAR,
    Scenario.MEASUREMENT_ERROR: OutcomeForm.LINEAR,
}

DEFAULT_TARGETS = (math.log(1.5), math.log(2.0), math.log(4.0))


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment: a bias scenario, a control-suitability mode and sizes.

    The scenario-specific knobs (positivity cutoffs, measurement-error
    hyperpriors, weight truncation) only matter for the scenarios that use
    them but are always present so a resolved config is self-describing.
    """

    scenario: Scenario = Scenario.REFERENCE
    suitability: Suitability = Suitability.RANDOM_SUITABLE
    n_subjects: int = 50_000
    n_confounders: int = 10
    n_negative_controls: int = 5
    n_iterations: int = 500
    coef_low: float = -0.693
    coef_high: float = 0.6931
    positive_control_targets: Tuple[float, ...] = DEFAULT_TARGETS
    seed: int = 20210101
    error_model: ErrorModelKind = ErrorModelKind.FULL
    positivity_cutoffs: Tuple[float, float] = (0.05, 0.95)
    me_mean_range: Tuple[float, float] = (0.1, 1.0)
    me_sd_range: Tuple[float, float] = (0.01, 0.2)
    me_target: str = "outcome"
    weight_truncation: Optional[float] = None
    bias_denominator: str = "own"
    estimand: str = "marginal"
    ideal_sharing: str = "all"
    alpha: float = 0.05

    def __post_init__(self):
        # accept plain strings / lists from config files and CLI
        for name, enum in (
            ("scenario", Scenario),
            ("suitability", Suitability),
            ("error_model", ErrorModelKind),
        ):
            value = getattr(self, name)
            if not isinstance(value, enum):
                try:
                    object.__setattr__(self, name, enum(value))
                except ValueError:
                    allowed = ", ".join(e.value for e in enum)
                    raise ConfigError(f"{name}: {value!r} is not one of {allowed}") from None
        for name in ("positive_control_targets", "positivity_cutoffs", "me_mean_range", "me_sd_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    @property
    def form(self) -> OutcomeForm:
        return SCENARIO_FORM[self.scenario]

    def validate(self) -> None:
        for name in ("n_subjects", "n_confounders", "n_negative_controls", "n_iterations"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name}: must be a positive integer, got {value!r}")
        if not self.coef_low < self.coef_high:
            raise ConfigError(
                f"coef_low/coef_high: need coef_low < coef_high, got {self.coef_low} >= {self.coef_high}"
            )
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {self.seed}")
        if self.n_negative_controls < 2:
            raise ConfigError("n_negative_controls: at least 2 negative controls are required")
        if self.error_model is ErrorModelKind.FULL:
            if len(self.positive_control_targets) < 1:
                raise ConfigError("positive_control_targets: the full error model needs at least one target")
            if any(t <= 0 for t in self.positive_control_targets):
                raise ConfigError("positive_control_targets: targets must be > 0")
        if self.scenario is Scenario.MEASUREMENT_ERROR and self.suitability is Suitability.UNSUITABLE:
            raise ConfigError(
                "suitability: 'unsuitable' is not defined for scenario 'measurement-error'"
            )
        if self.scenario is Scenario.REFERENCE and self.suitability is not Suitability.RANDOM_SUITABLE:
            raise ConfigError("suitability: scenario 'reference' only admits 'random'")
        if self.scenario is Scenario.INTERACTION_TERM and self.n_confounders < 2:
            raise ConfigError("n_confounders: the interaction scenario needs at least 2 confounders")
        lower, upper = self.positivity_cutoffs
        if not 0 < lower < upper < 1:
            raise ConfigError(f"positivity_cutoffs: need 0 < lower < upper < 1, got {self.positivity_cutoffs}")
        for name in ("me_mean_range", "me_sd_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name}: need 0 < low <= high, got {(lo, hi)}")
        if self.me_target not in ("outcome", "treatment"):
            raise ConfigError(f"me_target: must be 'outcome' or 'treatment', got {self.me_target!r}")
        if self.weight_truncation is not None and not 0.5 < self.weight_truncation < 1:
            raise ConfigError("weight_truncation: must be a quantile in (0.5, 1)")
        if self.bias_denominator not in ("own", "uncalibrated"):
            raise ConfigError("bias_denominator: must be 'own' or 'uncalibrated'")
        if self.estimand not in ("marginal", "conditional"):
            raise ConfigError(f"estimand: must be 'marginal' or 'conditional', got {self.estimand!r}")
        if self.ideal_sharing not in ("all", "extra"):
            raise ConfigError(f"ideal_sharing: must be 'all' or 'extra', got {self.ideal_sharing!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha: must lie in (0, 1)")

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key, value in out.items():
            if isinstance(value, Enum):
                out[key] = value.value
            elif isinstance(value, tuple):
                out[key] = list(value)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**dict(data))
