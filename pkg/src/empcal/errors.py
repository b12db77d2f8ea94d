"""Exception hierarchy shared by the simulation, estimation and calibration code."""


class EmpCalError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ConfigError(EmpCalError, ValueError):
    kind = "config"


class FitError(EmpCalError):
    kind = "fit"


class NonConvergence(FitError):
    kind = "non_convergence"


class SeparationDetected(FitError):
    kind = "separation"


class RankDeficient(FitError):
    kind = "rank_deficient"


class DegenerateScore(EmpCalError):
    kind = "degenerate_score"


class AllOneArm(EmpCalError):
    kind = "all_one_arm"


class TooFewControls(EmpCalError):
    kind = "too_few_controls"


class InsufficientEffectSpread(EmpCalError):
    kind = "insufficient_effect_spread"


class OptimizationFailed(EmpCalError):
    kind = "optimization_failed"


class NonMonotonePredictive(EmpCalError):
    kind = "non_monotone_predictive"


class EmptyInput(EmpCalError, ValueError):
    kind = "empty_input"


class IterationFailed(EmpCalError):
    """Wraps any error raised inside one simulation iteration."""

    kind = "iteration"

    def __init__(self, iteration: int, cause: Exception):
        self.iteration = iteration
        self.cause = cause
        kind = getattr(cause, "kind", type(cause).__name__)
        super().__init__(f"iteration {iteration}: {kind}: {cause}")


class ExcessiveFailures(EmpCalError):
    kind = "excessive_failures"
