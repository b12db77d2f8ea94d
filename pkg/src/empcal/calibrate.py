"""Empirical null / systematic error models and the calibration of p-values and intervals.

The bias of an estimate whose true log odds ratio is ``theta`` is modelled as

    bias ~ Normal(a + b * theta, exp(c + d * |theta|) ** 2)

so an estimate with sampling standard error ``tau`` is distributed as
``Normal(theta + a + b * theta, exp(2 * (c + d * |theta|)) + tau ** 2)``.
The null model fixes ``b = d = 0`` and is fitted from negative controls only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.stats import norm

from empcal.config import ErrorModelKind
from empcal.errors import (
    InsufficientEffectSpread,
    NonMonotonePredictive,
    OptimizationFailed,
    TooFewControls,
)
from empcal.estimate import EffectEstimate

SIGMA_FLOOR = 1e-6
LOG_SIGMA_FLOOR = float(np.log(SIGMA_FLOOR))
N_RESTARTS = 8
LOGLIK_TOL = 1e-8
MAX_LOG_SD = 20.0
_LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class ControlEstimate:
    theta_hat: float
    se_hat: float
    true_effect: float = 0.0


@dataclass(frozen=True)
class SystematicErrorModel:
    a: float
    b: float = 0.0
    c: float = -np.inf
    d: float = 0.0
    kind: ErrorModelKind = ErrorModelKind.FULL
    log_likelihood: float = float("nan")

    def __post_init__(self):
        if self.kind is ErrorModelKind.NULL and (self.b != 0.0 or self.d != 0.0):
            raise ValueError("a null error model has b = d = 0")

    @classmethod
    def null(cls, mu: float, sigma: float) -> "SystematicErrorModel":
        c = float(np.log(sigma)) if sigma > 0 else -np.inf
        return cls(a=mu, c=c, kind=ErrorModelKind.NULL)

    @property
    def mu(self) -> float:
        return self.a

    @property
    def sigma(self) -> float:
        return float(np.exp(self.c))

    def bias_mean(self, theta):
        return self.a + self.b * np.asarray(theta, dtype=float)

    def bias_sd(self, theta):
        # the floor only bounds the likelihood while fitting; an exact null (c = -inf) stays exact here
        log_sd = self.c + self.d * np.abs(np.asarray(theta, dtype=float))
        return np.exp(np.minimum(log_sd, MAX_LOG_SD))


@dataclass(frozen=True)
class CalibratedEstimate:
    theta_cal: float
    ci_low: float
    ci_high: float
    se_cal: float
    p_cal: float


def _arrays(controls: Sequence[ControlEstimate]):
    theta_hat = np.array([c.theta_hat for c in controls], dtype=float)
    se = np.array([c.se_hat for c in controls], dtype=float)
    truth = np.array([c.true_effect for c in controls], dtype=float)
    if np.any(~(se > 0)):
        raise ValueError("control standard errors must be > 0")
    return theta_hat, se, truth


def _variance(c: float, d: float, abs_truth: np.ndarray, se2: np.ndarray) -> np.ndarray:
    log_sd = np.clip(c + d * abs_truth, LOG_SIGMA_FLOOR, MAX_LOG_SD)
    return np.exp(2.0 * log_sd) + se2


def error_model_loglik(params, theta_hat, se, truth) -> float:
    """Log-likelihood of ``(a, b, c, d)`` for control estimates with known true effects."""
    a, b, c, d = params
    mean = truth + a + b * truth
    var = _variance(c, d, np.abs(truth), np.asarray(se) ** 2)
    return float(-0.5 * np.sum(_LOG_2PI + np.log(var) + (theta_hat - mean) ** 2 / var))


def _profile_mean(resid: np.ndarray, truth: Optional[np.ndarray], var: np.ndarray) -> Tuple[float, float]:
    """Weighted least-squares intercept and slope of ``resid`` on ``truth`` (slope 0 if ``truth`` is None)."""
    wts = 1.0 / var
    s0 = wts.sum()
    r0 = np.dot(wts, resid)
    if truth is None:
        return r0 / s0, 0.0
    wt = wts * truth
    s1 = wt.sum()
    s2 = np.dot(wt, truth)
    r1 = np.dot(wt, resid)
    det = s0 * s2 - s1 * s1
    return (s2 * r0 - s1 * r1) / det, (s0 * r1 - s1 * r0) / det


def _maximize(negloglik: Callable[[np.ndarray], float], starts: Iterable[np.ndarray]) -> optimize.OptimizeResult:
    best = None
    for x0 in starts:
        res = optimize.minimize(
            negloglik,
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": LOGLIK_TOL, "maxiter": 5_000},
        )
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun - LOGLIK_TOL):
            best = res
    if best is None:
        raise OptimizationFailed("likelihood is not finite at any start")
    # restart from the best point: Nelder-Mead can stall on a collapsed simplex
    for _ in range(5):
        res = optimize.minimize(
            negloglik,
            best.x,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": LOGLIK_TOL / 10, "maxiter": 5_000},
        )
        improved = best.fun - res.fun
        if res.fun < best.fun:
            best = res
        if improved < LOGLIK_TOL:
            break
    return best


def _jittered(x0: np.ndarray, scale: np.ndarray, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [x0] + [x0 + scale * rng.standard_normal(len(x0)) for _ in range(N_RESTARTS)]


def _fit_profiled(theta_hat, se, truth, with_slopes: bool):
    """Maximize over the variance parameters with the mean parameters profiled out.

    Returns ``(a, b, c, d, loglik)``.
    """
    resid = theta_hat - truth
    abs_truth = np.abs(truth)
    se2 = se**2
    slope_on = truth if with_slopes else None

    def unpack(p):
        return (p[0], p[1]) if with_slopes else (p[0], 0.0)

    def negloglik(p):
        c, d = unpack(p)
        var = _variance(c, d, abs_truth, se2)
        a, b = _profile_mean(resid, slope_on, var)
        mean = a + b * truth
        return 0.5 * float(np.sum(_LOG_2PI + np.log(var) + (resid - mean) ** 2 / var))

    spread = float(np.std(resid))
    x0 = np.array([np.log(max(spread, 0.01)), 0.0][: 2 if with_slopes else 1])
    scale = np.array([1.0, 0.5][: len(x0)])
    best = _maximize(negloglik, _jittered(x0, scale, seed=len(x0)))
    c, d = unpack(best.x)
    var = _variance(c, d, abs_truth, se2)
    a, b = (float(v) for v in _profile_mean(resid, slope_on, var))
    if not with_slopes:
        c = max(float(c), LOG_SIGMA_FLOOR)
    return a, b, float(c), float(d), -float(best.fun)


def fit_null_model(negatives: Sequence[ControlEstimate]) -> SystematicErrorModel:
    """Maximum-likelihood empirical null ``Normal(mu, sigma^2)`` from negative-control estimates."""
    if len(negatives) < 2:
        raise TooFewControls(f"need at least 2 negative controls, got {len(negatives)}")
    theta_hat, se, truth = _arrays(negatives)
    if np.any(truth != 0):
        raise ValueError("negative controls must have true effect 0")
    a, _, c, _, ll = _fit_profiled(theta_hat, se, truth, with_slopes=False)
    return SystematicErrorModel(a=a, c=c, kind=ErrorModelKind.NULL, log_likelihood=ll)


def fit_systematic_error_model(controls: Sequence[ControlEstimate]) -> SystematicErrorModel:
    """Maximum-likelihood systematic error model from negative and positive controls."""
    theta_hat, se, truth = _arrays(controls)
    if len(np.unique(truth)) < 2:
        raise InsufficientEffectSpread("all control true effects coincide; slope terms are unidentifiable")
    a, b, c, d, ll = _fit_profiled(theta_hat, se, truth, with_slopes=True)
    if not all(np.isfinite([a, b, c, d, ll])):
        raise OptimizationFailed("non-finite error model estimate")
    return SystematicErrorModel(a=a, b=b, c=c, d=d, kind=ErrorModelKind.FULL, log_likelihood=ll)


def fit_error_model(controls: Sequence[ControlEstimate], kind: ErrorModelKind) -> SystematicErrorModel:
    if kind is ErrorModelKind.NULL:
        return fit_null_model([c for c in controls if c.true_effect == 0.0])
    return fit_systematic_error_model(controls)


def _standardized_gap(theta_obs: float, se: float, model: SystematicErrorModel) -> Callable[[float], float]:
    def g(theta: float) -> float:
        mean = theta + model.a + model.b * theta
        return (theta_obs - mean) / np.sqrt(model.bias_sd(theta) ** 2 + se**2)

    return g


def _root_outward(h: Callable[[float], float], start: float, direction: float, step: float) -> float:
    """First root of ``h`` walking away from ``start`` (where h < 0) in geometrically growing steps."""
    inner = start
    width = step
    while width < 1e4:
        outer = start + direction * width
        if h(outer) > 0:
            lo, hi = sorted((inner, outer))
            return float(optimize.brentq(h, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=500))
        inner = outer
        width *= 1.5
    raise NonMonotonePredictive("no sign change in the predictive tail equation")


def calibrate_ci(
    estimate: EffectEstimate, model: SystematicErrorModel, alpha: float = 0.05
) -> CalibratedEstimate:
    """Invert the predictive distribution of the estimate to a calibrated point, interval and p-value."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not model.b > -1.0:
        raise NonMonotonePredictive("calibration requires b > -1")
    obs, se = estimate.theta_hat, estimate.se_hat
    z = float(norm.ppf(1 - alpha / 2))
    g = _standardized_gap(obs, se, model)
    theta_cal = (obs - model.a) / (1.0 + model.b)

    # g(theta_cal) == 0; the bounds are where g first reaches +z (left) and -z (right)
    step = 0.25 * se / (1.0 + abs(model.b))
    ci_low = _root_outward(lambda t: g(t) - z, theta_cal, -1.0, step)
    ci_high = _root_outward(lambda t: -z - g(t), theta_cal, +1.0, step)
    ci_low = min(ci_low, theta_cal)
    ci_high = max(ci_high, theta_cal)
    g0 = g(0.0)
    p_cal = float(min(1.0, 2.0 * norm.sf(abs(g0))))
    return CalibratedEstimate(
        theta_cal=float(theta_cal),
        ci_low=ci_low,
        ci_high=ci_high,
        se_cal=(ci_high - ci_low) / (2.0 * z),
        p_cal=p_cal,
    )


def calibrate_pvalue(estimate: EffectEstimate, null_model: SystematicErrorModel) -> float:
    """Two-sided p-value against the empirical null instead of a point null at zero."""
    if null_model.kind is not ErrorModelKind.NULL:
        raise ValueError("p-value calibration needs a null error model")
    sd = np.sqrt(np.exp(2.0 * null_model.c) + estimate.se_hat**2)
    return float(min(1.0, 2.0 * norm.sf(abs(estimate.theta_hat - null_model.a) / sd)))
