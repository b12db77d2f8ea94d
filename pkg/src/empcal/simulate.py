"""Synthetic cohorts with a binary treatment, an outcome of interest and negative-control outcomes.

Every bias scenario is a small variation of one logistic data-generating
process: standard-normal confounders, a logistic treatment model and
logistic outcome models.  The returned :class:`SimulatedStudy` carries both
what an analyst would observe and the hidden generating truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from empcal.config import OutcomeForm, Scenario, ScenarioConfig, Suitability
from empcal.errors import ConfigError

# spawn-key tags so that sub-streams of one iteration never collide
STUDY_STREAM = 0
POSITIVE_CONTROL_STREAM = 1


def iteration_rng(seed: int, iteration: int, *path: int) -> np.random.Generator:
    """Independent generator for ``(seed, iteration, *path)``.

    Streams come from ``SeedSequence`` spawn keys, so the result depends only
    on the key and never on scheduling order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(iteration), *map(int, path)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class CoefficientSet:
    alpha: np.ndarray  # treatment intercept + slopes, length m+1
    alpha_u: float
    beta_star: np.ndarray  # outcome-of-interest intercept + slopes, length m+1
    beta_z_star: float
    beta_extra_star: float
    beta_neg: np.ndarray  # (S, m+1)
    beta_neg_extra: np.ndarray  # (S,)


@dataclass(frozen=True)
class SimulatedStudy:
    x_true: np.ndarray
    x_observed: np.ndarray
    u: np.ndarray
    z: np.ndarray
    y_star: np.ndarray
    y_neg: np.ndarray
    true_ps: np.ndarray
    truth: CoefficientSet
    theta_true: float
    form: OutcomeForm
    me_column: Optional[int] = None
    me_mean: float = 0.0
    me_sd: float = 0.0

    @property
    def n_controls(self) -> int:
        return self.y_neg.shape[1]


def sample_coefficients(config: ScenarioConfig, rng: np.random.Generator) -> CoefficientSet:
    """Draw every generating coefficient from Uniform(coef_low, coef_high).

    The draw order is fixed for all scenarios; scenario and suitability rules
    are applied afterwards by overwriting with shared values or zeros.
    """
    m, s = config.n_confounders, config.n_negative_controls

    def draw(*shape):
        return rng.uniform(config.coef_low, config.coef_high, size=shape)

    alpha = draw(m + 1)
    alpha_u = float(draw())
    beta_star = draw(m + 1)
    beta_z_star = float(draw())
    beta_extra_star = float(draw())
    beta_neg = draw(s, m + 1)
    beta_neg_extra = draw(s)

    scenario, suitability = config.scenario, config.suitability
    has_extra = scenario in (
        Scenario.UNMEASURED_CONFOUNDER,
        Scenario.QUADRATIC_TERM,
        Scenario.INTERACTION_TERM,
    )
    if scenario is not Scenario.UNMEASURED_CONFOUNDER:
        alpha_u = 0.0
    if not has_extra:
        beta_extra_star = 0.0
        beta_neg_extra[:] = 0.0

    if suitability is Suitability.IDEAL_SUITABLE:
        if config.ideal_sharing == "all":
            beta_neg[:, 1:] = beta_star[1:]
        beta_neg_extra[:] = beta_extra_star
    elif suitability is Suitability.UNSUITABLE:
        beta_neg_extra[:] = 0.0
        if scenario is Scenario.NON_POSITIVITY:
            beta_neg[:, 1:] = 0.0

    return CoefficientSet(
        alpha=alpha,
        alpha_u=alpha_u,
        beta_star=beta_star,
        beta_z_star=beta_z_star,
        beta_extra_star=beta_extra_star,
        beta_neg=beta_neg,
        beta_neg_extra=beta_neg_extra,
    )


def gen_confounders(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1 or m < 1:
        raise ValueError("need n >= 1 and m >= 1")
    return rng.standard_normal((n, m))


def gen_treatment(
    x: np.ndarray, u: Optional[np.ndarray], coefs: CoefficientSet, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    lp = coefs.alpha[0] + x @ coefs.alpha[1:]
    if coefs.alpha_u != 0.0:
        lp = lp + coefs.alpha_u * u
    ps = expit(lp)
    z = (rng.random(len(ps)) < ps).astype(np.int8)
    return z, ps


def extra_regressor(form: OutcomeForm, x: np.ndarray, u: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if form is OutcomeForm.LINEAR:
        return None
    if form is OutcomeForm.PLUS_U:
        return u
    if form is OutcomeForm.PLUS_QUADRATIC:
        return x[:, 0] ** 2
    if form is OutcomeForm.PLUS_INTERACTION:
        return x[:, 0] * x[:, 1]
    raise ValueError(f"unknown outcome form {form!r}")


def outcome_linear_predictor(
    x: np.ndarray,
    u: Optional[np.ndarray],
    intercept: float,
    slopes: np.ndarray,
    beta_extra: float,
    form: OutcomeForm,
) -> np.ndarray:
    """Linear predictor of an outcome model, excluding any treatment term."""
    lp = intercept + x @ slopes
    extra = extra_regressor(form, x, u)
    if extra is not None and beta_extra != 0.0:
        lp = lp + beta_extra * extra
    return lp


def gen_outcome(
    x: np.ndarray,
    u: Optional[np.ndarray],
    z: Optional[np.ndarray],
    intercept: float,
    slopes: np.ndarray,
    beta_z: float,
    beta_extra: float,
    form: OutcomeForm,
    rng: np.random.Generator,
) -> np.ndarray:
    lp = outcome_linear_predictor(x, u, intercept, slopes, beta_extra, form)
    if beta_z != 0.0:
        lp = lp + beta_z * z
    return (rng.random(len(lp)) < expit(lp)).astype(np.int8)


def apply_positivity_violation(
    true_ps: np.ndarray, z: np.ndarray, lower: float, upper: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Force treatment to be deterministic where the propensity lies outside [lower, upper]."""
    if not 0 < lower < upper < 1:
        raise ValueError(f"need 0 < lower < upper < 1, got ({lower}, {upper})")
    ps = np.array(true_ps, dtype=float, copy=True)
    z = np.array(z, copy=True)
    high = ps > upper
    low = ps < lower
    ps[high] = 1.0
    z[high] = 1
    ps[low] = 0.0
    z[low] = 0
    return ps, z


def apply_measurement_error(
    x_true: np.ndarray, target_col: int, mu_e: float, sigma_e: float, rng: np.random.Generator
) -> np.ndarray:
    if mu_e <= 0:
        raise ValueError(f"measurement error mean must be > 0, got {mu_e}")
    if sigma_e < 0:
        raise ValueError(f"measurement error sd must be >= 0, got {sigma_e}")
    x_obs = x_true.copy()
    x_obs[:, target_col] += rng.normal(mu_e, sigma_e, size=len(x_true))
    return x_obs


def marginal_log_odds_ratio(base_lp: np.ndarray, beta_z: float) -> float:
    """Log odds ratio of the population-averaged risks under Z=1 vs Z=0."""
    p1 = float(np.mean(expit(base_lp + beta_z)))
    p0 = float(np.mean(expit(base_lp)))
    for p in (p0, p1):
        if not 0.0 < p < 1.0:
            raise ValueError("average counterfactual risk is exactly 0 or 1")
    return float(np.log(p1 / (1 - p1)) - np.log(p0 / (1 - p0)))


def true_marginal_effect(
    truth: CoefficientSet, x_true: np.ndarray, u: Optional[np.ndarray], form: OutcomeForm
) -> float:
    if truth.beta_z_star == 0.0:
        return 0.0
    base = outcome_linear_predictor(
        x_true, u, truth.beta_star[0], truth.beta_star[1:], truth.beta_extra_star, form
    )
    return marginal_log_odds_ratio(base, truth.beta_z_star)


def build_study(
    config: ScenarioConfig, iteration: int, rng: Optional[np.random.Generator] = None
) -> SimulatedStudy:
    if not 0 <= iteration < config.n_iterations:
        raise ConfigError(f"iteration {iteration} outside [0, {config.n_iterations})")
    if rng is None:
        rng = iteration_rng(config.seed, iteration, STUDY_STREAM)
    n, m = config.n_subjects, config.n_confounders
    form = config.form
    scenario = config.scenario

    coefs = sample_coefficients(config, rng)
    # drawn unconditionally to keep the stream layout scenario-independent
    mu_e = rng.uniform(*config.me_mean_range)
    sigma_e = rng.uniform(*config.me_sd_range)

    x_true = gen_confounders(n, m, rng)
    u = rng.standard_normal(n)
    if scenario is not Scenario.UNMEASURED_CONFOUNDER:
        u = np.zeros(n)

    z, ps = gen_treatment(x_true, u, coefs, rng)
    if scenario is Scenario.NON_POSITIVITY:
        ps, z = apply_positivity_violation(ps, z, *config.positivity_cutoffs)

    y_star = gen_outcome(
        x_true, u, z, coefs.beta_star[0], coefs.beta_star[1:],
        coefs.beta_z_star, coefs.beta_extra_star, form, rng,
    )
    y_neg = np.empty((n, config.n_negative_controls), dtype=np.int8)
    for s in range(config.n_negative_controls):
        y_neg[:, s] = gen_outcome(
            x_true, u, None, coefs.beta_neg[s, 0], coefs.beta_neg[s, 1:],
            0.0, coefs.beta_neg_extra[s], form, rng,
        )

    me_column = None
    x_obs = x_true
    if scenario is Scenario.MEASUREMENT_ERROR:
        weights = coefs.beta_star if config.me_target == "outcome" else coefs.alpha
        me_column = int(np.argmax(np.abs(weights[1:])))
        x_obs = apply_measurement_error(x_true, me_column, mu_e, sigma_e, rng)
    else:
        mu_e = sigma_e = 0.0

    theta_true = true_marginal_effect(coefs, x_true, u, form)
    return SimulatedStudy(
        x_true=x_true,
        x_observed=x_obs,
        u=u,
        z=z,
        y_star=y_star,
        y_neg=y_neg,
        true_ps=ps,
        truth=coefs,
        theta_true=theta_true,
        form=form,
        me_column=me_column,
        me_mean=float(mu_e),
        me_sd=float(sigma_e),
    )
