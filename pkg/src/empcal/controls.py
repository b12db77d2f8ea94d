"""Negative-control outcome models and synthetic positive controls built from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from empcal.estimate import fit_logistic, with_intercept
from empcal.simulate import SimulatedStudy, marginal_log_odds_ratio


@dataclass(frozen=True)
class NegativeControlFit:
    control_id: int
    intercept_hat: float
    slope_hats: np.ndarray
    bias_coef_hat: float  # fitted treatment coefficient; nonzero means residual bias


@dataclass(frozen=True)
class PositiveControl:
    source_control: int
    target_effect: float
    y_pos: np.ndarray
    nominal_true_effect: float


def fit_negative_control(study: SimulatedStudy, s: int) -> NegativeControlFit:
    """Unweighted logistic fit of negative control ``s`` on treatment plus observed confounders."""
    if not 0 <= s < study.n_controls:
        raise IndexError(f"negative control {s} out of range [0, {study.n_controls})")
    design = with_intercept(np.column_stack([study.z, study.x_observed]))
    fit = fit_logistic(design, study.y_neg[:, s])
    coefs = fit.coefficients
    return NegativeControlFit(
        control_id=s,
        intercept_hat=float(coefs[0]),
        slope_hats=coefs[2:].copy(),
        bias_coef_hat=float(coefs[1]),
    )


def synthesize_positive_control(
    fit: NegativeControlFit,
    study: SimulatedStudy,
    theta_t: float,
    rng: np.random.Generator,
) -> PositiveControl:
    """Draw a positive-control outcome with treatment coefficient ``theta_t`` plus the control's fitted bias.

    The fitted bias ``bias_coef_hat`` is carried into the generating model so
    the synthetic outcome inherits the negative control's residual bias; the
    nominal truth is the marginal effect of ``theta_t`` alone.
    """
    if not theta_t > 0:
        raise ValueError(f"target effect must be > 0, got {theta_t}")
    base = fit.intercept_hat + study.x_observed @ fit.slope_hats
    lp = base + (theta_t + fit.bias_coef_hat) * study.z
    y_pos = (rng.random(len(lp)) < expit(lp)).astype(np.int8)
    return PositiveControl(
        source_control=fit.control_id,
        target_effect=float(theta_t),
        y_pos=y_pos,
        nominal_true_effect=marginal_log_odds_ratio(base, theta_t),
    )
