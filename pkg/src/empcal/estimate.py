"""Inverse-probability-weighted logistic estimation of a treatment log odds ratio."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import expit, logit

from empcal.errors import (
    AllOneArm,
    DegenerateScore,
    NonConvergence,
    RankDeficient,
    SeparationDetected,
)

MAX_ITER = 25
DEVIANCE_TOL = 1e-8
SEPARATION_THRESHOLD = 20.0
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray
    model_covariance: np.ndarray
    robust_covariance: Optional[np.ndarray]
    converged: bool
    iterations_used: int
    deviance: float


@dataclass(frozen=True)
class EffectEstimate:
    theta_hat: float
    se_hat: float
    outcome_id: str = "outcome"


def _deviance(eta: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    # -2 * weighted Bernoulli log-likelihood; y in {0, 1} so the sign of eta flips with y
    return float(2.0 * np.dot(w, np.logaddexp(0.0, (1.0 - 2.0 * y) * eta)))


def fit_logistic(
    design: np.ndarray,
    y: np.ndarray,
    weights: Optional[np.ndarray] = None,
    max_iter: int = MAX_ITER,
    tol: float = DEVIANCE_TOL,
    start: Optional[np.ndarray] = None,
) -> LogisticFit:
    """Fit a (weighted) logistic regression by iteratively reweighted least squares.

    Parameters
    ----------
    design : (n, k) array
        Regressors; must already contain an intercept column.
    y : (n,) array of 0/1
    weights : (n,) array, optional
        Strictly positive case weights. When given, the sandwich covariance
        ``A^-1 B A^-1`` is returned alongside the model-based one.
    max_iter, tol
        Newton iterations allowed and the relative deviance-change tolerance.
    start : (k,) array, optional
        Initial coefficients (zeros by default).

    Raises
    ------
    SeparationDetected
        A coefficient exceeds 20 in absolute value or the working weights underflow.
    RankDeficient
        The weighted normal equations are singular.
    NonConvergence
        ``max_iter`` iterations without meeting ``tol``.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if np.any(~(w > 0)):
            raise ValueError("weights must be strictly positive")

    beta = np.zeros(k) if start is None else np.asarray(start, dtype=float).copy()
    eta = X @ beta
    dev = _deviance(eta, y, w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        v = mu * (1.0 - mu)
        working = w * v
        if working.max() < 1e-300 or np.mean(v < 1e-12) > 0.5:
            raise SeparationDetected("working weights underflow")
        info = X.T @ (X * working[:, None])
        score = X.T @ (w * (y - mu))
        if np.linalg.cond(info) > MAX_CONDITION:
            raise RankDeficient("weighted normal equations are singular")
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError) as exc:
            raise RankDeficient(str(exc)) from None

        # step halving keeps the deviance non-increasing
        new_dev = np.inf
        for _ in range(30):
            new_beta = beta + step
            new_eta = X @ new_beta
            new_dev = _deviance(new_eta, y, w)
            if new_dev <= dev * (1 + 1e-12) + 1e-12:
                break
            step = step / 2.0
        beta, eta = new_beta, new_eta
        if np.max(np.abs(beta)) > SEPARATION_THRESHOLD:
            raise SeparationDetected(f"|coefficient| exceeded {SEPARATION_THRESHOLD}")
        change = abs(dev - new_dev) / (abs(new_dev) + 0.1)
        dev = new_dev
        if change < tol:
            converged = True
            break
    if not converged:
        raise NonConvergence(f"no convergence after {max_iter} iterations")

    mu = expit(eta)
    working = w * mu * (1.0 - mu)
    info = X.T @ (X * working[:, None])
    if np.linalg.cond(info) > MAX_CONDITION:
        raise RankDeficient("information matrix is singular at the solution")
    bread = linalg.inv(info)
    bread = (bread + bread.T) / 2.0
    robust = None
    if weights is not None:
        u = X * (w * (y - mu))[:, None]
        meat = u.T @ u
        robust = bread @ meat @ bread
        robust = (robust + robust.T) / 2.0
    return LogisticFit(
        coefficients=beta,
        model_covariance=bread,
        robust_covariance=robust,
        converged=converged,
        iterations_used=it,
        deviance=dev,
    )


def with_intercept(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.column_stack([np.ones(len(x)), x])


def propensity_scores(x_observed: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Fitted P(Z=1 | X) from a main-effects logistic model on the observed confounders."""
    design = with_intercept(x_observed)
    fit = fit_logistic(design, z)
    return expit(design @ fit.coefficients)


def stabilized_weights(z: np.ndarray, ps: np.ndarray, truncation: Optional[float] = None) -> np.ndarray:
    """Marginal treatment probability over the propensity of the received arm.

    ``truncation`` caps the weights at that upper quantile; off by default.
    """
    z = np.asarray(z)
    ps = np.asarray(ps, dtype=float)
    if np.any(ps <= 0.0) or np.any(ps >= 1.0):
        raise DegenerateScore("propensity score of exactly 0 or 1")
    prevalence = float(np.mean(z))
    w = np.where(z == 1, prevalence / ps, (1.0 - prevalence) / (1.0 - ps))
    if truncation is not None:
        w = np.minimum(w, np.quantile(w, truncation))
    return w


def estimate_effect(
    z: np.ndarray, y: np.ndarray, w: np.ndarray, outcome_id: str = "outcome"
) -> EffectEstimate:
    """Weighted regression of ``y`` on treatment alone; returns the log odds ratio and its sandwich SE."""
    z = np.asarray(z)
    y = np.asarray(y, dtype=float)
    if z.min() == z.max():
        raise AllOneArm("treatment is constant")
    # the two-group MLE is the pair of weighted log-odds; IRLS then only confirms it
    w = np.asarray(w, dtype=float)
    treated = z == 1
    p1 = np.dot(w[treated], y[treated]) / w[treated].sum()
    p0 = np.dot(w[~treated], y[~treated]) / w[~treated].sum()
    start = None
    if 0 < p0 < 1 and 0 < p1 < 1:
        start = np.array([logit(p0), logit(p1) - logit(p0)])
    fit = fit_logistic(with_intercept(z), y, weights=w, start=start)
    se = float(np.sqrt(fit.robust_covariance[1, 1]))
    if not np.isfinite(se) or se <= 0:
        raise RankDeficient("non-positive sandwich variance")
    return EffectEstimate(theta_hat=float(fit.coefficients[1]), se_hat=se, outcome_id=outcome_id)


def estimate_effects(
    z: np.ndarray, Y: np.ndarray, w: np.ndarray, outcome_ids: Optional[list] = None
) -> list:
    """Same estimator as :func:`estimate_effect` for every column of ``Y`` at once.

    With only an intercept and a binary treatment the weighted logistic model
    is saturated, so the MLE is the difference of the two arms' weighted
    log-odds and the sandwich variance reduces to ``Q1/T1**2 + Q0/T0**2``
    (``T`` the arm's summed working weights, ``Q`` its summed squared
    weighted residuals).
    """
    z = np.asarray(z)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    w = np.asarray(w, dtype=float)
    if z.min() == z.max():
        raise AllOneArm("treatment is constant")
    treated = z == 1
    var = np.zeros(Y.shape[1])
    logits = []
    for arm in (~treated, treated):
        wa = w[arm]
        s1 = wa.sum()
        s2 = np.dot(wa, wa)
        wy = wa @ Y[arm]
        w2y = (wa * wa) @ Y[arm]
        p = wy / s1
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise SeparationDetected("an outcome is constant within a treatment arm")
        t = s1 * p * (1.0 - p)
        q = (1.0 - 2.0 * p) * w2y + p * p * s2
        var += q / t**2
        logits.append(logit(p))
    theta = logits[1] - logits[0]
    if outcome_ids is None:
        outcome_ids = [f"outcome:{j}" for j in range(Y.shape[1])]
    return [
        EffectEstimate(theta_hat=float(t), se_hat=float(np.sqrt(v)), outcome_id=oid)
        for t, v, oid in zip(theta, var, outcome_ids)
    ]


def estimate_adjusted_effect(
    z: np.ndarray, y: np.ndarray, x: np.ndarray, w: np.ndarray, outcome_id: str = "outcome"
) -> EffectEstimate:
    """Weighted regression of ``y`` on treatment plus the observed confounders.

    Targets the conditional log odds ratio; SE from the sandwich of the treatment coefficient.
    """
    z = np.asarray(z)
    if z.min() == z.max():
        raise AllOneArm("treatment is constant")
    fit = fit_logistic(with_intercept(np.column_stack([z, x])), y, weights=w)
    se = float(np.sqrt(fit.robust_covariance[1, 1]))
    if not np.isfinite(se) or se <= 0:
        raise RankDeficient("non-positive sandwich variance")
    return EffectEstimate(theta_hat=float(fit.coefficients[1]), se_hat=se, outcome_id=outcome_id)
