"""Primary-outcome ATE: the surrogate plug-in estimator and its baselines."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cate import CateStrategy, PropensitySource, experimental_propensity, fit_robinson
from .data import AteEstimate, LabeledSample, SampleError, validate
from .forest import (
    PROPENSITY_CLIP,
    ForestParams,
    fit_propensity,
    fit_regression,
    kfold_assignment,
)
from .forest.engine import N_FOLDS


@dataclass(frozen=True, eq=False)
class SurrogateBridge:
    """mu(x, y) = E[Y^P | X = x, Y^S = y] on the observational sample.

    ``mu_model`` maps a feature matrix laid out as [X_1..X_p, Y^S] to
    predictions.
    """

    mu_model: Callable[[np.ndarray], np.ndarray]
    trained_on: int
    p: int

    def predict(self, X, ys) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ys = np.asarray(ys, dtype=float).ravel()
        if X.shape[1] != self.p:
            raise SampleError(f"bridge expects {self.p} covariates, got {X.shape[1]}")
        return np.asarray(self.mu_model(np.column_stack([X, ys])), dtype=float)

    def shifted(self, c: float) -> "SurrogateBridge":
        model = self.mu_model
        return SurrogateBridge(lambda F: model(F) + c, self.trained_on, self.p)


def _require_obs(obs: LabeledSample) -> None:
    validate(obs)
    if obs.primary is None:
        raise SampleError("missing primary outcome on observational sample")


def fit_bridge(obs: LabeledSample, params: ForestParams = ForestParams()) -> SurrogateBridge:
    _require_obs(obs)
    features = np.column_stack([obs.covariates, obs.surrogate])
    model = fit_regression(features, obs.primary, params.with_seed("bridge"))
    return SurrogateBridge(model.predict, obs.n, obs.p)


def fit_robinson_bridge(obs: LabeledSample,
                        params: ForestParams = ForestParams()) -> SurrogateBridge:
    """Partially linear bridge rho * y + h(x) with rho from residual-on-residual."""
    _require_obs(obs)
    rho = fit_robinson(obs, params).rho
    h = fit_regression(obs.covariates, obs.primary - rho * obs.surrogate,
                       params.with_seed("robinson_h"))
    p = obs.p
    return SurrogateBridge(lambda F: rho * F[:, p] + h.predict(F[:, :p]), obs.n, p)


def impute_surrogates(obs: LabeledSample, tau: CateStrategy) -> tuple[np.ndarray, np.ndarray]:
    """Both potential surrogates per observational unit.

    The observed arm keeps its surrogate; the other arm is shifted by the
    estimated CATE, so s1 - s0 equals tau(X) in both branches.
    """
    t = tau.predict(obs.covariates)
    ys = obs.surrogate
    treated = obs.treatment == 1
    s1 = np.where(treated, ys, ys + t)
    s0 = np.where(treated, ys - t, ys)
    return s1, s0


def estimate_ate(obs: LabeledSample, exp: LabeledSample, tau: CateStrategy,
                 bridge: SurrogateBridge, name: str | None = None) -> AteEstimate:
    _require_obs(obs)
    s1, s0 = impute_surrogates(obs, tau)
    y1 = bridge.predict(obs.covariates, s1)
    y0 = bridge.predict(obs.covariates, s0)
    value = float(np.mean(y1) - np.mean(y0))
    return AteEstimate(value, name or tau.kind, exp.n, obs.n,
                       {"mean_tau_obs": float(np.mean(s1 - s0))})


def hajek_difference(y, w, e) -> float:
    """Self-normalised IPW contrast: each arm's weights sum to one."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    e = np.broadcast_to(np.asarray(e, dtype=float), y.shape)
    a1 = w / e
    a0 = (1.0 - w) / (1.0 - e)
    if a1.sum() <= 0 or a0.sum() <= 0:
        raise SampleError("Hajek contrast needs both arms")
    return float(a1 @ y / a1.sum() - a0 @ y / a0.sum())


def imputation_baseline(obs: LabeledSample, exp: LabeledSample, bridge: SurrogateBridge,
                        e_exp: PropensitySource = "forest",
                        params: ForestParams = ForestParams()) -> AteEstimate:
    """Impute Y^P on the experimental units through the bridge, then take the
    Hajek IPW contrast there."""
    validate(exp)
    y_imp = bridge.predict(exp.covariates, exp.surrogate)
    e = experimental_propensity(exp, e_exp, params)
    return AteEstimate(hajek_difference(y_imp, exp.treatment, e), "imputation",
                       exp.n, obs.n)


def aipw_from_predictions(y, w, m1, m0, e) -> float:
    y, w, m1, m0 = (np.asarray(a, dtype=float) for a in (y, w, m1, m0))
    e = np.broadcast_to(np.asarray(e, dtype=float), y.shape)
    score = m1 - m0 + w * (y - m1) / e - (1.0 - w) * (y - m0) / (1.0 - e)
    return float(np.mean(score))


def _both_arms(sample: LabeledSample) -> None:
    w = sample.treatment
    if w.min() == w.max():
        raise SampleError("single-arm sample: both treatment arms are required")


def aipw(sample: LabeledSample, outcome: str = "primary",
         params: ForestParams = ForestParams()) -> AteEstimate:
    """Cross-fitted AIPW with arm-specific outcome forests."""
    validate(sample)
    y = sample.outcome(outcome)
    _both_arms(sample)
    X, w = sample.covariates, sample.treatment
    folds = kfold_assignment(sample.n, params.with_seed("aipw").seed, N_FOLDS)
    m1 = np.empty(sample.n)
    m0 = np.empty(sample.n)
    e = np.empty(sample.n)
    for f in range(N_FOLDS):
        test = folds == f
        train = ~test
        if not test.any():
            continue
        fp = params.with_seed("aipw", f)
        t1 = train & (w == 1)
        t0 = train & (w == 0)
        if t1.sum() < 2 * params.min_leaf_size or t0.sum() < 2 * params.min_leaf_size:
            raise SampleError("too few units per arm for cross-fitted outcome models")
        m1[test] = fit_regression(X[t1], y[t1], fp.with_seed("m1")).predict(X[test])
        m0[test] = fit_regression(X[t0], y[t0], fp.with_seed("m0")).predict(X[test])
        e[test] = fit_propensity(X[train], w[train], fp.with_seed("e")).predict(X[test])
    e = np.clip(e, *PROPENSITY_CLIP)
    return AteEstimate(aipw_from_predictions(y, w, m1, m0, e), "aipw", 0, sample.n)


def diff_in_means(sample: LabeledSample, outcome: str = "primary") -> AteEstimate:
    y = sample.outcome(outcome)
    _both_arms(sample)
    w = sample.treatment == 1
    return AteEstimate(float(y[w].mean() - y[~w].mean()), "diff_in_means", 0, sample.n)
