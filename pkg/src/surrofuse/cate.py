"""Surrogate CATE strategies.

Every strategy yields a :class:`CateStrategy` with the same ``predict``
contract, so the ATE estimator downstream does not care which one built it.
The calibrated strategies (``kallus``, ``kallus_iv``) start from a CATE
estimate fitted on the confounded observational sample and add an affine
correction learned from experimental moments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .data import LabeledSample, validate
from .forest import (
    PROPENSITY_CLIP,
    ForestParams,
    cross_fit,
    fit_causal,
    fit_instrumental,
)

KINDS = ("causal_forest", "instrumental_forest", "two_sls_constant", "kallus",
         "kallus_iv", "robinson_constant")

FIRST_STAGE_MIN = 1e-6
RESID_EPS = 1e-8
STRENGTH_EPS = 1e-6

# "forest" (cross-fitted, clipped), a known constant, or per-unit values
PropensitySource = Union[str, float, np.ndarray]


class CateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CateStrategy:
    kind: str
    predictor: Callable[[np.ndarray], np.ndarray]
    theta: np.ndarray | None = None
    rho: float | None = None
    base: "CateStrategy | None" = None
    intercept: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CateError(f"unknown strategy kind {self.kind!r}")

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.asarray(self.predictor(X), dtype=float)
        if out.ndim == 0:
            out = np.full(X.shape[0], float(out))
        return out

    def __call__(self, X) -> np.ndarray:
        return self.predict(X)

    def correction(self, X) -> np.ndarray:
        """Affine part theta^T [1, x] of a calibrated strategy."""
        if self.theta is None:
            raise CateError(f"{self.kind} strategy has no calibration")
        return _design(X, self.intercept) @ self.theta


def constant_strategy(value: float, kind: str = "two_sls_constant") -> CateStrategy:
    value = float(value)
    return CateStrategy(kind, lambda X: np.full(np.atleast_2d(X).shape[0], value), rho=value)


def q_weight(w, e):
    """Signed inverse-propensity weight w/e - (1-w)/(1-e)."""
    w = np.asarray(w, dtype=float)
    e = np.asarray(e, dtype=float)
    if np.any((e <= 0.0) | (e >= 1.0)):
        raise CateError("propensity must lie strictly inside (0, 1)")
    out = w / e - (1.0 - w) / (1.0 - e)
    return float(out) if out.ndim == 0 else out


def _design(X, intercept: bool) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if intercept:
        return np.column_stack([np.ones(X.shape[0]), X])
    return X


def _lstsq(D, r, what: str) -> np.ndarray:
    if np.linalg.matrix_rank(D) < D.shape[1]:
        raise CateError(f"collinear design in {what}")
    coef, *_ = np.linalg.lstsq(D, r, rcond=None)
    return coef


def experimental_propensity(exp: LabeledSample, source: PropensitySource = "forest",
                            params: ForestParams = ForestParams()) -> np.ndarray:
    """Per-unit P(W=1 | X) on the experimental sample."""
    if isinstance(source, str):
        if source != "forest":
            raise CateError(f"unknown propensity source {source!r}")
        w = exp.treatment
        if w.min() == w.max():
            raise CateError("degenerate treatment: only one arm in experimental sample")
        return cross_fit(exp.covariates, w, params.with_seed("e_exp"),
                         clip=PROPENSITY_CLIP).oof
    e = np.broadcast_to(np.asarray(source, dtype=float), (exp.n,)).copy()
    return e


def causal_forest_strategy(sample: LabeledSample, params: ForestParams = ForestParams(),
                           *, workers: int | None = None) -> CateStrategy:
    fit = fit_causal(sample.covariates, sample.treatment, sample.surrogate, params,
                     workers=workers)
    return CateStrategy("causal_forest", fit.predict)


def instrumental_forest_strategy(exp: LabeledSample, params: ForestParams = ForestParams(),
                                 *, workers: int | None = None) -> CateStrategy:
    if exp.instrument is None:
        raise CateError("instrumental forest needs an instrument column")
    fit = fit_instrumental(exp.covariates, exp.treatment, exp.instrument, exp.surrogate,
                           params, workers=workers)
    return CateStrategy("instrumental_forest", fit.predict)


def two_sls(y, w, z, X=None) -> float:
    """Constant treatment coefficient by two-stage least squares.

    Stage one regresses ``w`` on [1, X, z]; stage two regresses ``y`` on
    [1, X, w_hat]. ``X=None`` means intercept-only controls.
    """
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    n = y.size
    controls = np.ones((n, 1)) if X is None else _design(X, True)
    first = np.column_stack([controls, z])
    b0 = _lstsq(controls, w, "2SLS first stage")
    b1 = _lstsq(first, w, "2SLS first stage")
    rss0 = float(np.sum((w - controls @ b0) ** 2))
    rss1 = float(np.sum((w - first @ b1) ** 2))
    if (rss0 - rss1) / n <= FIRST_STAGE_MIN:
        raise CateError("weak first stage: instrument explains no treatment variation")
    w_hat = first @ b1
    coef = _lstsq(np.column_stack([controls, w_hat]), y, "2SLS second stage")
    return float(coef[-1])


def fit_two_sls(exp: LabeledSample) -> CateStrategy:
    validate(exp)
    if exp.instrument is None:
        raise CateError("2SLS needs an instrument column")
    tau = two_sls(exp.surrogate, exp.treatment, exp.instrument, exp.covariates)
    return constant_strategy(tau, "two_sls_constant")


def fit_robinson(obs: LabeledSample, params: ForestParams = ForestParams()) -> CateStrategy:
    """Residual-on-residual slope of the primary outcome on the surrogate.

    The returned strategy is constant at rho; it describes the partially
    linear bridge Y^P = rho * Y^S + f(X), not a surrogate CATE.
    """
    validate(obs)
    yp = obs.outcome("primary")
    ys = obs.surrogate
    # one seed for both fits: identical folds and trees up to the target
    fp = params.with_seed("robinson")
    r_y = yp - cross_fit(obs.covariates, yp, fp).oof
    r_s = ys - cross_fit(obs.covariates, ys, fp).oof
    den = float(r_s @ r_s)
    if den < RESID_EPS:
        raise CateError("surrogate fully explained by X")
    rho = float(r_y @ r_s) / den
    return constant_strategy(rho, "robinson_constant")


def fit_kallus(obs: LabeledSample, exp: LabeledSample, base: CateStrategy,
               e_exp: PropensitySource = "forest", params: ForestParams = ForestParams(),
               *, intercept: bool = True) -> CateStrategy:
    """Calibrate an observational CATE against q-weighted experimental outcomes.

    Solves least squares of q(X_i) Y_i^S - base(X_i) on [1, X_i] over the
    experimental units and returns x -> base(x) + theta^T [1, x].
    """
    validate(exp)
    e = experimental_propensity(exp, e_exp, params)
    pseudo = q_weight(exp.treatment, e) * exp.surrogate
    D = _design(exp.covariates, intercept)
    theta = _lstsq(D, pseudo - base.predict(exp.covariates), "Kallus calibration")
    return _calibrated("kallus", base, theta, intercept)


def _calibrated(kind, base, theta, intercept) -> CateStrategy:
    theta = np.asarray(theta, dtype=float)
    theta.flags.writeable = False

    def predictor(X):
        return base.predict(X) + _design(X, intercept) @ theta

    return CateStrategy(kind, predictor, theta=theta, base=base, intercept=intercept)


@dataclass(frozen=True, eq=False)
class IvNuisances:
    """Conditional means on the experimental sample used by the IV moment.

    mu = E[Y|X], pi = E[Z|X], e = E[W|X], m = E[YZ|X], gamma = E[WZ|X].
    When fitted by cross-fitting, ``training`` carries the out-of-fold values
    at the fitting rows and ``training_X`` those rows.
    """

    mu: Callable
    pi: Callable
    e: Callable
    m: Callable
    gamma: Callable
    training: dict | None = None
    training_X: np.ndarray | None = None

    NAMES = ("mu", "pi", "e", "m", "gamma")

    def values(self, X) -> dict[str, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if (self.training is not None and self.training_X is not None
                and X.shape == self.training_X.shape and np.array_equal(X, self.training_X)):
            return dict(self.training)
        return {name: np.asarray(getattr(self, name)(X), dtype=float) for name in self.NAMES}


def fit_iv_nuisances(exp: LabeledSample, params: ForestParams = ForestParams()) -> IvNuisances:
    validate(exp)
    if exp.instrument is None:
        raise CateError("IV nuisances need an instrument column")
    X, y, w, z = exp.covariates, exp.surrogate, exp.treatment, exp.instrument
    targets = {"mu": (y, None), "pi": (z, PROPENSITY_CLIP), "e": (w, PROPENSITY_CLIP),
               "m": (y * z, None), "gamma": (w * z, None)}
    fits = {name: cross_fit(X, t, params.with_seed("iv", name), clip=clip)
            for name, (t, clip) in targets.items()}
    return IvNuisances(**{k: v.predict for k, v in fits.items()},
                       training={k: v.oof for k, v in fits.items()},
                       training_X=np.array(X))


def fit_kallus_iv(obs: LabeledSample, exp: LabeledSample, base: CateStrategy,
                  nuis: IvNuisances, *, intercept: bool = True) -> CateStrategy:
    """Calibrate an observational CATE with the IV moment identity.

    With a = m - mu*pi and d = gamma - e*pi, regress a - base*d on d*[1, x];
    the objective only multiplies by d.
    """
    validate(exp)
    X = exp.covariates
    v = nuis.values(X)
    a = v["m"] - v["mu"] * v["pi"]
    d = v["gamma"] - v["e"] * v["pi"]
    if np.all(np.abs(d) < STRENGTH_EPS):
        raise CateError("no instrument strength in sample")
    D = d[:, None] * _design(X, intercept)
    theta = _lstsq(D, a - base.predict(X) * d, "Kallus IV calibration")
    return _calibrated("kallus_iv", base, theta, intercept)
