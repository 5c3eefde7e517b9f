"""Synthetic two-sample worlds with a known primary-outcome ATE.

Covariates are standard normal (or shifted / uniform, depending on the
support knob), Z ~ Bernoulli(1/3), Q ~ Bernoulli(sigmoid(omega * eps)),
W = Z and Q, and

    Y^S = mu(X) + (W - 1/2) tau(X) + eps
    Y^P = sum_{j<=kappa} X_j + X_p^2 + 2 Y^S + (X_{p-2} + X_{p-1} X_{p-3}) Y^S + xi

with eps, xi independent standard normals. Indices above are 1-based.
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import rng
from .data import EXPERIMENTAL, OBSERVATIONAL, LabeledSample, validate

SUPPORTS = ("identical", "shifted", "contained")
ORACLE_DRAWS = 10**6
_CHUNK = 200_000


class DgpError(ValueError):
    pass


@dataclass(frozen=True)
class DgpConfig:
    omega: float = 0.0
    kappa_tau: int = 2
    additive: bool = True
    nuisance: bool = True
    support: str = "identical"
    p: int = 10
    n_exp: int = 300
    n_obs: int = 1000
    seed: int = 0
    # debug: drop the X-only terms of Y^P (they cancel in the ATE)
    primary_extra_terms: bool = True

    def __post_init__(self):
        if self.p < 6:
            raise DgpError("p must be >= 6")
        if not 0 <= self.kappa_tau <= self.p:
            raise DgpError("kappa_tau must lie in [0, p]")
        if self.support not in SUPPORTS:
            raise DgpError(f"support must be one of {SUPPORTS}")
        if self.n_exp < 1 or self.n_obs < 1:
            raise DgpError("sample sizes must be positive")
        if not np.isfinite(self.omega):
            raise DgpError("omega must be finite")

    def knobs(self) -> tuple:
        """Settings that determine the population law (not sizes or seed)."""
        return (float(self.omega), self.kappa_tau, bool(self.additive),
                bool(self.nuisance), self.support, self.p, bool(self.primary_extra_terms))

    def to_dict(self) -> dict:
        return asdict(self)


def _rows(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def tau_true(x, cfg: DgpConfig):
    """Surrogate CATE; scalar for a single point, vector for a matrix."""
    X = _rows(x)
    head = X[:, : cfg.kappa_tau]
    if cfg.additive:
        out = np.maximum(head, 0.0).sum(axis=1)
    else:
        out = np.maximum(head.sum(axis=1), 0.0)
    return float(out[0]) if np.ndim(x) == 1 else out


def mu_nuisance(x, cfg: DgpConfig):
    X = _rows(x)
    if not cfg.nuisance:
        out = np.zeros(X.shape[0])
    elif cfg.additive:
        out = 3.0 * np.maximum(X[:, 4], 0.0) + 3.0 * np.maximum(X[:, 5], 0.0)
    else:
        out = 3.0 * np.maximum(X[:, 4] + X[:, 5], 0.0)
    return float(out[0]) if np.ndim(x) == 1 else out


def primary_mean(X, ys, cfg: DgpConfig) -> np.ndarray:
    """E[Y^P | X, Y^S], i.e. the true bridge."""
    X = _rows(X)
    ys = np.asarray(ys, dtype=float)
    p = cfg.p
    out = 2.0 * ys + (X[:, p - 3] + X[:, p - 2] * X[:, p - 4]) * ys
    if cfg.primary_extra_terms:
        out = out + X[:, : cfg.kappa_tau].sum(axis=1) + X[:, p - 1] ** 2
    return out


def _covariates(gen, n, cfg: DgpConfig, group: str) -> np.ndarray:
    p = cfg.p
    if group == EXPERIMENTAL:
        if cfg.support == "contained":
            return gen.uniform(-1.0, 1.0, size=(n, p))
        return gen.standard_normal((n, p))
    if cfg.support == "shifted":
        return gen.standard_normal((n, p)) + 1.0
    return gen.standard_normal((n, p))


def _units(gen, X, cfg: DgpConfig):
    n = X.shape[0]
    eps = gen.standard_normal(n)
    z = (gen.random(n) < 1.0 / 3.0).astype(float)
    q = (gen.random(n) < 1.0 / (1.0 + np.exp(-cfg.omega * eps))).astype(float)
    w = z * q
    ys = mu_nuisance(X, cfg) + (w - 0.5) * tau_true(X, cfg) + eps
    xi = gen.standard_normal(n)
    yp = primary_mean(X, ys, cfg) + xi
    return eps, z, w, ys, yp


@dataclass(frozen=True, eq=False)
class WorldDraw:
    exp: LabeledSample
    obs: LabeledSample
    truth: float
    # structural noise of the experimental units, kept for diagnostics
    exp_eps: np.ndarray | None = None


def draw_samples(cfg: DgpConfig) -> tuple[LabeledSample, LabeledSample, np.ndarray]:
    gen_e = rng.generator(cfg.seed, "world", "exp")
    X = _covariates(gen_e, cfg.n_exp, cfg, EXPERIMENTAL)
    eps, z, w, ys, _ = _units(gen_e, X, cfg)
    exp = validate(LabeledSample(X, w, ys, EXPERIMENTAL, instrument=z))

    gen_o = rng.generator(cfg.seed, "world", "obs")
    X = _covariates(gen_o, cfg.n_obs, cfg, OBSERVATIONAL)
    _, _, w, ys, yp = _units(gen_o, X, cfg)
    obs = validate(LabeledSample(X, w, ys, OBSERVATIONAL, primary=yp))
    return exp, obs, eps


def draw_world(cfg: DgpConfig, n_mc: int = ORACLE_DRAWS) -> WorldDraw:
    exp, obs, eps = draw_samples(cfg)
    return WorldDraw(exp, obs, oracle_tau_p(cfg, n_mc), eps)


@functools.lru_cache(maxsize=256)
def _oracle_cached(knobs: tuple, n_mc: int, seed: int) -> tuple[float, float]:
    omega, kappa, additive, nuisance, support, p, extra = knobs
    cfg = DgpConfig(omega=omega, kappa_tau=kappa, additive=additive, nuisance=nuisance,
                    support=support, p=p, primary_extra_terms=extra)
    gen = rng.generator(seed, "oracle", *map(str, knobs))
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_mc:
        n = min(_CHUNK, n_mc - done)
        X = _covariates(gen, n, cfg, OBSERVATIONAL)
        eps = gen.standard_normal(n)
        xi = gen.standard_normal(n)
        base = mu_nuisance(X, cfg) + eps
        t = tau_true(X, cfg)
        y1 = primary_mean(X, base + 0.5 * t, cfg) + xi
        y0 = primary_mean(X, base - 0.5 * t, cfg) + xi
        diff = y1 - y0
        total += float(diff.sum())
        total_sq += float(diff @ diff)
        done += n
    mean = total / n_mc
    var = max(total_sq / n_mc - mean * mean, 0.0)
    return mean, float(np.sqrt(var / n_mc))


def oracle_with_se(cfg: DgpConfig, n_mc: int = ORACLE_DRAWS,
                   seed: int = 0) -> tuple[float, float]:
    """Monte Carlo primary ATE on the observational law and its standard error.

    Both potential outcomes share eps and xi, so each unit contributes its
    exact Y^P(1) - Y^P(0).
    """
    return _oracle_cached(cfg.knobs(), int(n_mc), int(seed))


def oracle_tau_p(cfg: DgpConfig, n_mc: int = ORACLE_DRAWS, seed: int = 0) -> float:
    return oracle_with_se(cfg, n_mc, seed)[0]


def ground_truth_population(cfg: DgpConfig, n: int, seed: int = 0,
                            location_share: float = 0.5) -> LabeledSample:
    """A labelled population table for the biased-subsampling protocol.

    Units follow the experimental-law mechanism (so treatment is randomised
    when omega = 0) and carry both outcomes plus a Bernoulli location tag.
    """
    gen = rng.generator(seed, "population")
    X = _covariates(gen, n, replace(cfg, support="identical"), EXPERIMENTAL)
    _, _, w, ys, yp = _units(gen, X, cfg)
    loc = (gen.random(n) < location_share).astype(float)
    return validate(LabeledSample(X, w, ys, OBSERVATIONAL, primary=yp, location=loc))
