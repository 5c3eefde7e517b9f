import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

from surrofuse.dgp import (
    DgpConfig,
    DgpError,
    draw_samples,
    draw_world,
    ground_truth_population,
    mu_nuisance,
    oracle_with_se,
    primary_mean,
    tau_true,
)


def _x(*head, p=10):
    x = np.zeros(p)
    x[: len(head)] = head
    return x


def test_tau_examples():
    assert tau_true(_x(1, -1), DgpConfig(kappa_tau=2, additive=True)) == 1
    assert tau_true(_x(1, -1), DgpConfig(kappa_tau=2, additive=False)) == 0
    assert tau_true(_x(1, 1, 1, 1), DgpConfig(kappa_tau=4, additive=True)) == 4


def test_mu_examples():
    x = _x(0, 0, 0, 0, 1, -2)
    assert mu_nuisance(x, DgpConfig(nuisance=False)) == 0
    assert mu_nuisance(x, DgpConfig(nuisance=True, additive=True)) == 3
    assert mu_nuisance(x, DgpConfig(nuisance=True, additive=False)) == 0


def test_config_invariants():
    with pytest.raises(DgpError):
        DgpConfig(p=5)
    with pytest.raises(DgpError):
        DgpConfig(kappa_tau=11)
    with pytest.raises(DgpError):
        DgpConfig(support="elsewhere")


def test_primary_mean_indices():
    # 1-based: x_{p-2} + x_{p-1} x_{p-3} multiplies Y^S, x_p^2 enters alone
    cfg = DgpConfig(kappa_tau=2, p=6)
    x = np.array([[1.0, 2.0, 3.0, 5.0, 7.0, 11.0]])
    ys = np.array([2.0])
    expected = (1 + 2) + 11**2 + 2 * 2 + (5 + 7 * 3) * 2
    assert primary_mean(x, ys, cfg)[0] == expected


def test_world_shapes_and_instrument_rule():
    cfg = DgpConfig(omega=1, n_exp=500, n_obs=700, seed=11)
    exp, obs, _ = draw_samples(cfg)
    assert exp.n == 500 and obs.n == 700
    assert exp.primary is None and exp.instrument is not None
    assert obs.primary is not None and obs.instrument is None
    assert np.all(exp.treatment <= exp.instrument)


@pytest.mark.parametrize("omega", [0.0, 1.0])
def test_confounding_strength(omega):
    cfg = DgpConfig(omega=omega, n_exp=20000, n_obs=10, seed=2)
    exp, _, eps = draw_samples(cfg)
    r = np.corrcoef(exp.treatment, eps)[0, 1]
    if omega == 0:
        assert abs(r) <= 0.02
    else:
        assert r > 0.05


def test_reproducible():
    cfg = DgpConfig(seed=5, n_exp=50, n_obs=60)
    a, b, c = draw_samples(cfg)[:2], draw_samples(cfg)[:2], draw_samples(replace(cfg, seed=6))[:2]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.covariates, y.covariates)
        np.testing.assert_array_equal(x.surrogate, y.surrogate)
    assert not np.array_equal(a[0].surrogate, c[0].surrogate)


def test_structural_surrogacy():
    # regress Y^P on the bridge's basis in (X, Y^S); the residual is xi
    cfg = DgpConfig(omega=1, n_exp=10, n_obs=20000, seed=8)
    _, obs, _ = draw_samples(cfg)
    X, ys, p = obs.covariates, obs.surrogate, cfg.p
    basis = np.column_stack([np.ones(obs.n), X, X[:, p - 1] ** 2, ys,
                             X[:, p - 3] * ys, X[:, p - 2] * X[:, p - 4] * ys])
    coef, *_ = np.linalg.lstsq(basis, obs.primary, rcond=None)
    resid = obs.primary - basis @ coef
    assert abs(np.corrcoef(resid, obs.treatment)[0, 1]) <= 0.03


def _closed_form(cfg):
    # additive tau: E[(2 + x_{p-2} + x_{p-1} x_{p-3}) tau] with tau independent of
    # those coordinates = (2 + m + m^2) kappa E[max(0, N(m, 1))]
    m = 1.0 if cfg.support == "shifted" else 0.0
    pos, _ = integrate.quad(lambda t: t * stats.norm.pdf(t, loc=m), 0.0, m + 14,
                            epsabs=1e-13, epsrel=1e-13)
    return (2 + m + m * m) * cfg.kappa_tau * pos


@pytest.mark.parametrize("kappa,support", [(2, "identical"), (2, "shifted"),
                                           (4, "identical"), (4, "shifted")])
def test_oracle_matches_quadrature(kappa, support):
    cfg = DgpConfig(kappa_tau=kappa, additive=True, support=support)
    value, se = oracle_with_se(cfg, 10**6)
    assert abs(value - _closed_form(cfg)) <= 3 * se


def test_oracle_closed_forms():
    assert _closed_form(DgpConfig()) == pytest.approx(4 / math.sqrt(2 * math.pi), abs=1e-9)
    phi, Phi = stats.norm.pdf(1.0), stats.norm.cdf(1.0)
    assert _closed_form(DgpConfig(support="shifted")) == pytest.approx(8 * (phi + Phi), abs=1e-9)


def test_oracle_null_effect():
    value, se = oracle_with_se(DgpConfig(kappa_tau=0), 10**5)
    assert abs(value) <= 3 * se + 1e-12


def test_extra_terms_do_not_move_oracle():
    cfg = DgpConfig(kappa_tau=2, additive=False)
    on, se_on = oracle_with_se(cfg, 4 * 10**5)
    off, se_off = oracle_with_se(replace(cfg, primary_extra_terms=False), 4 * 10**5)
    assert abs(on - off) <= 3 * math.hypot(se_on, se_off)


def test_draw_world_truth():
    world = draw_world(DgpConfig(n_exp=20, n_obs=20), n_mc=10**5)
    assert world.truth == pytest.approx(1.596, abs=0.05)
    assert world.exp.n == 20


def test_ground_truth_population():
    pop = ground_truth_population(DgpConfig(), 2000, seed=1)
    assert pop.n == 2000 and pop.primary is not None
    assert set(np.unique(pop.location)) == {0.0, 1.0}
    assert 0.4 < pop.location.mean() < 0.6
