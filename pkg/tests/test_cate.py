import numpy as np
import pytest
from hypothesis import given, strategies as st

from surrofuse import rng
from surrofuse.cate import (
    CateError,
    CateStrategy,
    IvNuisances,
    constant_strategy,
    experimental_propensity,
    fit_iv_nuisances,
    fit_kallus,
    fit_kallus_iv,
    fit_robinson,
    fit_two_sls,
    q_weight,
    two_sls,
)
from surrofuse.data import EXPERIMENTAL, OBSERVATIONAL, LabeledSample
from surrofuse.dgp import DgpConfig, draw_samples, mu_nuisance, tau_true
from surrofuse.forest import ForestParams
from surrofuse.cate import causal_forest_strategy

ZERO = CateStrategy("causal_forest", lambda X: np.zeros(len(X)))


def _gen(*labels):
    return rng.generator(77, *labels)


def _obs_stub(p):
    X = np.zeros((2, p))
    return LabeledSample(X, [0, 1], [0, 0], OBSERVATIONAL, primary=[0, 0])


class TestQWeight:
    def test_examples(self):
        assert q_weight(1, 0.5) == 2
        assert q_weight(0, 0.5) == -2
        assert q_weight(1, 0.25) == 4

    @given(st.floats(1e-6, 1 - 1e-6))
    def test_identity(self, e):
        # exact up to one rounding in each product
        assert abs(e * q_weight(1, e) + (1 - e) * q_weight(0, e)) <= 4e-16

    @pytest.mark.parametrize("e", [0.0, 1.0, -0.1, 1.2])
    def test_outside_unit_interval(self, e):
        with pytest.raises(CateError):
            q_weight(1, e)


class TestTwoSls:
    def test_wald_example(self):
        z = [1, 1, 1, 0, 0, 0]
        w = [1, 1, 0, 0, 0, 1]
        y = [4, 4, 1, 1, 1, 4]
        assert two_sls(y, w, z) == pytest.approx(3.0, abs=1e-12)

    def test_perfect_instrument_is_ols(self):
        gen = _gen("ols")
        X = gen.standard_normal((300, 2))
        w = (gen.random(300) < 0.5).astype(float)
        y = 1.5 * w + X @ [1.0, -2.0] + gen.standard_normal(300)
        D = np.column_stack([np.ones(300), X, w])
        ols = np.linalg.lstsq(D, y, rcond=None)[0][-1]
        assert two_sls(y, w, w, X) == pytest.approx(ols, abs=1e-10)

    def test_dgp_constant_effect(self):
        gen = _gen("2sls")
        n, p = 2000, 10
        X = gen.standard_normal((n, p))
        eps = gen.standard_normal(n)
        z = (gen.random(n) < 1 / 3).astype(float)
        q = (gen.random(n) < 1 / (1 + np.exp(-eps))).astype(float)
        w = z * q
        ys = 3 * np.maximum(X[:, 4], 0) + (w - 0.5) * 2.0 + eps
        tau = fit_two_sls(LabeledSample(X, w, ys, EXPERIMENTAL, instrument=z))
        assert tau.kind == "two_sls_constant"
        assert 1.7 <= tau.rho <= 2.3
        np.testing.assert_array_equal(tau.predict(X[:3]), tau.rho)

    def test_weak_first_stage(self):
        w = np.tile([1.0, 1.0, 0.0, 0.0], 10)
        z = np.tile([1.0, 0.0, 1.0, 0.0], 10)
        with pytest.raises(CateError, match="weak first stage"):
            two_sls(np.arange(40.0), w, z)

    def test_collinear(self):
        X = np.ones((40, 1))
        w = np.tile([1.0, 0.0], 20)
        with pytest.raises(CateError, match="collinear design"):
            two_sls(np.arange(40.0), w, w, X)


class TestRobinson:
    def test_exact_ratio(self):
        gen = _gen("rob")
        X = gen.standard_normal((200, 2))
        ys = gen.standard_normal(200)
        obs = LabeledSample(X, (ys > 0).astype(float), ys, OBSERVATIONAL, primary=2 * ys)
        assert fit_robinson(obs, ForestParams(num_trees=20)).rho == 2.0

    def test_partially_linear(self):
        gen = _gen("rob2")
        X = gen.standard_normal((2000, 4))
        ys = X[:, 1] + gen.standard_normal(2000)
        yp = 2 * ys + 3 * np.maximum(X[:, 0], 0) + gen.standard_normal(2000)
        obs = LabeledSample(X, (gen.random(2000) < 0.5).astype(float), ys, OBSERVATIONAL,
                            primary=yp)
        rho = fit_robinson(obs).rho
        assert 1.85 <= rho <= 2.15

    def test_surrogate_explained(self):
        X = _gen("rob3").standard_normal((100, 2))
        obs = LabeledSample(X, np.tile([0.0, 1.0], 50), np.full(100, 0.3), OBSERVATIONAL,
                            primary=X[:, 0])
        with pytest.raises(CateError, match="surrogate fully explained by X"):
            fit_robinson(obs, ForestParams(num_trees=10))


def _paired_exp():
    # two units per x, one per arm; tau linear, a(x) arbitrary
    gen = _gen("pairs")
    base = gen.standard_normal((20, 3))
    X = np.repeat(base, 2, axis=0)
    w = np.tile([0.0, 1.0], 20)
    tau = 0.5 + X @ [1.0, -2.0, 0.25]
    a = np.sin(X[:, 0]) + X[:, 1] ** 2
    ys = a + (w - 0.5) * tau
    return LabeledSample(X, w, ys, EXPERIMENTAL)


def _randomized_exp(n=2000, p=10, seed=0):
    cfg = DgpConfig(kappa_tau=2, additive=True, nuisance=False, p=p)
    gen = _gen("rexp", seed)
    X = gen.standard_normal((n, p))
    w = (gen.random(n) < 0.5).astype(float)
    ys = (w - 0.5) * tau_true(X, cfg) + gen.standard_normal(n)
    return LabeledSample(X, w, ys, EXPERIMENTAL), cfg


class TestKallus:
    def test_paired_recovers_coefficients(self):
        exp = _paired_exp()
        fit = fit_kallus(_obs_stub(3), exp, ZERO, e_exp=0.5)
        np.testing.assert_allclose(fit.theta, [0.5, 1.0, -2.0, 0.25], atol=1e-12)

    def test_zero_at_truth_noise_free(self):
        exp = _paired_exp()
        truth = CateStrategy("causal_forest", lambda X: 0.5 + X @ [1.0, -2.0, 0.25])
        fit = fit_kallus(_obs_stub(3), exp, truth, e_exp=0.5)
        np.testing.assert_allclose(fit.theta, 0.0, atol=1e-12)

    def test_truth_base_gives_small_theta(self):
        # tolerance 0.15 per coefficient: about three standard errors here
        exp, cfg = _randomized_exp()
        truth = CateStrategy("causal_forest", lambda X: tau_true(X, cfg))
        fit = fit_kallus(_obs_stub(10), exp, truth, e_exp=0.5)
        assert fit.theta.shape == (11,)
        assert np.all(np.abs(fit.theta) <= 0.15)

    def test_linear_offset_recovered(self):
        exp, cfg = _randomized_exp(seed=1)
        off = CateStrategy("causal_forest", lambda X: tau_true(X, cfg) - X[:, 0])
        fit = fit_kallus(_obs_stub(10), exp, off, e_exp=0.5)
        target = np.zeros(11)
        target[1] = 1.0
        assert np.all(np.abs(fit.theta - target) <= 0.15)

    def test_no_intercept(self):
        exp = _paired_exp()
        fit = fit_kallus(_obs_stub(3), exp, ZERO, e_exp=0.5, intercept=False)
        assert fit.theta.shape == (3,)

    def test_affine_composition(self):
        exp = _paired_exp()
        base = CateStrategy("causal_forest", lambda X: np.cos(X).sum(axis=1))
        fit = fit_kallus(_obs_stub(3), exp, base, e_exp=0.5)
        gen = _gen("aff")
        for _ in range(10):
            a, d = gen.standard_normal((2, 3))
            pts = np.array([a, a + d, a + 2 * d])
            g = fit.predict(pts) - base.predict(pts)
            assert abs(g[0] - 2 * g[1] + g[2]) <= 1e-12
            np.testing.assert_allclose(g, fit.correction(pts), atol=1e-14)

    def test_collinear(self):
        X = np.ones((10, 1))
        exp = LabeledSample(X, np.tile([0.0, 1.0], 5), np.arange(10.0), EXPERIMENTAL)
        with pytest.raises(CateError, match="collinear"):
            fit_kallus(_obs_stub(1), exp, ZERO, e_exp=0.5)

    def test_forest_propensity_source(self):
        exp, _ = _randomized_exp(n=300, p=6)
        e = experimental_propensity(exp, "forest", ForestParams(num_trees=20))
        assert e.shape == (300,) and e.min() >= 0.01 and e.max() <= 0.99
        with pytest.raises(CateError):
            experimental_propensity(exp, "known")


def _exact_nuisances(tau_fn):
    # arbitrary smooth nuisances with m chosen so the IV moment identity holds
    pi = lambda X: 0.3 + 0.1 * np.tanh(X[:, 0])
    e = lambda X: 0.2 + 0.05 * np.cos(X[:, 1])
    gamma = lambda X: 0.15 + 0.05 * np.sin(X[:, 2])
    mu = lambda X: X[:, 0] ** 2 - X[:, 1]
    m = lambda X: mu(X) * pi(X) + tau_fn(X) * (gamma(X) - e(X) * pi(X))
    return IvNuisances(mu=mu, pi=pi, e=e, m=m, gamma=gamma)


def _iv_exp(n=40, p=3):
    gen = _gen("ivx")
    X = gen.standard_normal((n, p))
    z = np.tile([0.0, 1.0], n // 2)
    return LabeledSample(X, z, np.zeros(n), EXPERIMENTAL, instrument=z)


class TestKallusIv:
    def test_moment_identity_recovers_tau(self):
        tau = lambda X: 1.0 - 0.5 * X[:, 0] + 2.0 * X[:, 2]
        fit = fit_kallus_iv(_obs_stub(3), _iv_exp(), ZERO, _exact_nuisances(tau))
        np.testing.assert_allclose(fit.theta, [1.0, -0.5, 0.0, 2.0], atol=1e-12)

    def test_zero_at_truth(self):
        tau = lambda X: np.maximum(X[:, 0], 0) + X[:, 1] ** 3
        truth = CateStrategy("causal_forest", tau)
        fit = fit_kallus_iv(_obs_stub(3), _iv_exp(), truth, _exact_nuisances(tau))
        np.testing.assert_allclose(fit.theta, 0.0, atol=1e-12)

    def test_no_strength(self):
        zero = lambda X: np.zeros(len(X))
        nuis = IvNuisances(mu=zero, pi=lambda X: np.full(len(X), 0.5),
                           e=lambda X: np.full(len(X), 0.5), m=zero,
                           gamma=lambda X: np.full(len(X), 0.25))
        with pytest.raises(CateError, match="no instrument strength"):
            fit_kallus_iv(_obs_stub(3), _iv_exp(), ZERO, nuis)

    def test_affine_composition(self):
        tau = lambda X: X[:, 0]
        base = CateStrategy("causal_forest", lambda X: np.exp(X[:, 1]))
        fit = fit_kallus_iv(_obs_stub(3), _iv_exp(), base, _exact_nuisances(tau))
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, -1.0], [2.0, 4.0, -2.0]])
        g = fit.predict(pts) - base.predict(pts)
        assert abs(g[0] - 2 * g[1] + g[2]) <= 1e-12


class TestIvNuisances:
    def test_constant_instrument_clips(self):
        gen = _gen("z1")
        X = gen.standard_normal((200, 2))
        w = (gen.random(200) < 0.5).astype(float)
        exp = LabeledSample(X, w, gen.standard_normal(200), EXPERIMENTAL,
                            instrument=np.ones(200))
        nuis = fit_iv_nuisances(exp, ForestParams(num_trees=20))
        np.testing.assert_array_equal(nuis.pi(gen.standard_normal((30, 2))), 0.99)
        np.testing.assert_array_equal(nuis.values(X)["pi"], 0.99)

    def test_y_equals_z(self):
        gen = _gen("yz")
        X = gen.standard_normal((2000, 3))
        z = (gen.random(2000) < 1 / (1 + np.exp(-X[:, 0]))).astype(float)
        w = z * (gen.random(2000) < 0.6)
        exp = LabeledSample(X, w, z, EXPERIMENTAL, instrument=z)
        nuis = fit_iv_nuisances(exp)
        grid = np.zeros((21, 3))
        grid[:, 0] = np.linspace(-1.5, 1.5, 21)
        assert np.all(np.abs(nuis.m(grid) - nuis.pi(grid)) <= 0.1)

    def test_pure_noise_is_flat(self):
        # pilot over 20 draws: single-draw spread of mu between 0.08 and 0.31,
        # so the spread is averaged over five independent samples
        grid = np.zeros((21, 3))
        grid[:, 0] = np.linspace(-1.5, 1.5, 21)
        spreads = {name: [] for name in IvNuisances.NAMES}
        for seed in range(5):
            gen = _gen("flat", seed)
            X = gen.standard_normal((2000, 3))
            z = (gen.random(2000) < 0.5).astype(float)
            w = z * (gen.random(2000) < 0.5)
            exp = LabeledSample(X, w, gen.standard_normal(2000), EXPERIMENTAL, instrument=z)
            nuis = fit_iv_nuisances(exp)
            for name in IvNuisances.NAMES:
                spreads[name].append(np.ptp(getattr(nuis, name)(grid)))
        for name, values in spreads.items():
            assert np.mean(values) <= 0.2, name


def test_fused_beats_observational_base():
    # omega = 1 on shifted support: the observational CATE is confounded and
    # the IV calibration should shrink its error on the observational law
    cfg = DgpConfig(omega=1, kappa_tau=2, additive=True, nuisance=True, support="shifted")
    params = ForestParams(num_trees=100)
    gains = []
    for seed in range(20):
        exp, obs, _ = draw_samples(DgpConfig(**{**cfg.to_dict(), "seed": seed}))
        base = causal_forest_strategy(obs, params.with_seed("base", seed))
        nuis = fit_iv_nuisances(exp, params.with_seed("nuis", seed))
        fused = fit_kallus_iv(obs, exp, base, nuis)
        t = tau_true(obs.covariates, cfg)
        gains.append(np.mean((base.predict(obs.covariates) - t) ** 2)
                     - np.mean((fused.predict(obs.covariates) - t) ** 2))
    assert np.mean(gains) > 0


def test_fused_with_exact_nuisances_beats_base():
    # population nuisances of the simulated design: pi = 1/3, e = gamma = 1/6
    cfg = DgpConfig(omega=1, kappa_tau=2, additive=True, nuisance=True, support="shifted")
    exact = IvNuisances(mu=lambda X: mu_nuisance(X, cfg) - tau_true(X, cfg) / 3,
                        pi=lambda X: np.full(len(X), 1 / 3), e=lambda X: np.full(len(X), 1 / 6),
                        m=lambda X: mu_nuisance(X, cfg) / 3, gamma=lambda X: np.full(len(X), 1 / 6))
    params = ForestParams(num_trees=100)
    for seed in range(3):
        exp, obs, _ = draw_samples(DgpConfig(**{**cfg.to_dict(), "seed": seed}))
        base = causal_forest_strategy(obs, params.with_seed("base", seed))
        fused = fit_kallus_iv(obs, exp, base, exact)
        t = tau_true(obs.covariates, cfg)
        assert (np.mean((fused.predict(obs.covariates) - t) ** 2)
                < np.mean((base.predict(obs.covariates) - t) ** 2))


def test_strategies_share_contract():
    X = np.zeros((4, 2))
    for s in (constant_strategy(1.0), ZERO):
        assert s.predict(X).shape == (4,)
    with pytest.raises(CateError):
        CateStrategy("mystery", lambda X: X)
    with pytest.raises(CateError):
        ZERO.correction(X)
