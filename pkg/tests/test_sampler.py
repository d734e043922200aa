import datetime as dt
import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats

from diffcon.basis import BasisSpec, build_basis, constant_spec, default_time_spec, penalty_for, rw1_penalty
from diffcon.distributions import DecayKernel
from diffcon.model import EventSeries, ModelParams
from diffcon.sampler import (
    ChainConfig,
    ChainState,
    GibbsSampler,
    InconsistentStateError,
    LatentState,
    Priors,
    SamplerError,
    adapt_step,
    initial_params,
    resample_identify,
    run_chain,
    sample_prior,
    thin_counts,
    update_beta,
    update_eta,
    update_lam_c,
    update_rho,
    update_sigma2,
)
from diffcon.simulate import SimConfig, simulate_hierarchical


def _zeros_series(T):
    return EventSeries(dt.date(2000, 1, 1), np.zeros(T, int), np.zeros(T, int))


def _const_design(T):
    X = build_basis(constant_spec(0, T - 1), np.arange(T, dtype=float))
    W = build_basis(constant_spec(0, 1), np.zeros(T))
    return X, W


def test_chain_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        ChainConfig(n_iterations=10, n_burnin=10)
    with pytest.raises(ValueError):
        ChainConfig(thin_every=0)
    with pytest.raises(ValueError):
        ChainConfig(target_accept=(0.5, 0.4))
    cfg = ChainConfig(n_iterations=100, n_burnin=10, rng_seed=3)
    assert ChainConfig.from_dict(cfg.to_dict()) == cfg


# --- thinning ----------------------------------------------------------------------


def test_thin_edge_cases():
    rng = np.random.default_rng(0)
    Yd, Yc = thin_counts(np.array([5, 0, 3]), np.ones(3), np.zeros(3), rng)
    np.testing.assert_array_equal(Yd, [5, 0, 3])
    np.testing.assert_array_equal(Yc, 0)
    Yd, Yc = thin_counts(np.array([0]), [1.0], [2.0], rng)
    assert (Yd[0], Yc[0]) == (0, 0)
    with pytest.raises(InconsistentStateError):
        thin_counts(np.array([1]), [0.0], [0.0], rng)


def test_thin_binomial_mean():
    rng = np.random.default_rng(1)
    Yd, Yc = thin_counts(np.full(10**4, 100), np.ones(10**4), np.ones(10**4), rng)
    np.testing.assert_array_equal(Yd + Yc, 100)
    assert abs(Yd.mean() - 50) < 2


# --- conjugate updates -------------------------------------------------------------


def _posterior_mean_lam(y, mu, s2):
    # density-ratio oracle: prior Ga(s2, scale mu/s2) times Poisson(y | lam), by quadrature
    prior = stats.gamma(s2, scale=mu / s2)
    f = lambda lam: prior.pdf(lam) * stats.poisson.pmf(y, lam)  # noqa: E731
    hi = prior.ppf(1 - 1e-12) + 10 * (y + 1)
    z = integrate.quad(f, 0, hi, limit=200)[0]
    return integrate.quad(lambda lam: lam * f(lam), 0, hi, limit=200)[0] / z


@pytest.mark.parametrize("y, mu, s2", [(0, 1.5, 2.0), (3, 0.7, 0.5), (1, 4.0, 10.0)])
def test_lam_c_conjugacy(y, mu, s2):
    rng = np.random.default_rng(2)
    n = 10**5
    draws = update_lam_c(np.full(n, y), np.full(n, mu), s2, rng)
    expect = _posterior_mean_lam(y, mu, s2)
    if y == 0:
        assert expect == pytest.approx(mu * s2 / (s2 + mu), rel=1e-6)
    se = draws.std() / math.sqrt(n)
    assert abs(draws.mean() - expect) < 4 * se


def test_lam_c_degenerate_and_prior_dominated():
    rng = np.random.default_rng(3)
    np.testing.assert_array_equal(update_lam_c(np.zeros(3, int), np.zeros(3), 1.0, rng), 0.0)
    with pytest.raises(InconsistentStateError):
        update_lam_c(np.array([1]), np.zeros(1), 1.0, rng)
    draws = update_lam_c(np.full(10**4, 7), np.full(10**4, 2.0), 1e8, rng)
    assert draws.mean() == pytest.approx(2.0, rel=0.01)


def test_rho_null_space_is_hyperprior_plus_rank():
    rng = np.random.default_rng(4)
    K = rw1_penalty(5)
    draws = np.array([update_rho(np.full(5, 0.3), K, 1.0, 0.5, rng) for _ in range(20000)])
    assert draws.mean() == pytest.approx((1.0 + 4 / 2) / 0.5, rel=0.02)


def test_rho_conjugacy_against_density_ratio():
    rng = np.random.default_rng(5)
    K = rw1_penalty(3)
    beta = np.array([0.2, -0.1, 0.4])
    q = beta @ K @ beta
    a, b = 1.0, 0.005
    # unnormalised posterior: hyperprior density times the rank-2 Gaussian normaliser and kernel
    post = lambda r: stats.gamma.pdf(r, a, scale=1 / b) * r ** (2 / 2) * math.exp(-0.5 * r * q)  # noqa: E731
    z = integrate.quad(post, 0, np.inf)[0]
    mean = integrate.quad(lambda r: r * post(r), 0, np.inf)[0] / z
    draws = np.array([update_rho(beta, K, a, b, rng) for _ in range(20000)])
    assert abs(draws.mean() - mean) < 4 * draws.std() / math.sqrt(draws.size)
    smoother = np.array([update_rho(beta / 3, K, a, b, rng) for _ in range(5000)])
    assert smoother.mean() > draws.mean()


# --- re-sampling step ----------------------------------------------------------------


@pytest.mark.parametrize(
    "rate, expect",
    [(0.30, 1.0), (0.55, 1.25), (0.05, 0.8), (0.20, 1.0), (0.40, 1.0)],
)
def test_adapt_step_rules(rate, expect):
    assert adapt_step(rate, 1.0) == pytest.approx(expect)


def test_adapt_step_compounds():
    step = 1.0
    for _ in range(10):
        step = adapt_step(0.05, step)
    assert step == pytest.approx(0.8**10)


def test_resample_acceptance_limits():
    rng = np.random.default_rng(6)
    loglik = lambda b: -50.0 * float(b @ b)  # noqa: E731
    x = np.zeros(2)
    small = sum(resample_identify(loglik, x, 1e-6, rng)[1] for _ in range(1000))
    large = sum(resample_identify(loglik, x, 1e3, rng)[1] for _ in range(1000))
    assert small > 990
    assert large < 10


def test_resample_with_prior_is_exact_metropolis():
    rng = np.random.default_rng(7)
    x = np.zeros(1)
    out = np.empty(40000)
    for i in range(out.size):
        x, _ = resample_identify(lambda b: -0.5 * float(b @ b), x, 1.5, rng, log_prior=lambda b: -0.5 * float(b @ b))
        out[i] = x[0]
    # target N(0, 1/2)
    assert abs(out.var() - 0.5) < 0.03


def test_adaptation_reaches_target_band():
    rng_sim = SimConfig(
        400, ModelParams([math.log(0.5)], [math.log(0.5)], DecayKernel(2.0, 1.5), 2.0), rng_seed=2
    )
    series, _ = simulate_hierarchical(rng_sim)
    X, W = _const_design(400)
    draws = run_chain(series, X, W, ChainConfig(3500, 2500, 1, rng_seed=1, store_latents=False))
    for block in ("beta", "eta"):
        assert 0.20 <= draws.accept_stats[block]["rate"] <= 0.40


# --- block updates ------------------------------------------------------------------


def _state(y, X, W, params, Yd=None, Yc=None, lam_c=None):
    y = np.asarray(y, dtype=float)
    Yd = y.astype(np.int64) if Yd is None else Yd
    Yc = np.zeros(y.size, dtype=np.int64) if Yc is None else Yc
    return ChainState(y, X, W, params, LatentState(Yd, Yc, np.zeros(y.size) if lam_c is None else lam_c))


def test_beta_quadratic_form_under_flat_likelihood():
    n, rho, tau = 4, 2.0, 0.5
    X = np.zeros((10, n))
    W = np.ones((10, 1))
    params = ModelParams(np.zeros(n), [0.0], DecayKernel(2.0, 1.0), 1.0, rho=rho)
    priors = Priors(rw1_penalty(n), penalty_for(1), beta_ridge=tau)
    st = _state(np.zeros(10), X, W, params)
    rng = np.random.default_rng(8)
    q = []
    for i in range(30000):
        st.params = st.params.replace(beta=update_beta(st, priors, rng))
        q.append(st.params.beta @ priors.K @ st.params.beta)
    # Gaussian quadratic form on the penalised subspace: rank(K) / rho
    assert np.mean(q[1000:]) == pytest.approx((n - 1) / rho, rel=0.06)


def test_beta_concentrates_at_penalised_mode():
    T, rho, tau = 200, 1e4, 1.0
    X = build_basis(default_time_spec(T, 40), np.arange(T, dtype=float)).values
    n = X.shape[1]
    K = rw1_penalty(n)

    def neg_log_post(b):
        return np.exp(X @ b).sum() + 0.5 * rho * b @ K @ b + 0.5 * tau * n * b.mean() ** 2

    mode = optimize.minimize(neg_log_post, np.full(n, -1.0), method="BFGS").x
    assert np.ptp(mode) < 1e-3 and math.exp(mode.mean()) < 0.1

    params = ModelParams(mode, [0.0], DecayKernel(2.0, 1.0), 1.0, rho=rho)
    priors = Priors(K, penalty_for(1), beta_ridge=tau)
    st = _state(np.zeros(T), X, np.ones((T, 1)), params)
    rng = np.random.default_rng(9)
    draws = []
    for _ in range(3000):
        st.params = st.params.replace(beta=update_beta(st, priors, rng))
        draws.append(st.params.beta)
    draws = np.array(draws)
    assert np.max(np.ptp(draws, axis=1)) < 0.1
    assert abs(draws.mean() - mode.mean()) < 0.3


def _eta_setup(gamma=1.0, ridge=0.0):
    rng = np.random.default_rng(10)
    T = 150
    y = rng.poisson(1.0, T)
    fat = np.where(y > 0, rng.poisson(3, T), 0)
    spec = BasisSpec(1, (1.0,), (0.0, float(np.log1p(fat.max()))))
    W = build_basis(spec, np.log1p(fat)).values
    X = np.ones((T, 1))
    params = ModelParams([0.0], np.zeros(W.shape[1]), DecayKernel(2.0, 1.5), 2.0, gamma=gamma)
    priors = Priors(penalty_for(1), rw1_penalty(W.shape[1]), eta_ridge=ridge)
    return _state(y, X, W, params), priors, rng


def test_eta_collapses_under_huge_smoothing():
    st, priors, rng = _eta_setup(gamma=1e8)
    st.params = st.params.replace(eta=np.array([0.5, -0.5, 0.2]))
    for _ in range(300):
        st.params = st.params.replace(eta=update_eta(st, priors, rng))
    assert np.ptp(st.params.eta) < 1e-2


def test_eta_pushed_down_without_contagion():
    st, priors, rng = _eta_setup(ridge=4.0)
    draws = []
    for _ in range(3000):
        st.params = st.params.replace(eta=update_eta(st, priors, rng))
        draws.append(np.exp(st.W @ st.params.eta).mean())
    prior_mean = math.exp(0.5 / 4.0)  # lower bound on the prior mean of delta
    assert np.mean(draws[500:]) < prior_mean
    assert np.mean(draws[500:]) < 0.5


def test_sigma2_drifts_up_without_dispersion():
    T = 300
    y = np.ones(T)
    X, W = np.ones((T, 1)), np.ones((T, 1))
    params = ModelParams([0.0], [0.0], DecayKernel(2.0, 1.0), 1.0)
    st = _state(y, X, W, params)
    st.latent.lam_c = st.mu_c()
    priors = Priors(penalty_for(1), penalty_for(1))
    rng = np.random.default_rng(11)
    draws = []
    for _ in range(40):
        st.params = st.params.replace(sigma2=update_sigma2(st, priors, rng))
        draws.append(st.params.sigma2)
    # the gamma layer carries no dispersion, so the draws run off towards the bound
    assert draws[0] > 1.0
    assert np.median(draws[:10]) < np.median(draws[10:])
    assert min(draws[10:]) > 100


# --- whole chains -------------------------------------------------------------------------


def test_partition_invariant_and_determinism():
    series, _ = simulate_hierarchical(
        SimConfig(150, ModelParams([math.log(0.6)], [math.log(0.4)], DecayKernel(2.0, 1.5), 2.0), rng_seed=5)
    )
    X, W = _const_design(150)
    cfg = ChainConfig(60, 10, 1, rng_seed=42)
    a = run_chain(series, X, W, cfg)
    b = run_chain(series, X, W, cfg)
    np.testing.assert_array_equal(a.array(), b.array())
    for lt in a.latents:
        np.testing.assert_array_equal(lt.Yd + lt.Yc, series.counts)
        assert np.all(lt.Yd >= 0) and np.all(lt.Yc >= 0)
        assert np.all(lt.lam_c >= 0)
    c = run_chain(series, X, W, ChainConfig(60, 10, 1, rng_seed=43))
    assert not np.array_equal(a.array(), c.array())


def test_prior_only_medians_of_positive_parameters():
    T = 60
    X, W = _const_design(T)
    # without events nothing informs eta, so give it a proper prior
    cfg = ChainConfig(6000, 500, 1, rng_seed=3, store_latents=False, eta_ridge=1.0)
    draws = run_chain(_zeros_series(T), X, W, cfg)
    assert abs(math.log(np.median(draws.column("sigma2")))) < 0.25
    assert abs(math.log(np.median(draws.column("phi.mean") - 1))) < 0.25
    assert abs(math.log(np.median(draws.column("phi.scale")))) < 0.25


def test_all_zero_series_pushes_diffusion_to_zero():
    T = 1000
    series = _zeros_series(T)
    X = build_basis(default_time_spec(T), np.arange(T, dtype=float))
    W = build_basis(constant_spec(0, 1), np.zeros(T))
    draws = run_chain(series, X, W, ChainConfig(1500, 500, 1, rng_seed=4, store_latents=False))
    lam = np.exp(draws.array()[:, : X.shape[1]] @ X.values.T)
    assert np.all(np.median(lam, axis=0) < 0.05)


def test_initial_params_and_shape_checks():
    T = 50
    X, W = _const_design(T)
    y = np.full(T, 2)
    p = initial_params(y, X, W)
    assert math.exp(p.beta[0]) == pytest.approx(2.0, rel=1e-6)
    assert p.kernel == DecayKernel(2.0, 1.0) and p.sigma2 == 1.0
    with pytest.raises(ValueError):
        GibbsSampler(y, X.values[:10], W, ChainConfig(10, 1))
    with pytest.raises(ValueError):
        GibbsSampler(y, X, W, ChainConfig(10, 1), init=ModelParams([0.0, 0.0], [0.0], DecayKernel(2, 1), 1.0))


def test_sampler_errors_name_block():
    T = 20
    X, W = _const_design(T)
    s = GibbsSampler(np.ones(T), X, W, ChainConfig(10, 1))
    s.state.params = s.state.params.replace(beta=np.array([800.0]))
    with pytest.raises(SamplerError, match="iteration 0, block thin"):
        s.sweep()


def test_sample_prior_requires_proper_priors():
    with pytest.raises(ValueError):
        sample_prior(Priors(rw1_penalty(2), rw1_penalty(2)), np.random.default_rng(0))
    p = sample_prior(Priors(rw1_penalty(2), rw1_penalty(2), 2.0, 2.0, 4.0, 0.0, 4.0, 0.0), np.random.default_rng(0))
    assert p.beta.size == 2 and p.kernel.delay_mean > 1
