import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffcon.basis import BasisSpec, build_basis, constant_spec, equally_spaced_spec
from diffcon.distributions import DecayKernel, decay_pmf, decay_weights
from diffcon.model import (
    EventSeries,
    ModelParams,
    NumericOverflowError,
    conditional_intensity,
    contagion_mean,
    convolve_history,
    diffusion_rate,
    excitation_coeffs,
    loglik_contagion,
    loglik_diffusion,
    loglik_gradient,
    nb_mean_terms,
    param_names,
)
from diffcon._kernels import contagion_terms_jit

START = dt.date(2001, 1, 1)


def _series(counts, fat=None):
    counts = np.asarray(counts)
    return EventSeries(START, counts, np.zeros_like(counts) if fat is None else fat)


def test_event_series_validation():
    with pytest.raises(ValueError):
        EventSeries(START, [1, -1], [0, 0])
    with pytest.raises(ValueError):
        EventSeries(START, [0, 1], [2, 0])
    s = EventSeries(START, [1, 0, 2], [3, 0, 0])
    assert s.dates[-1] == dt.date(2001, 1, 3)
    np.testing.assert_allclose(s.log_fatalities, np.log1p([3, 0, 0]))


def test_params_flat_round_trip():
    p = ModelParams([0.1, 0.2], [0.3], DecayKernel(2.5, 0.7), 1.3, 4.0, 5.0)
    q = ModelParams.from_flat(p.flat(), 2, 1)
    np.testing.assert_array_equal(q.flat(), p.flat())
    assert param_names(2, 1) == ["beta.0", "beta.1", "eta.0", "phi.mean", "phi.scale", "sigma2", "rho", "gamma"]
    with pytest.raises(ValueError):
        p.replace(sigma2=0.0)


def test_diffusion_rate_examples():
    X = build_basis(equally_spaced_spec(0, 9, 2), np.arange(10.0))
    np.testing.assert_allclose(diffusion_rate(np.zeros(X.shape[1]), X), 1.0)
    np.testing.assert_allclose(diffusion_rate(np.full(X.shape[1], 0.7), X), math.exp(0.7))
    np.testing.assert_allclose(diffusion_rate([math.log(2)], np.ones((5, 1))), 2.0)


def test_overflow_reports_day():
    with pytest.raises(NumericOverflowError, match="day index 2"):
        diffusion_rate([1.0], np.array([[0.0], [1.0], [800.0]]))


def test_excitation_examples():
    W = build_basis(BasisSpec(1, (), (0.0, 1.0)), np.linspace(0, 1, 11))
    np.testing.assert_allclose(excitation_coeffs([0.0, 0.0], W), 1.0)
    np.testing.assert_allclose(excitation_coeffs([-0.4, -0.4], W), math.exp(-0.4))
    d = excitation_coeffs([0.0, -1.0], W)
    assert np.all(np.diff(d) < 0)
    np.testing.assert_allclose(d, np.exp(-np.linspace(0, 1, 11)))


def test_contagion_mean_hand_expansion():
    y = np.zeros(6)
    y[0] = 1
    mu = convolve_history(0.5 * y, np.array([0.8, 0.2]))
    np.testing.assert_allclose(mu, [0, 0.4, 0.1, 0, 0, 0])
    assert not contagion_mean(_series(np.zeros(5, int)), np.ones(5), DecayKernel(2, 1)).any()


def _direct_history(weighted, g):
    T = weighted.size
    out = np.zeros(T)
    for t in range(T):
        for u in range(1, min(t, g.size) + 1):
            out[t] += g[u - 1] * weighted[t - u]
    return out


@settings(max_examples=50)
@given(
    counts=st.lists(st.integers(0, 6), min_size=1, max_size=60),
    delay=st.floats(1.05, 6.0),
    scale=st.floats(0.2, 10.0),
    factor=st.floats(0.1, 4.0),
)
def test_contagion_mean_causal_linear_and_direct(counts, delay, scale, factor):
    y = np.array(counts)
    kern = DecayKernel(delay, scale)
    g = decay_weights(kern)
    delta = np.linspace(0.2, 1.5, y.size)
    mu = contagion_mean(_series(y), delta, kern)
    np.testing.assert_allclose(mu, _direct_history(delta * y, g), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(contagion_mean(_series(y), factor * delta, kern), factor * mu, rtol=1e-10, atol=1e-12)
    # causality: changing the last day never affects the mean up to that day
    y2 = y.copy()
    y2[-1] += 3
    np.testing.assert_array_equal(contagion_mean(_series(y2), delta, kern), mu)
    assert mu[0] == 0


def test_truncation_error_is_bounded():
    kern = DecayKernel(3.0, 0.5)
    rng = np.random.default_rng(0)
    y = rng.poisson(2.0, 500)
    full = decay_pmf(np.arange(1, 2000), kern)
    exact = _direct_history(y.astype(float), full)
    approx = contagion_mean(_series(y), np.ones(500), kern)
    assert np.all(approx <= exact + 1e-12)
    assert np.max(exact - approx) <= 1e-9 * y.max() + 1e-12


def test_hawkes_reduction():
    rng = np.random.default_rng(3)
    T = 200
    y = rng.poisson(1.0, T)
    beta, eta = 0.2, math.log(0.6)
    kern = DecayKernel(2.0, 1.5)
    X = build_basis(constant_spec(0, T - 1), np.arange(T, dtype=float))
    W = build_basis(constant_spec(0, 1), np.zeros(T))
    lam = conditional_intensity(ModelParams([beta], [eta], kern, 2.0), _series(y), X, W)
    # classic discrete Hawkes recursion with baseline e^beta, branching ratio e^eta
    g = decay_pmf(np.arange(1, T + 1), kern)
    ref = np.array([math.exp(beta) + 0.6 * sum(g[t - s - 1] * y[s] for s in range(t)) for t in range(T)])
    np.testing.assert_allclose(lam, ref, rtol=1e-8)


def test_conditional_intensity_is_sum():
    rng = np.random.default_rng(4)
    T = 80
    y = rng.poisson(0.8, T)
    X = build_basis(equally_spaced_spec(0, T - 1, 2), np.arange(T, dtype=float))
    W = build_basis(BasisSpec(1, (), (0.0, 2.0)), np.clip(rng.random(T) * 2, 0, 2))
    p = ModelParams(rng.normal(size=X.shape[1]), rng.normal(size=2) - 1, DecayKernel(2.2, 1.1), 1.0)
    lam = conditional_intensity(p, _series(y), X, W)
    expect = diffusion_rate(p.beta, X) + contagion_mean(_series(y), excitation_coeffs(p.eta, W), p.kernel)
    np.testing.assert_allclose(lam, expect)


def test_loglik_diffusion_examples():
    assert loglik_diffusion(np.zeros(10), np.ones(10)) == pytest.approx(-10.0)
    assert loglik_diffusion([3], [2.0]) == pytest.approx(-1.712317927548219, abs=1e-12)
    rng = np.random.default_rng(5)
    y, lam = rng.poisson(2, 40), rng.random(40) + 0.5
    assert loglik_diffusion(y, lam) == pytest.approx(loglik_diffusion(y[:15], lam[:15]) + loglik_diffusion(y[15:], lam[15:]))


def test_loglik_contagion_examples():
    mu = np.array([0.5, 2.0])
    assert loglik_contagion(np.zeros(2), mu, 3.0) == pytest.approx(-1.9949289107797472, abs=1e-12)
    assert loglik_contagion(np.zeros(3), np.zeros(3), 2.0) == 0.0
    assert loglik_contagion([1, 0], [0.0, 1.0], 2.0) == -math.inf


@settings(max_examples=40)
@given(seed=st.integers(0, 10**6), s2=st.floats(0.05, 20.0))
def test_mu_terms_differ_from_full_loglik_by_constant(seed, s2):
    rng = np.random.default_rng(seed)
    T = 40
    y = rng.poisson(1.5, T).astype(float)
    g = decay_weights(DecayKernel(1.8, 2.0))
    w1, w2 = rng.random(T) * y, rng.random(T) * y
    Yc = np.minimum(y, rng.poisson(0.5, T)).astype(float)
    Yc[0] = 0
    mu1, mu2 = convolve_history(w1, g), convolve_history(w2, g)
    full = loglik_contagion(Yc, mu1, s2) - loglik_contagion(Yc, mu2, s2)
    if not math.isfinite(full):
        return
    part = nb_mean_terms(Yc, mu1, s2) - nb_mean_terms(Yc, mu2, s2)
    jit = contagion_terms_jit(w1, g, Yc, s2) - contagion_terms_jit(w2, g, Yc, s2)
    assert part == pytest.approx(full, abs=1e-8)
    assert jit == pytest.approx(full, abs=1e-8)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    T = 120
    X = build_basis(equally_spaced_spec(0, T - 1, 2), np.arange(T, dtype=float))
    fat = rng.poisson(2, T)
    y = rng.poisson(1.2, T)
    fat[y == 0] = 0
    wspec = BasisSpec(1, (), (0.0, float(np.log1p(fat.max()))))
    W = build_basis(wspec, np.log1p(fat))
    p0 = ModelParams(rng.normal(0, 0.3, X.shape[1]), [-0.5, -0.9], DecayKernel(2.3, 1.7), 1.4)
    mu0 = contagion_mean(_series(y, fat), excitation_coeffs(p0.eta, W), p0.kernel)
    Yc = np.where(mu0 > 0, rng.binomial(y, 0.4), 0)
    Yd = y - Yc
    nb_, ne_ = X.shape[1], 2

    def f(v):
        p = ModelParams(
            v[:nb_], v[nb_ : nb_ + ne_], DecayKernel(1 + math.exp(v[-2]), math.exp(v[-1])), math.exp(v[-3])
        )
        g = decay_pmf(np.arange(1, decay_weights(p0.kernel).size + 1), p.kernel)
        mu = convolve_history(excitation_coeffs(p.eta, W) * y, g)
        return loglik_diffusion(Yd, diffusion_rate(p.beta, X)) + loglik_contagion(Yc, mu, p.sigma2)

    v0 = np.r_[p0.beta, p0.eta, math.log(1.4), math.log(1.3), math.log(1.7)]
    grad = loglik_gradient(p0, Yd, Yc, y, X, W)
    h = 1e-6
    fd = np.array([(f(v0 + h * e) - f(v0 - h * e)) / (2 * h) for e in np.eye(v0.size)])
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-5)
