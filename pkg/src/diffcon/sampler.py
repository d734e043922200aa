"""Data-augmentation MCMC for the diffusion/contagion convolution model.

Each sweep attributes the observed daily counts to the two processes by
binomial thinning, then updates the parameters of each process from its own
share of the data. Non-conjugate blocks use slice sampling (hit-and-run for
the spline coefficients); the spline blocks are followed by a random-walk
re-sampling move that counters the mass trade-off between the processes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from ._kernels import contagion_terms_jit
from .basis import penalty_for
from .distributions import (
    DecayKernel,
    binomial_sample,
    decay_weights,
    gamma_sample,
    random_direction,
    slice_sample,
)
from .model import (
    ModelParams,
    convolve_history,
    diffusion_rate,
    excitation_coeffs,
    param_names,
)

log = logging.getLogger(__name__)

# slice bounds for log-transformed positive parameters
LOG_BOUND = 30.0
SLICE_BLOCKS = ("beta", "eta", "phi.mean", "phi.scale", "sigma2")
# slice width = WIDTH_FACTOR x mean absolute move over an adaptation window
WIDTH_FACTOR = 3.0
MIN_WIDTH, MAX_WIDTH = 1e-3, 10.0
_TINY = np.finfo(float).tiny


class SamplerError(RuntimeError):
    pass


class InconsistentStateError(ValueError):
    pass


@dataclass
class LatentState:
    Yd: np.ndarray
    Yc: np.ndarray
    lam_c: np.ndarray

    def copy(self) -> "LatentState":
        return LatentState(self.Yd.copy(), self.Yc.copy(), self.lam_c.copy())


@dataclass
class ChainConfig:
    n_iterations: int = 20_000
    n_burnin: int = 5_000
    thin_every: int = 5
    rng_seed: int = 0
    adapt_window: int = 50
    target_accept: tuple[float, float] = (0.20, 0.40)
    hyperprior_a: float = 1.0
    hyperprior_b: float = 0.005
    # include the prior ratio in the re-sampling acceptance (exact Metropolis step)
    include_prior_in_resample: bool = False
    initial_step: float = 0.05
    slice_width: float = 1.0
    store_latents: bool = True
    log_every: int = 1000
    # optional Gaussian prior on the spline level (the penalty's constant null
    # space), which makes the spline priors proper; zero by default
    beta_ridge: float = 0.0
    beta_center: float = 0.0
    eta_ridge: float = 0.0
    eta_center: float = 0.0

    def __post_init__(self):
        if not (0 <= self.n_burnin < self.n_iterations):
            raise ValueError("need 0 <= n_burnin < n_iterations")
        if self.thin_every < 1 or self.adapt_window < 1:
            raise ValueError("thin_every and adapt_window must be positive")
        lo, hi = self.target_accept
        if not 0 < lo < hi < 1:
            raise ValueError("target acceptance range must lie inside (0, 1)")
        self.target_accept = (float(lo), float(hi))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_accept"] = list(self.target_accept)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        d = dict(d)
        if "target_accept" in d:
            d["target_accept"] = tuple(d["target_accept"])
        return cls(**d)


@dataclass
class Priors:
    """Prior constants for one model shape."""

    K: np.ndarray
    B: np.ndarray
    hyper_a: float = 1.0
    hyper_b: float = 0.005
    beta_ridge: float = 0.0
    beta_center: float = 0.0
    eta_ridge: float = 0.0
    eta_center: float = 0.0

    @classmethod
    def from_config(cls, config: ChainConfig, n_beta: int, n_eta: int) -> "Priors":
        return cls(
            penalty_for(n_beta),
            penalty_for(n_eta),
            config.hyperprior_a,
            config.hyperprior_b,
            config.beta_ridge,
            config.beta_center,
            config.eta_ridge,
            config.eta_center,
        )

    @property
    def rank_K(self) -> int:
        return max(self.K.shape[0] - 1, 0) if self.K.any() else 0

    @property
    def rank_B(self) -> int:
        return max(self.B.shape[0] - 1, 0) if self.B.any() else 0

    def log_prior_beta(self, beta, rho) -> float:
        return _gauss_log_prior(beta, self.K, rho, self.beta_ridge, self.beta_center)

    def log_prior_eta(self, eta, gamma) -> float:
        return _gauss_log_prior(eta, self.B, gamma, self.eta_ridge, self.eta_center)


def _gauss_log_prior(x, P, weight, ridge, center) -> float:
    out = -0.5 * weight * float(x @ P @ x)
    if ridge:
        out -= 0.5 * ridge * x.size * float(np.mean(x) - center) ** 2
    return out


@dataclass
class PosteriorDraws:
    params: list[ModelParams]
    latents: list[LatentState]
    accept_stats: dict
    seed: int
    config: dict
    n_beta: int
    n_eta: int

    def __len__(self):
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return param_names(self.n_beta, self.n_eta)

    def array(self) -> np.ndarray:
        if not self.params:
            return np.empty((0, len(self.names)))
        return np.vstack([p.flat() for p in self.params])

    def column(self, name: str) -> np.ndarray:
        return self.array()[:, self.names.index(name)]


@dataclass
class ChainState:
    """Mutable state of one chain: data, design matrices, parameters, latents."""

    y: np.ndarray
    X: np.ndarray
    W: np.ndarray
    params: ModelParams
    latent: LatentState

    @property
    def lam_d(self) -> np.ndarray:
        return diffusion_rate(self.params.beta, self.X)

    @property
    def delta(self) -> np.ndarray:
        return excitation_coeffs(self.params.eta, self.W)

    def mu_c(self, kernel: DecayKernel | None = None) -> np.ndarray:
        g = decay_weights(kernel or self.params.kernel)
        return convolve_history(self.delta * self.y, g)


# --- conjugate and thinning steps -------------------------------------------


def thin_counts(series, lam_d, lam_c, rng):
    """Split each day's total into diffusion and contagion counts."""
    y = np.asarray(getattr(series, "counts", series), dtype=np.int64)
    lam_d = np.asarray(lam_d, dtype=float)
    lam_c = np.asarray(lam_c, dtype=float)
    total = lam_d + lam_c
    bad = (total <= 0) & (y > 0)
    if np.any(bad):
        raise InconsistentStateError(f"zero total rate with events on day {np.flatnonzero(bad)[0]}")
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(total > 0, lam_d / total, 1.0)
    Yd = binomial_sample(y, np.clip(p, 0.0, 1.0), rng)
    return Yd, y - Yd


def update_lam_c(Yc, mu_c, sigma2, rng):
    """Conjugate gamma draw of the latent contagion rates."""
    Yc = np.asarray(Yc)
    mu_c = np.asarray(mu_c, dtype=float)
    pos = mu_c > 0
    if np.any(~pos & (Yc > 0)):
        raise InconsistentStateError("contagion events on a day with zero expected contagion")
    out = np.zeros(mu_c.shape)
    if pos.any():
        with np.errstate(over="ignore"):  # subnormal mu gives an infinite rate and a zero draw
            draw = gamma_sample(sigma2 + Yc[pos], sigma2 / mu_c[pos] + 1.0, rng)
        # shape << 1 can underflow to exactly zero; keep the rate strictly positive
        out[pos] = np.maximum(draw, _TINY)
    return out


def update_rho(beta, K, hyper_a, hyper_b, rng, rank=None):
    """Conjugate gamma draw of a random-walk smoothing weight."""
    beta = np.asarray(beta, dtype=float)
    if rank is None:
        rank = np.linalg.matrix_rank(K) if np.any(K) else 0
    shape = hyper_a + 0.5 * rank
    rate = hyper_b + 0.5 * float(beta @ K @ beta)
    return float(gamma_sample(shape, rate, rng))


update_gamma = update_rho


# --- random-walk re-sampling ---------------------------------------------------


def resample_identify(loglik, current, step, rng, log_prior=None, logl_current=None):
    """Gaussian random-walk move accepted on the likelihood ratio.

    With ``log_prior`` the prior ratio is included as well, which makes the
    move an exact Metropolis step. Returns ``(value, accepted)``.
    """
    current = np.asarray(current, dtype=float)
    proposal = current + step * rng.standard_normal(current.size)
    l0 = loglik(current) if logl_current is None else logl_current
    l1 = loglik(proposal)
    log_ratio = l1 - l0
    if log_prior is not None:
        log_ratio += log_prior(proposal) - log_prior(current)
    if not math.isnan(log_ratio) and math.log(rng.random()) < log_ratio:
        return proposal, True
    return current, False


def adapt_step(accept_rate, step, target=(0.20, 0.40)):
    lo, hi = target
    if accept_rate > hi:
        return step * 1.25
    if accept_rate < lo:
        return step * 0.8
    return step


# --- block updates -------------------------------------------------------------


def _poisson_block_loglik(Yd, X):
    def loglik(beta):
        lin = X @ beta
        if lin.max() > 709.0:
            return -math.inf
        return float(Yd @ lin - np.exp(lin).sum())

    return loglik


def update_beta(state: ChainState, priors: Priors, rng, width=1.0):
    """Hit-and-run slice update of the diffusion coefficients given ``Yd``."""
    p = state.params
    beta = p.beta
    Yd = state.latent.Yd.astype(float)
    d = random_direction(beta.size, rng)
    a, b = state.X @ beta, state.X @ d
    ya, yb = float(Yd @ a), float(Yd @ b)
    Kb, Kd = priors.K @ beta, priors.K @ d
    q0, q1, q2 = float(beta @ Kb), float(d @ Kb), float(d @ Kd)
    lv, ld = float(beta.mean()) - priors.beta_center, float(d.mean())
    rho, tau = p.rho, priors.beta_ridge * beta.size

    def target(r):
        lin = a + r * b
        if lin.max() > 709.0:
            return -math.inf
        out = ya + r * yb - np.exp(lin).sum()
        out -= 0.5 * rho * (q0 + 2 * r * q1 + r * r * q2)
        out -= 0.5 * tau * (lv + r * ld) ** 2
        return out

    r = slice_sample(target, 0.0, width=width, rng=rng)
    return beta + r * d


def _contagion_inputs(state: ChainState):
    pos = state.y > 0
    return pos, state.y[pos], state.latent.Yc.astype(float)


def update_eta(state: ChainState, priors: Priors, rng, width=1.0):
    """Hit-and-run slice update of the excitation coefficients given ``Yc``."""
    p = state.params
    eta = p.eta
    pos, ypos, Yc = _contagion_inputs(state)
    g = decay_weights(p.kernel)
    d = random_direction(eta.size, rng)
    Wp = state.W[pos]
    a, b = Wp @ eta, Wp @ d
    Bb, Bd = priors.B @ eta, priors.B @ d
    q0, q1, q2 = float(eta @ Bb), float(d @ Bb), float(d @ Bd)
    lv, ld = float(eta.mean()) - priors.eta_center, float(d.mean())
    gam, tau, s2 = p.gamma, priors.eta_ridge * eta.size, p.sigma2
    weighted = np.zeros(state.y.size)

    def target(r):
        lin = a + r * b
        if lin.size and lin.max() > 709.0:
            return -math.inf
        weighted[pos] = np.exp(lin) * ypos
        out = contagion_terms_jit(weighted, g, Yc, s2)
        out -= 0.5 * gam * (q0 + 2 * r * q1 + r * r * q2)
        out -= 0.5 * tau * (lv + r * ld) ** 2
        return out

    r = slice_sample(target, 0.0, width=width, rng=rng)
    return eta + r * d


def _eta_block_loglik(state: ChainState):
    pos, ypos, Yc = _contagion_inputs(state)
    g = decay_weights(state.params.kernel)
    Wp = state.W[pos]
    s2 = state.params.sigma2
    weighted = np.zeros(state.y.size)

    def loglik(eta):
        lin = Wp @ eta
        if lin.size and lin.max() > 709.0:
            return -math.inf
        weighted[pos] = np.exp(lin) * ypos
        return contagion_terms_jit(weighted, g, Yc, s2)

    return loglik


def _log_half_cauchy_like(x):
    """Log of the ``1 / (1 + x)**2`` prior density on a positive parameter."""
    return -2.0 * math.log1p(x)


def update_phi(state: ChainState, priors: Priors, rng, width=1.0) -> DecayKernel:
    """Slice-sample the decay kernel's two parameters on the log scale.

    The ``1/(1+x)^2`` prior applies to the mean of the unshifted negative
    binomial (``delay_mean - 1``) and to the scale. ``width`` is one slice
    width or a ``(mean, scale)`` pair.
    """
    w_m, w_s = (width, width) if np.isscalar(width) else width
    kern = state.params.kernel
    dy = state.delta * state.y
    Yc = state.latent.Yc.astype(float)
    s2 = state.params.sigma2

    def loglik(k: DecayKernel):
        return contagion_terms_jit(dy, decay_weights(k), Yc, s2)

    m, s = kern.delay_mean - 1.0, kern.scale

    def target_m(z):
        mz = math.exp(z)
        return loglik(DecayKernel(1.0 + mz, s)) + _log_half_cauchy_like(mz) + z

    zm = slice_sample(target_m, _clamp_log(m), width=w_m, bounds=(-LOG_BOUND, LOG_BOUND), rng=rng)
    m = math.exp(zm)

    def target_s(z):
        sz = math.exp(z)
        return loglik(DecayKernel(1.0 + m, sz)) + _log_half_cauchy_like(sz) + z

    zs = slice_sample(target_s, _clamp_log(s), width=w_s, bounds=(-LOG_BOUND, LOG_BOUND), rng=rng)
    return DecayKernel(1.0 + m, math.exp(zs))


def _clamp_log(x):
    return min(max(math.log(x), -LOG_BOUND), LOG_BOUND)


def update_sigma2(state: ChainState, priors: Priors, rng, width=1.0, mu_c=None) -> float:
    """Slice-sample ``log sigma2`` against the gamma layer of the latent rates."""
    mu = state.mu_c() if mu_c is None else mu_c
    pos = mu > 0
    lam = state.latent.lam_c[pos]
    n = int(pos.sum())
    A = float(np.log(mu[pos]).sum())
    Bl = float(np.log(lam).sum())
    C = float((lam / mu[pos]).sum())

    def target(z):
        s = math.exp(z)
        return n * (s * z - gammaln(s)) - s * A + s * Bl - s * C + _log_half_cauchy_like(s) + z

    z = slice_sample(
        target, _clamp_log(state.params.sigma2), width=width, bounds=(-LOG_BOUND, LOG_BOUND), rng=rng
    )
    return math.exp(z)


# --- initialisation and prior draws --------------------------------------------


def initial_params(series, X, W, window: int = 31) -> ModelParams:
    """Scale-aware starting point: beta fitted to the log smoothed daily mean."""
    y = np.asarray(getattr(series, "counts", series), dtype=float)
    Xv = getattr(X, "values", X)
    Wv = getattr(W, "values", W)
    w = min(window, y.size)
    kernel = np.ones(w) / w
    smooth = np.convolve(y, kernel, mode="same") / np.convolve(np.ones_like(y), kernel, mode="same")
    target = np.log(np.maximum(smooth, 1e-3))
    beta = np.linalg.lstsq(Xv, target, rcond=None)[0]
    return ModelParams(beta, np.zeros(Wv.shape[1]), DecayKernel(2.0, 1.0), 1.0, 1.0, 1.0)


def sample_prior(priors: Priors, rng) -> ModelParams:
    """Draw one parameter vector from the prior; needs proper (ridged) spline priors."""
    if priors.beta_ridge <= 0 or priors.eta_ridge <= 0:
        raise ValueError("spline priors are improper without a ridge component")
    rho = float(gamma_sample(priors.hyper_a, priors.hyper_b, rng))
    gam = float(gamma_sample(priors.hyper_a, priors.hyper_b, rng))

    def gauss(P, w, tau, c):
        n = P.shape[0]
        prec = w * P + tau * np.ones((n, n)) / n
        L = np.linalg.cholesky(prec)
        return c + np.linalg.solve(L.T, rng.standard_normal(n))

    beta = gauss(priors.K, rho, priors.beta_ridge, priors.beta_center)
    eta = gauss(priors.B, gam, priors.eta_ridge, priors.eta_center)

    def half(u):  # inverse cdf of x/(1+x)
        return u / (1.0 - u)

    m, s, s2 = (min(max(half(rng.random()), math.exp(-LOG_BOUND)), math.exp(LOG_BOUND)) for _ in range(3))
    return ModelParams(beta, eta, DecayKernel(1.0 + m, s), s2, rho, gam)


# --- the chain -------------------------------------------------------------------


class GibbsSampler:
    """One chain. ``sweep`` advances it by one full scan of all blocks."""

    def __init__(self, series, X, W, config: ChainConfig, init: ModelParams | None = None):
        self.config = config
        y = np.asarray(getattr(series, "counts", series), dtype=float)
        if y.size == 0:
            raise ValueError("empty series")
        Xv = np.asarray(getattr(X, "values", X), dtype=float)
        Wv = np.asarray(getattr(W, "values", W), dtype=float)
        if Xv.shape[0] != y.size or Wv.shape[0] != y.size:
            raise ValueError("design matrices must have one row per day")
        params = init if init is not None else initial_params(y, Xv, Wv)
        if params.beta.size != Xv.shape[1] or params.eta.size != Wv.shape[1]:
            raise ValueError("coefficient lengths do not match the design matrices")
        self.priors = Priors.from_config(config, Xv.shape[1], Wv.shape[1])
        self.rng = np.random.default_rng(config.rng_seed)
        latent = LatentState(y.astype(np.int64), np.zeros(y.size, dtype=np.int64), np.zeros(y.size))
        self.state = ChainState(y, Xv, Wv, params, latent)
        self.state.latent.lam_c = self.state.mu_c()
        self.steps = {"beta": config.initial_step, "eta": config.initial_step}
        self._window = {"beta": [0, 0], "eta": [0, 0]}
        self.accept = {"beta": [0, 0], "eta": [0, 0]}
        # slice widths, tuned during burn-in to the typical move size
        self.widths = dict.fromkeys(SLICE_BLOCKS, config.slice_width)
        self._moves = {k: [0.0, 0] for k in SLICE_BLOCKS}
        # with no events and a flat prior level, eta's conditional is improper; leave it alone
        self._eta_identified = bool(np.any(y > 0)) or self.priors.eta_ridge > 0
        self.iteration = 0

    def _record_move(self, name, distance, adapt):
        if not adapt:
            return
        acc = self._moves[name]
        acc[0] += distance
        acc[1] += 1
        if acc[1] >= self.config.adapt_window:
            self.widths[name] = min(max(WIDTH_FACTOR * acc[0] / acc[1], MIN_WIDTH), MAX_WIDTH)
            acc[0], acc[1] = 0.0, 0

    def _resample(self, name, value, loglik, log_prior, adapt):
        lp = log_prior if self.config.include_prior_in_resample else None
        value, ok = resample_identify(loglik, value, self.steps[name], self.rng, log_prior=lp)
        win = self._window[name]
        win[0] += ok
        win[1] += 1
        if not adapt:
            self.accept[name][0] += ok
            self.accept[name][1] += 1
        elif win[1] >= self.config.adapt_window:
            self.steps[name] = adapt_step(win[0] / win[1], self.steps[name], self.config.target_accept)
            win[0] = win[1] = 0
        return value

    def sweep(self, adapt: bool = False):
        st, pr, rng, w = self.state, self.priors, self.rng, self.widths
        block = "thin"
        try:
            Yd, Yc = thin_counts(st.y.astype(np.int64), st.lam_d, st.latent.lam_c, rng)
            st.latent.Yd, st.latent.Yc = Yd, Yc

            block = "beta"
            beta = update_beta(st, pr, rng, w["beta"])
            self._record_move("beta", float(np.linalg.norm(beta - st.params.beta)), adapt)
            rho = st.params.rho
            beta = self._resample(
                "beta",
                beta,
                _poisson_block_loglik(Yd.astype(float), st.X),
                lambda b: pr.log_prior_beta(b, rho),
                adapt,
            )
            st.params = st.params.replace(beta=beta)

            block = "eta"
            if self._eta_identified:
                eta = update_eta(st, pr, rng, w["eta"])
                self._record_move("eta", float(np.linalg.norm(eta - st.params.eta)), adapt)
                st.params = st.params.replace(eta=eta)
                gam = st.params.gamma
                eta = self._resample(
                    "eta", eta, _eta_block_loglik(st), lambda e: pr.log_prior_eta(e, gam), adapt
                )
                st.params = st.params.replace(eta=eta)

            block = "phi"
            old = st.params.kernel
            new = update_phi(st, pr, rng, (w["phi.mean"], w["phi.scale"]))
            self._record_move("phi.mean", abs(math.log((new.delay_mean - 1) / (old.delay_mean - 1))), adapt)
            self._record_move("phi.scale", abs(math.log(new.scale / old.scale)), adapt)
            st.params = st.params.replace(kernel=new)

            block = "lam_c"
            mu = st.mu_c()
            st.latent.lam_c = update_lam_c(Yc, mu, st.params.sigma2, rng)

            block = "sigma2"
            s2 = update_sigma2(st, pr, rng, w["sigma2"], mu_c=mu)
            self._record_move("sigma2", abs(math.log(s2 / st.params.sigma2)), adapt)
            st.params = st.params.replace(sigma2=s2)

            block = "rho"
            rho = update_rho(st.params.beta, pr.K, pr.hyper_a, pr.hyper_b, rng, pr.rank_K)
            block = "gamma"
            gam = update_gamma(st.params.eta, pr.B, pr.hyper_a, pr.hyper_b, rng, pr.rank_B)
            st.params = st.params.replace(rho=rho, gamma=gam)
        except SamplerError:
            raise
        except Exception as exc:  # noqa: BLE001 - rewrapped with location
            raise SamplerError(f"iteration {self.iteration}, block {block}: {exc}") from exc
        self.iteration += 1

    def accept_stats(self) -> dict:
        out = {}
        for name, (acc, tot) in self.accept.items():
            out[name] = {
                "accepted": acc,
                "proposed": tot,
                "rate": acc / tot if tot else float("nan"),
                "step": self.steps[name],
            }
        return out


def run_chain(series, X, W, config: ChainConfig, init: ModelParams | None = None) -> PosteriorDraws:
    """Run one chain and keep thinned post-burn-in draws."""
    sampler = GibbsSampler(series, X, W, config, init)
    params, latents = [], []
    for i in range(config.n_iterations):
        burn = i < config.n_burnin
        sampler.sweep(adapt=burn)
        if not burn and (i - config.n_burnin) % config.thin_every == 0:
            params.append(sampler.state.params)
            if config.store_latents:
                latents.append(sampler.state.latent.copy())
        if config.log_every and (i + 1) % config.log_every == 0:
            log.info("seed %d: iteration %d/%d", config.rng_seed, i + 1, config.n_iterations)
    return PosteriorDraws(
        params,
        latents,
        sampler.accept_stats(),
        config.rng_seed,
        config.to_dict(),
        sampler.state.X.shape[1],
        sampler.state.W.shape[1],
    )
