"""Deterministic model quantities: rates, excitation, intensity, likelihoods."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import digamma, xlogy

from .distributions import DecayKernel, decay_weights, nb_logpmf, poisson_logpmf

# exp() overflows just above this
_MAX_LOG = 709.0


class NumericOverflowError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelParams:
    beta: np.ndarray
    eta: np.ndarray
    kernel: DecayKernel
    sigma2: float
    rho: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float).reshape(-1))
        for name in ("sigma2", "rho", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def flat(self) -> np.ndarray:
        return np.r_[
            self.beta,
            self.eta,
            self.kernel.delay_mean,
            self.kernel.scale,
            self.sigma2,
            self.rho,
            self.gamma,
        ]

    @classmethod
    def from_flat(cls, values, n_beta: int, n_eta: int) -> "ModelParams":
        v = np.asarray(values, dtype=float)
        i = n_beta + n_eta
        return cls(v[:n_beta], v[n_beta:i], DecayKernel(v[i], v[i + 1]), v[i + 2], v[i + 3], v[i + 4])


def param_names(n_beta: int, n_eta: int) -> list[str]:
    return (
        [f"beta.{i}" for i in range(n_beta)]
        + [f"eta.{i}" for i in range(n_eta)]
        + ["phi.mean", "phi.scale", "sigma2", "rho", "gamma"]
    )


@dataclass
class EventSeries:
    """Daily event counts and summed fatalities starting at ``start_date``."""

    start_date: dt.date
    counts: np.ndarray
    fatalities: np.ndarray
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.fatalities = np.asarray(self.fatalities, dtype=np.int64)
        if self.counts.shape != self.fatalities.shape or self.counts.ndim != 1:
            raise ValueError("counts and fatalities must be 1-d arrays of equal length")
        if np.any(self.counts < 0) or np.any(self.fatalities < 0):
            raise ValueError("counts and fatalities must be nonnegative")
        if np.any((self.counts == 0) & (self.fatalities > 0)):
            raise ValueError("fatalities recorded on a day without events")

    def __len__(self):
        return self.counts.size

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(len(self))]

    @property
    def log_fatalities(self) -> np.ndarray:
        return np.log1p(self.fatalities)


def _values(M):
    return getattr(M, "values", M)


def _counts(series):
    return np.asarray(getattr(series, "counts", series), dtype=float)


def _checked_exp(lin, what):
    over = np.flatnonzero(lin > _MAX_LOG)
    if over.size:
        raise NumericOverflowError(f"{what} overflows at day index {over[0]}")
    return np.exp(lin)


def diffusion_rate(beta, X) -> np.ndarray:
    """Diffusion rate ``exp(X beta)`` per day."""
    return _checked_exp(_values(X) @ np.asarray(beta, dtype=float), "diffusion rate")


def excitation_coeffs(eta, W) -> np.ndarray:
    """Expected number of contagion children per event, ``exp(W eta)``."""
    return _checked_exp(_values(W) @ np.asarray(eta, dtype=float), "excitation coefficient")


def convolve_history(weighted, g) -> np.ndarray:
    """``out[t] = sum_{u=1}^{U} g[u-1] * weighted[t-u]`` with zero pre-sample history."""
    weighted = np.asarray(weighted, dtype=float)
    T = weighted.size
    out = np.zeros(T)
    if T > 1:
        out[1:] = np.convolve(weighted[:-1], g)[: T - 1]
    return out


def contagion_mean(series, delta, kernel: DecayKernel, g=None) -> np.ndarray:
    """Expected contagion count per day from earlier events.

    ``g`` may carry precomputed truncated kernel weights.
    """
    y = _counts(series)
    delta = np.asarray(delta, dtype=float)
    if delta.shape != y.shape:
        raise ValueError("delta must have one entry per day")
    if g is None:
        g = decay_weights(kernel)
    return convolve_history(delta * y, g)


def conditional_intensity(params: ModelParams, series, X, W) -> np.ndarray:
    lam_d = diffusion_rate(params.beta, X)
    delta = excitation_coeffs(params.eta, W)
    return lam_d + contagion_mean(series, delta, params.kernel)


def loglik_diffusion(Yd, lam_d) -> float:
    return float(np.sum(poisson_logpmf(Yd, lam_d)))


def loglik_contagion(Yc, mu_c, sigma2: float) -> float:
    """Negative-binomial log-likelihood of the contagion partition.

    Days with zero expected contagion contribute nothing when empty and make
    the whole likelihood ``-inf`` otherwise.
    """
    Yc = np.asarray(Yc)
    mu_c = np.asarray(mu_c, dtype=float)
    if np.any((mu_c == 0) & (Yc > 0)):
        return -np.inf
    return float(np.sum(nb_logpmf(Yc, mu_c, sigma2)))


def nb_mean_terms(Yc, mu_c, sigma2: float) -> float:
    """Contagion log-likelihood up to terms that do not involve ``mu_c``.

    Cheaper inner loop for the updates that hold ``sigma2`` fixed.
    """
    with np.errstate(divide="ignore"):
        return float(
            np.sum(xlogy(Yc, mu_c) - (sigma2 + Yc) * np.log(sigma2 + mu_c))
            + Yc.size * sigma2 * np.log(sigma2)
        )


def loglik_gradient(params: ModelParams, Yd, Yc, counts, X, W) -> np.ndarray:
    """Gradient of ``loglik_diffusion + loglik_contagion``.

    Coordinates: ``beta``, ``eta``, ``log sigma2``, ``log(delay_mean - 1)``,
    ``log scale``. Horizon truncation is held fixed.
    """
    Xv, Wv = _values(X), _values(W)
    Yd = np.asarray(Yd, dtype=float)
    Yc = np.asarray(Yc, dtype=float)
    y = np.asarray(counts, dtype=float)
    lam_d = diffusion_rate(params.beta, Xv)
    g_beta = Xv.T @ (Yd - lam_d)

    kern = params.kernel
    g = decay_weights(kern)
    u0 = np.arange(g.size, dtype=float)  # shifted delay u - 1
    m, s = kern.delay_mean - 1.0, kern.scale
    dlogg_dm = u0 / m - (s + u0) / (s + m)
    dlogg_ds = digamma(u0 + s) - digamma(s) + np.log(s / (s + m)) + (m - u0) / (s + m)

    delta = excitation_coeffs(params.eta, Wv)
    dy = delta * y
    mu = convolve_history(dy, g)
    s2 = params.sigma2
    # d loglik / d mu_t for NB(mu, s2)
    with np.errstate(divide="ignore", invalid="ignore"):
        dl_dmu = np.where(mu > 0, Yc / mu - (s2 + Yc) / (s2 + mu), 0.0)
    # d mu_t / d eta = sum_u g(u) delta_{t-u} y_{t-u} w_{t-u}: adjoint of the convolution
    T = y.size
    back = np.zeros(T)
    if T > 1:
        back[:-1] = np.correlate(np.r_[dl_dmu[1:], np.zeros(g.size - 1)], g, mode="valid")
    g_eta = Wv.T @ (back * dy)
    d_mu_dm = convolve_history(dy, g * dlogg_dm)
    d_mu_ds = convolve_history(dy, g * dlogg_ds)
    g_logm = m * float(dl_dmu @ d_mu_dm)
    g_logs = s * float(dl_dmu @ d_mu_ds)
    with np.errstate(divide="ignore", invalid="ignore"):
        dl_ds2 = np.where(
            mu > 0,
            digamma(Yc + s2) - digamma(s2) + np.log(s2 / (s2 + mu)) + (mu - Yc) / (s2 + mu),
            0.0,
        )
    g_logs2 = s2 * float(dl_ds2.sum())
    return np.r_[g_beta, g_eta, g_logs2, g_logm, g_logs]


__all__ = [
    "ModelParams",
    "EventSeries",
    "NumericOverflowError",
    "param_names",
    "diffusion_rate",
    "excitation_coeffs",
    "convolve_history",
    "contagion_mean",
    "conditional_intensity",
    "loglik_diffusion",
    "loglik_contagion",
    "nb_mean_terms",
    "loglik_gradient",
]
