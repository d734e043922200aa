"""Probability kernels used throughout the model.

Count distributions use the mean/scale parametrisation of the negative
binomial: mean ``m`` and scale ``s`` give variance ``m + m**2 / s``, which is
the marginal of a Poisson whose rate is gamma distributed with shape ``s`` and
expectation ``m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln, xlogy
from scipy.stats import nbinom

from ._kernels import decay_weights_jit

#: Tail mass left beyond the decay-kernel truncation horizon.
DECAY_TAIL_TOL = 1e-9
#: Hard cap on the decay-kernel horizon, in days.
MAX_DECAY_HORIZON = 365


@dataclass(frozen=True)
class NegBinomMeanScale:
    mean: float
    scale: float

    def __post_init__(self):
        if not (self.mean > 0 and self.scale > 0):
            raise ValueError(f"mean and scale must be positive, got {self.mean}, {self.scale}")

    @property
    def variance(self) -> float:
        return self.mean + self.mean**2 / self.scale


@dataclass(frozen=True)
class DecayKernel:
    """Shifted negative binomial pmf over delays of 1, 2, ... days.

    ``delay_mean`` is the expected delay; the underlying negative binomial on
    {0, 1, ...} has mean ``delay_mean - 1`` and the given ``scale``.
    """

    delay_mean: float
    scale: float

    def __post_init__(self):
        if not self.delay_mean > 1:
            raise ValueError(f"delay_mean must exceed 1, got {self.delay_mean}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


def poisson_logpmf(y, rate):
    """Poisson log-pmf, vectorised; ``rate == 0`` is a point mass at zero."""
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0):
        raise ValueError("Poisson rate must be nonnegative")
    y = np.asarray(y, dtype=float)
    out = xlogy(y, rate) - rate - gammaln(y + 1.0)
    return out if out.ndim else float(out)


def nb_logpmf(y, mean, scale):
    """Vectorised negative-binomial log-pmf in the mean/scale parametrisation.

    ``mean == 0`` is treated as a point mass at zero.
    """
    y = np.asarray(y, dtype=float)
    m = np.asarray(mean, dtype=float)
    s = np.asarray(scale, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            gammaln(y + s)
            - gammaln(s)
            - gammaln(y + 1.0)
            - s * np.log1p(m / s)
            + xlogy(y, m)
            - y * np.log(s + m)
        )
    out = np.where(m == 0, np.where(y == 0, 0.0, -np.inf), out)
    return out if out.ndim else float(out)


def negbinom_logpmf(y, dist: NegBinomMeanScale):
    return nb_logpmf(y, dist.mean, dist.scale)


def gamma_sample(shape, rate, rng: np.random.Generator, size=None):
    """Gamma draw with expectation ``shape / rate``."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise ValueError("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / rate, size=size)


def binomial_sample(n, p, rng: np.random.Generator, size=None):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("binomial probability must lie in [0, 1]")
    if np.any(np.asarray(n) < 0):
        raise ValueError("binomial n must be nonnegative")
    return rng.binomial(n, p, size=size)


def _decay_logpmf_from_zero(k, kernel: DecayKernel):
    return nb_logpmf(k, kernel.delay_mean - 1.0, kernel.scale)


def decay_weights(kernel: DecayKernel) -> np.ndarray:
    """Return ``g(1), ..., g(U)`` truncated at the horizon ``U``.

    ``U`` is the smallest horizon whose cumulative mass reaches
    ``1 - DECAY_TAIL_TOL``, capped at ``MAX_DECAY_HORIZON``.
    """
    return decay_weights_jit(kernel.delay_mean - 1.0, kernel.scale, DECAY_TAIL_TOL, MAX_DECAY_HORIZON)


def decay_weights_reference(kernel: DecayKernel) -> np.ndarray:
    """Same as :func:`decay_weights`, computed from the closed-form log-pmf."""
    pmf = np.exp(_decay_logpmf_from_zero(np.arange(MAX_DECAY_HORIZON), kernel))
    hit = np.flatnonzero(np.cumsum(pmf) >= 1.0 - DECAY_TAIL_TOL)
    return pmf[: hit[0] + 1] if hit.size else pmf


def decay_horizon(kernel: DecayKernel) -> int:
    return len(decay_weights(kernel))


def decay_pmf(u, kernel: DecayKernel):
    """Untruncated kernel value ``g(u)`` for integer delays ``u >= 1``."""
    u = np.asarray(u)
    if np.any(u < 1):
        raise ValueError("decay kernel is defined for delays u >= 1")
    out = np.exp(_decay_logpmf_from_zero(u - 1, kernel))
    return out if np.ndim(out) else float(out)


def decay_expected_delay(kernel: DecayKernel) -> float:
    return kernel.delay_mean


def decay_tail_prob(k: int, kernel: DecayKernel) -> float:
    """``P(U > k)`` for a delay ``U`` drawn from the kernel."""
    if k < 1:
        raise ValueError("k must be at least 1")
    # survival function of the unshifted NB at k - 1; avoids 1 - sum cancellation
    m = kernel.delay_mean - 1.0
    s = kernel.scale
    return float(nbinom.sf(k - 1, s, s / (s + m)))


def _slice_1d(log_density, x0, logp0, width, lo, hi, rng, max_steps):
    log_y = logp0 + math.log(rng.random())
    # stepping out (Neal 2003, fig. 3), clipped to the bounds
    left = x0 - width * rng.random()
    right = left + width
    j = int(max_steps * rng.random())
    k = max_steps - 1 - j
    left = max(left, lo)
    right = min(right, hi)
    while j > 0 and left > lo and log_density(left) > log_y:
        left = max(left - width, lo)
        j -= 1
    while k > 0 and right < hi and log_density(right) > log_y:
        right = min(right + width, hi)
        k -= 1
    # shrinkage
    while True:
        x1 = left + (right - left) * rng.random()
        logp1 = log_density(x1)
        if logp1 > log_y:
            return x1, logp1
        if x1 < x0:
            left = x1
        elif x1 > x0:
            right = x1
        else:
            return x0, logp0


def slice_sample(
    log_density: Callable[[float], float],
    current: float,
    width: float = 1.0,
    bounds: tuple[float, float] = (-math.inf, math.inf),
    rng: np.random.Generator | None = None,
    max_steps: int = 50,
    logp: float | None = None,
    return_logp: bool = False,
):
    """One univariate slice-sampling update with stepping out and shrinkage.

    Points outside ``bounds`` are never evaluated. Pass ``logp`` to reuse a
    cached ``log_density(current)``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    lo, hi = bounds
    if not lo <= current <= hi:
        raise ValueError(f"current point {current} outside bounds {bounds}")
    if logp is None:
        logp = log_density(current)
    if not math.isfinite(logp):
        raise ValueError(f"log-density is not finite at the current point {current}")
    if hi - lo <= 0:
        return (current, logp) if return_logp else current
    x, lp = _slice_1d(log_density, current, logp, width, lo, hi, rng, max_steps)
    return (x, lp) if return_logp else x


def random_direction(dim: int, rng: np.random.Generator) -> np.ndarray:
    d = rng.standard_normal(dim)
    return d / np.linalg.norm(d)


def hit_and_run_step(
    log_density: Callable[[np.ndarray], float],
    current,
    rng: np.random.Generator,
    width: float = 1.0,
    logp: float | None = None,
    return_logp: bool = False,
):
    """Slice-sample along a uniformly random line through ``current``."""
    x0 = np.asarray(current, dtype=float)
    d = random_direction(x0.size, rng)
    r, lp = slice_sample(
        lambda r: log_density(x0 + r * d), 0.0, width=width, rng=rng, logp=logp, return_logp=True
    )
    x = x0 + r * d
    return (x, lp) if return_logp else x
