"""Posterior summaries and convergence diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import build_basis
from .distributions import decay_pmf, decay_tail_prob, decay_weights
from .model import ModelParams, diffusion_rate, excitation_coeffs

QUANTILES = (0.025, 0.5, 0.975)
RHAT_LIMIT = 1.05


class SummaryError(ValueError):
    pass


@dataclass
class Band:
    """Pointwise lower/median/upper curve over ``grid``."""

    grid: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_samples(cls, grid, samples) -> "Band":
        lo, med, hi = np.quantile(np.asarray(samples, dtype=float), QUANTILES, axis=0)
        return cls(np.asarray(grid), lo, med, hi)

    def rows(self):
        return zip(self.grid, self.lower, self.median, self.upper)


@dataclass
class PosteriorSummary:
    diffusion: Band
    excitation: Band
    decay: Band
    expected_delay: Band
    tail_probs: dict[int, Band] = field(default_factory=dict)

    @property
    def explosive(self) -> bool:
        """True when the median excitation exceeds one anywhere on the fatality grid."""
        return bool(np.any(self.excitation.median > 1.0))


def _pool(draws) -> list[ModelParams]:
    if hasattr(draws, "params"):
        return list(draws.params)
    out = []
    for d in draws:
        out.extend(d.params if hasattr(d, "params") else [d])
    return out


def summarize(draws, series, X, W, fatality_grid=None, min_draws: int = 100, tail_days=(3, 4)) -> PosteriorSummary:
    """Quantile bands of the diffusion rate, excitation curve and decay kernel.

    ``draws`` is a :class:`PosteriorDraws`, a list of them (pooled), or a list
    of :class:`ModelParams`.
    """
    params = _pool(draws)
    if len(params) < min_draws:
        raise SummaryError(f"need at least {min_draws} draws, got {len(params)}")
    T = len(series)
    Xv = getattr(X, "values", X)
    lam_d = np.vstack([diffusion_rate(p.beta, Xv) for p in params])
    diffusion = Band.from_samples(np.arange(T), lam_d)

    if fatality_grid is None:
        fmax = int(np.max(series.fatalities)) if T else 0
        fatality_grid = np.unique(np.r_[np.arange(min(fmax, 10) + 1), np.geomspace(1, max(fmax, 1), 40).round()])
    fatality_grid = np.asarray(fatality_grid, dtype=float)
    spec = W.spec
    lo, hi = spec.domain
    Wg = build_basis(spec, np.clip(np.log1p(fatality_grid), lo, hi))
    delta = np.vstack([excitation_coeffs(p.eta, Wg) for p in params])
    excitation = Band.from_samples(fatality_grid, delta)

    U = max(len(decay_weights(p.kernel)) for p in params)
    u = np.arange(1, U + 1)
    decay = Band.from_samples(u, np.vstack([decay_pmf(u, p.kernel) for p in params]))
    delay = Band.from_samples([0], np.array([[p.kernel.delay_mean] for p in params]))
    tails = {
        k: Band.from_samples([k], np.array([[decay_tail_prob(k, p.kernel)] for p in params])) for k in tail_days
    }
    return PosteriorSummary(diffusion, excitation, decay, delay, tails)


def attribution_summary(draws) -> np.ndarray:
    """Posterior mean share of each day's events attributed to contagion."""
    latents = []
    for d in draws if isinstance(draws, (list, tuple)) else [draws]:
        latents.extend(d.latents)
    if not latents:
        raise SummaryError("no stored latent states; run with store_latents")
    frac = [lt.Yc / np.maximum(lt.Yd + lt.Yc, 1) for lt in latents]
    return np.mean(frac, axis=0)


def batch_means_ess(x) -> float:
    """Effective sample size by non-overlapping batch means (batch size ``floor(sqrt(n))``)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    var = x.var(ddof=1) if n > 1 else 0.0
    if n < 4 or var == 0:
        return 1.0
    b = int(np.sqrt(n))
    a = n // b
    means = x[: a * b].reshape(a, b).mean(axis=1)
    var_bm = b * means.var(ddof=1)
    if var_bm <= 0:
        return float(n)
    return float(n * var / var_bm)


def split_rhat(chains) -> float:
    """Split-chain potential scale reduction for an ``(m, n)`` array."""
    c = np.asarray(chains, dtype=float)
    if c.ndim == 1:
        c = c[None, :]
    n = c.shape[1] // 2
    if n < 2:
        return float("nan")
    halves = np.concatenate([c[:, :n], c[:, -n:]], axis=0)
    within = halves.var(axis=1, ddof=1).mean()
    between = n * halves.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float("inf")
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


@dataclass
class Diagnostics:
    names: list[str]
    ess: np.ndarray
    rhat: np.ndarray
    flags: dict[str, list[str]]
    acceptance: dict

    def report(self) -> str:
        lines = [f"{'parameter':<14}{'ess':>12}{'split_rhat':>14}  flags"]
        for i, name in enumerate(self.names):
            lines.append(f"{name:<14}{self.ess[i]:>12.1f}{self.rhat[i]:>14.4f}  {','.join(self.flags.get(name, []))}")
        lines.append("")
        lines.append("re-sampling acceptance per chain:")
        for chain, stats in self.acceptance.items():
            parts = [f"{b}={s['rate']:.3f} (step {s['step']:.4g})" for b, s in stats.items()]
            lines.append(f"  chain {chain}: " + ", ".join(parts))
        return "\n".join(lines) + "\n"


def ess_and_diagnostics(chains) -> Diagnostics:
    """Per-parameter ESS (summed over chains) and split R-hat across chains."""
    if hasattr(chains, "params"):
        chains = [chains]
    if not chains:
        raise SummaryError("no chains")
    names = chains[0].names
    arrays = [c.array() for c in chains]
    n = min(a.shape[0] for a in arrays)
    stacked = np.stack([a[:n] for a in arrays])  # (chain, draw, param)
    ess = np.array([sum(batch_means_ess(a[:, j]) for a in arrays) for j in range(len(names))])
    flags: dict[str, list[str]] = {}
    duplicate = len(arrays) > 1 and all(np.array_equal(arrays[0], a) for a in arrays[1:])
    rhat = np.full(len(names), np.nan)
    for j, name in enumerate(names):
        f = []
        col = stacked[:, :, j]
        if np.all(col == col.flat[0]):
            f.append("constant")
        if len(arrays) >= 2:
            rhat[j] = split_rhat(col)
            if rhat[j] > RHAT_LIMIT:
                f.append("rhat")
        else:
            f.append("single-chain")
        if duplicate:
            f.append("duplicate-chains")
        if f:
            flags[name] = f
    acceptance = {i: c.accept_stats for i, c in enumerate(chains)}
    return Diagnostics(names, ess, rhat, flags, acceptance)

