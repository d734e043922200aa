"""Forward simulation from known parameters.

Two constructions are provided: the day-by-day hierarchical form and the
cluster (immigrant/offspring) form. They agree in mean; their daily count
distributions are not claimed to be identical.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, build_basis, constant_spec
from .distributions import decay_weights
from .model import EventSeries, ModelParams, diffusion_rate, excitation_coeffs

DEFAULT_START = dt.date(2000, 1, 1)


class ExplosiveRegimeError(RuntimeError):
    """Raised when the mean offspring number is at least one."""


@dataclass(frozen=True)
class FatalitySampler:
    """Distribution of fatalities per event.

    The default is zero-inflated geometric: zero with probability
    ``p_zero``, otherwise ``1 + Geometric`` with mean ``mean_nonzero``.
    Passing ``table`` (pmf over 0, 1, 2, ...) overrides it.
    """

    p_zero: float = 0.4
    mean_nonzero: float = 4.0
    table: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.table is not None:
            t = np.asarray(self.table, dtype=float)
            if np.any(t < 0) or not np.isclose(t.sum(), 1.0):
                raise ValueError("fatality table must be a normalised pmf")
        elif not (0 <= self.p_zero <= 1 and self.mean_nonzero >= 1):
            raise ValueError("invalid zero-inflated geometric parameters")

    def sample(self, n: int, rng) -> np.ndarray:
        if self.table is not None:
            return rng.choice(len(self.table), size=n, p=np.asarray(self.table))
        nonzero = rng.random(n) >= self.p_zero
        # numpy's geometric lives on {1, 2, ...}
        f = rng.geometric(1.0 / self.mean_nonzero, size=n)
        return np.where(nonzero, f, 0).astype(np.int64)

    def pmf(self, tol: float = 1e-13) -> np.ndarray:
        """Pmf over 0..F with the neglected tail mass below ``tol``."""
        if self.table is not None:
            return np.asarray(self.table, dtype=float)
        q = 1.0 - 1.0 / self.mean_nonzero
        F = 1 if q == 0 else int(np.ceil(np.log(tol) / np.log(q))) + 1
        k = np.arange(1, F + 1)
        geo = (1.0 - q) * q ** (k - 1)
        return np.r_[self.p_zero, (1.0 - self.p_zero) * geo]


@dataclass
class SimConfig:
    T: int
    params: ModelParams
    time_spec: BasisSpec | None = None
    fatality_spec: BasisSpec | None = None
    fatality_sampler: FatalitySampler = field(default_factory=FatalitySampler)
    rng_seed: int = 0
    record_truth: bool = True
    start_date: dt.date = DEFAULT_START
    allow_explosive: bool = False
    max_events: int = 5_000_000

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.time_spec is None:
            self.time_spec = constant_spec(0.0, max(self.T - 1, 1.0))
        if self.fatality_spec is None:
            self.fatality_spec = constant_spec(0.0, 1.0)
        if self.time_spec.n_basis != self.params.beta.size:
            raise ValueError("beta length does not match the time basis")
        if self.fatality_spec.n_basis != self.params.eta.size:
            raise ValueError("eta length does not match the fatality basis")


@dataclass
class SimTruth:
    Yd: np.ndarray
    Yc: np.ndarray
    lam_c: np.ndarray | None = None
    event_day: np.ndarray | None = None
    event_fatalities: np.ndarray | None = None
    # parent event index per event, -1 for immigrants (branching only)
    parent: np.ndarray | None = None


def delta_of_fatalities(eta, fatality_spec: BasisSpec, fatalities) -> np.ndarray:
    """Excitation as a function of fatalities; ``ln(f+1)`` is clamped into the basis domain."""
    lo, hi = fatality_spec.domain
    x = np.clip(np.log1p(np.asarray(fatalities, dtype=float)), lo, hi)
    return excitation_coeffs(eta, build_basis(fatality_spec, x))


def _diffusion_path(config: SimConfig) -> np.ndarray:
    lo, hi = config.time_spec.domain
    days = np.clip(np.arange(config.T, dtype=float), lo, hi)
    return diffusion_rate(config.params.beta, build_basis(config.time_spec, days))


def branching_ratio(params: ModelParams, fatality_distribution: FatalitySampler | None = None,
                    fatality_spec: BasisSpec | None = None) -> float:
    """Mean offspring number per event, averaged over the fatality distribution."""
    if params.eta.size == 1 and (fatality_spec is None or fatality_spec.n_basis == 1):
        return float(np.exp(params.eta[0]))
    if fatality_spec is None:
        raise ValueError("a fatality basis is needed for fatality-dependent excitation")
    pmf = (fatality_distribution or FatalitySampler()).pmf()
    delta = delta_of_fatalities(params.eta, fatality_spec, np.arange(pmf.size))
    return float(pmf @ delta)


def simulate_hierarchical(config: SimConfig):
    """Day-by-day draw from the convolution model; returns ``(series, truth)``."""
    rng = np.random.default_rng(config.rng_seed)
    p = config.params
    T = config.T
    lam_d = _diffusion_path(config)
    g = decay_weights(p.kernel)
    U = g.size
    mu = np.zeros(T + U)
    Yd = np.zeros(T, dtype=np.int64)
    Yc = np.zeros(T, dtype=np.int64)
    lam_c = np.zeros(T)
    fat = np.zeros(T, dtype=np.int64)
    event_day, event_fat = [], []
    s2 = p.sigma2
    total = 0
    for t in range(T):
        if mu[t] > 0:
            lam_c[t] = rng.gamma(s2, mu[t] / s2)
            Yc[t] = rng.poisson(lam_c[t])
        Yd[t] = rng.poisson(lam_d[t])
        n = Yd[t] + Yc[t]
        total += n
        if total > config.max_events:
            raise ExplosiveRegimeError(f"event count exceeded {config.max_events} by day {t}")
        if n:
            f = config.fatality_sampler.sample(n, rng)
            fat[t] = f.sum()
            event_day.append(np.full(n, t))
            event_fat.append(f)
            delta = delta_of_fatalities(p.eta, config.fatality_spec, fat[t : t + 1])[0]
            mu[t + 1 : t + 1 + U] += delta * n * g
    series = EventSeries(config.start_date, Yd + Yc, fat)
    truth = SimTruth(
        Yd,
        Yc,
        lam_c,
        np.concatenate(event_day) if event_day else np.zeros(0, dtype=np.int64),
        np.concatenate(event_fat) if event_fat else np.zeros(0, dtype=np.int64),
    )
    return series, truth


def simulate_branching(config: SimConfig):
    """Cluster construction: Poisson immigrants, each event spawning NB offspring."""
    p = config.params
    ratio = branching_ratio(p, config.fatality_sampler, config.fatality_spec)
    if ratio >= 1.0 and not config.allow_explosive:
        raise ExplosiveRegimeError(
            f"explosive regime: mean offspring per event is {ratio:.4g} >= 1; "
            "the cluster process has no stationary version"
        )
    rng = np.random.default_rng(config.rng_seed)
    T = config.T
    lam_d = _diffusion_path(config)
    g = decay_weights(p.kernel)
    g = g / g.sum()
    imm = rng.poisson(lam_d)
    days = [np.repeat(np.arange(T), imm)]
    parents = [np.full(days[0].size, -1, dtype=np.int64)]
    fats = [config.fatality_sampler.sample(days[0].size, rng)]
    offset = 0
    gen_days, gen_fat = days[0], fats[0]
    total = gen_days.size
    while gen_days.size:
        delta = delta_of_fatalities(p.eta, config.fatality_spec, gen_fat)
        # NB(mean delta, scale sigma2) offspring via the gamma-Poisson mixture
        lam = rng.gamma(p.sigma2, delta / p.sigma2)
        n_kids = rng.poisson(lam)
        parent_idx = np.repeat(np.arange(offset, offset + gen_days.size), n_kids)
        delays = 1 + rng.choice(g.size, size=parent_idx.size, p=g)
        kid_days = np.repeat(gen_days, n_kids) + delays
        keep = kid_days < T
        offset += gen_days.size
        gen_days = kid_days[keep]
        gen_fat = config.fatality_sampler.sample(gen_days.size, rng)
        total += gen_days.size
        if total > config.max_events:
            raise ExplosiveRegimeError(f"event count exceeded {config.max_events}")
        days.append(gen_days)
        parents.append(parent_idx[keep])
        fats.append(gen_fat)
    day = np.concatenate(days)
    parent = np.concatenate(parents)
    fat = np.concatenate(fats)
    counts = np.bincount(day, minlength=T)
    fat_day = np.bincount(day, weights=fat, minlength=T).astype(np.int64)
    Yd = np.bincount(day[parent < 0], minlength=T)
    series = EventSeries(config.start_date, counts, fat_day)
    truth = SimTruth(Yd, counts - Yd, None, day, fat, parent)
    return series, truth


def cluster_sizes(truth: SimTruth) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(root_day, size)`` for every cluster rooted at an immigrant."""
    parent = truth.parent
    idx = np.arange(parent.size)
    root = np.where(parent < 0, idx, parent)
    while True:  # pointer jumping up to the immigrant ancestor
        nxt = root[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    roots = np.flatnonzero(parent < 0)
    sizes = np.bincount(root, minlength=parent.size)[roots]
    return truth.event_day[roots], sizes
